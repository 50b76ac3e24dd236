#include "grasp/kdtree.hpp"

#include <algorithm>
#include <numeric>
#include <utility>

#include "grasp/error.hpp"

namespace grasp {

namespace {

constexpr std::size_t kLeafSize = 12;

using Candidate = std::pair<double, std::size_t>;  // (squared distance, index)

}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, points_.size());
  }
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back({begin, end, -1, 0.0, 0, 0});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::size_t i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  const double split = points_[order_[mid]][axis];
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<std::size_t> KdTree::nearest(const Vec3& query, std::size_t k) const {
  if (k == 0 || k > points_.size()) {
    throw Error(Errc::KTooLarge, "kd-tree query k=" + std::to_string(k) +
                                     " with " + std::to_string(points_.size()) +
                                     " points");
  }
  // Max-heap on (distance, index): the front is the current worst candidate.
  std::vector<Candidate> heap;
  heap.reserve(k);

  auto visit = [&](auto&& self, std::size_t node_id) -> void {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        const Candidate c{(points_[idx] - query).squaredNorm(), idx};
        if (heap.size() < k) {
          heap.push_back(c);
          std::push_heap(heap.begin(), heap.end());
        } else if (c < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = c;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const double delta = query[node.axis] - node.split;
    const std::size_t near = delta < 0 ? node.left : node.right;
    const std::size_t far = delta < 0 ? node.right : node.left;
    self(self, near);
    // Equal-distance points on the far side may still win the index tie-break.
    if (heap.size() < k || delta * delta <= heap.front().first) self(self, far);
  };
  visit(visit, 0);

  std::sort_heap(heap.begin(), heap.end());
  std::vector<std::size_t> result(heap.size());
  for (std::size_t i = 0; i < heap.size(); ++i) result[i] = heap[i].second;
  return result;
}

}  // namespace grasp
