#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "grasp/cloud.hpp"

namespace grasp {

// Static 3-d tree over a borrowed point array. The points must outlive the
// tree and stay unmodified.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  /// k nearest neighbours of `query`, sorted by (squared distance, index).
  /// Requires 1 <= k <= size().
  std::vector<std::size_t> nearest(const Vec3& query, std::size_t k) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::size_t begin;
    std::size_t end;
    int axis;        // -1 for leaves
    double split;
    std::size_t left;
    std::size_t right;
  };

  std::size_t build(std::size_t begin, std::size_t end);

  std::span<const Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace grasp
