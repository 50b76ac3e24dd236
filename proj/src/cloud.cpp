#include "grasp/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "grasp/error.hpp"
#include "grasp/kdtree.hpp"
#include "grasp/parallel.hpp"

namespace grasp {

namespace {

bool finite(const Vec3& v) { return v.allFinite(); }

}  // namespace

void PointCloud::validate() const {
  if (points.empty()) throw Error(Errc::EmptyCloud, "point cloud has no points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!finite(points[i])) {
      throw Error(Errc::NonFiniteValue,
                  "non-finite coordinate at point " + std::to_string(i),
                  static_cast<std::int64_t>(i));
    }
  }
  if (normals.empty()) return;
  if (normals.size() != points.size()) {
    throw Error(Errc::ShapeMismatch, "normals/points length mismatch");
  }
  for (std::size_t i = 0; i < normals.size(); ++i) {
    if (!finite(normals[i]) || std::abs(normals[i].norm() - 1.0) > 1e-6) {
      throw Error(Errc::InvalidNormal,
                  "normal " + std::to_string(i) + " is not unit length",
                  static_cast<std::int64_t>(i));
    }
  }
}

Vec3 centroid(const PointCloud& cloud) {
  if (cloud.empty()) throw Error(Errc::EmptyCloud, "centroid of empty cloud");
  Vec3 sum = Vec3::Zero();
  for (const auto& p : cloud.points) sum += p;
  return sum / static_cast<double>(cloud.size());
}

Normalized normalize_unit_sphere(const PointCloud& cloud) {
  const Vec3 shift = centroid(cloud);
  double radius = 0.0;
  for (const auto& p : cloud.points) radius = std::max(radius, (p - shift).norm());
  if (!(radius > 0.0)) {
    throw Error(Errc::DegenerateCloud, "all points coincide; cannot normalize");
  }
  Normalized out{cloud, shift, radius};
  for (auto& p : out.cloud.points) p = (p - shift) / radius;
  // The farthest point can land an ulp outside the unit sphere; pull it in.
  auto farthest = [&] {
    double m = 0.0;
    for (const auto& p : out.cloud.points) m = std::max(m, p.norm());
    return m;
  };
  while (farthest() > 1.0) {
    for (auto& p : out.cloud.points) p *= 1.0 - std::numeric_limits<double>::epsilon();
  }
  return out;
}

std::vector<std::size_t> knn(const PointCloud& cloud, std::size_t query_index,
                             std::size_t k) {
  if (query_index >= cloud.size()) {
    throw Error(Errc::IndexOutOfRange,
                "query index " + std::to_string(query_index) + " out of range",
                static_cast<std::int64_t>(query_index));
  }
  if (k == 0 || k > cloud.size()) {
    throw Error(Errc::KTooLarge, "k=" + std::to_string(k) + " for " +
                                     std::to_string(cloud.size()) + " points");
  }
  const KdTree tree(cloud.points);
  return tree.nearest(cloud.points[query_index], k);
}

void symmetric_eigen3(const Mat3& matrix, Vec3& eigenvalues, Mat3& eigenvectors) {
  Mat3 a = 0.5 * (matrix + matrix.transpose());
  Mat3 v = Mat3::Identity();
  const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);

  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
    if (off <= 1e-34 * scale * scale) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t;
        if (std::abs(theta) > 1e150) {
          t = 0.5 / theta;
        } else {
          t = (theta >= 0 ? 1.0 : -1.0) /
              (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        Mat3 rot = Mat3::Identity();
        rot(p, p) = c;
        rot(q, q) = c;
        rot(p, q) = s;
        rot(q, p) = -s;
        a = rot.transpose() * a * rot;
        a(p, q) = a(q, p) = 0.0;
        v = v * rot;
      }
    }
  }

  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return a(i, i) < a(j, j); });
  for (int j = 0; j < 3; ++j) {
    eigenvalues[j] = a(order[j], order[j]);
    Vec3 col = v.col(order[j]).normalized();
    int big = 0;
    col.cwiseAbs().maxCoeff(&big);
    if (col[big] < 0) col = -col;
    eigenvectors.col(j) = col;
  }
}

CovarianceEigen covariance_eigen(const PointCloud& cloud,
                                 const std::vector<std::size_t>& neighbor_indices) {
  if (neighbor_indices.size() < 3) {
    throw Error(Errc::TooFewNeighbors,
                "covariance needs at least 3 neighbours, got " +
                    std::to_string(neighbor_indices.size()));
  }
  Vec3 mean = Vec3::Zero();
  for (std::size_t idx : neighbor_indices) {
    if (idx >= cloud.size()) {
      throw Error(Errc::IndexOutOfRange, "neighbour index " + std::to_string(idx),
                  static_cast<std::int64_t>(idx));
    }
    mean += cloud.points[idx];
  }
  const double k = static_cast<double>(neighbor_indices.size());
  mean /= k;

  Mat3 cov = Mat3::Zero();
  for (std::size_t idx : neighbor_indices) {
    const Vec3 d = cloud.points[idx] - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= k;

  CovarianceEigen out;
  out.covariance = cov;
  symmetric_eigen3(cov, out.eigenvalues, out.eigenvectors);
  return out;
}

std::vector<Vec3> estimate_normals_at(const PointCloud& cloud,
                                      std::span<const std::size_t> indices,
                                      const NormalEstimationParams& params) {
  if (cloud.empty()) throw Error(Errc::EmptyCloud, "estimate_normals on empty cloud");
  if (params.k < 3) {
    throw Error(Errc::InvalidArgument, "normal estimation needs k >= 3");
  }
  const auto k = static_cast<std::size_t>(params.k);
  if (k >= cloud.size()) {
    throw Error(Errc::KTooLarge, "k=" + std::to_string(k) + " requires more than " +
                                     std::to_string(k) + " points, cloud has " +
                                     std::to_string(cloud.size()));
  }
  for (std::size_t i : indices) {
    if (i >= cloud.size()) {
      throw Error(Errc::IndexOutOfRange, "point index " + std::to_string(i) + " out of range",
                  static_cast<std::int64_t>(i));
    }
  }

  const KdTree tree(cloud.points);
  std::vector<Vec3> normals(indices.size(), Vec3::Zero());
  // Per-slot failure flags keep error reporting deterministic under threads.
  std::vector<char> degenerate(indices.size(), 0);

  parallel_for(indices.size(), [&](std::size_t j) {
    const std::size_t i = indices[j];
    const auto neighbors = tree.nearest(cloud.points[i], k);
    const CovarianceEigen eig = covariance_eigen(cloud, neighbors);
    if (eig.eigenvalues[0] < 1e-15 && eig.eigenvalues[1] < 1e-15) {
      degenerate[j] = 1;
      return;
    }
    Vec3 normal = eig.eigenvectors.col(0);
    if (normal.dot(params.viewpoint - cloud.points[i]) < 0) normal = -normal;
    normals[j] = normal;
  });

  for (std::size_t j = 0; j < degenerate.size(); ++j) {
    if (degenerate[j]) {
      throw Error(Errc::DegenerateNeighborhood,
                  "collinear or coincident neighbourhood at point " +
                      std::to_string(indices[j]),
                  static_cast<std::int64_t>(indices[j]));
    }
  }
  return normals;
}

PointCloud estimate_normals(const PointCloud& cloud, const NormalEstimationParams& params) {
  std::vector<std::size_t> all(cloud.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  PointCloud out = cloud;
  out.normals = estimate_normals_at(cloud, all, params);
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n >= m) {
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(m);
    return idx;
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  idx.reserve(m);
  while (idx.size() < m) idx.push_back(pick(rng));
  return idx;
}

PointCloud sample_uniform(const PointCloud& cloud, std::size_t m, Rng& rng) {
  if (cloud.empty()) throw Error(Errc::EmptyCloud, "cannot sample an empty cloud");
  if (m == 0) throw Error(Errc::InvalidArgument, "sample size must be positive");
  const auto idx = sample_indices(cloud.size(), m, rng);
  PointCloud out;
  out.label = cloud.label;
  out.points.reserve(m);
  for (std::size_t i : idx) out.points.push_back(cloud.points[i]);
  if (cloud.has_normals()) {
    out.normals.reserve(m);
    for (std::size_t i : idx) out.normals.push_back(cloud.normals[i]);
  }
  return out;
}

Mat3 rotation_about(Axis axis, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Mat3 r = Mat3::Identity();
  switch (axis) {
    case Axis::X:
      r << 1, 0, 0, 0, c, -s, 0, s, c;
      break;
    case Axis::Y:
      r << c, 0, s, 0, 1, 0, -s, 0, c;
      break;
    case Axis::Z:
      r << c, -s, 0, s, c, 0, 0, 0, 1;
      break;
  }
  return r;
}

PointCloud augment(const PointCloud& cloud, const AugmentationParams& params,
                   Rng& rng) {
  if (cloud.empty()) throw Error(Errc::EmptyCloud, "cannot augment an empty cloud");
  if (params.jitter_sigma < 0 || params.jitter_clip < params.jitter_sigma) {
    throw Error(Errc::InvalidArgument, "need 0 <= jitter_sigma <= jitter_clip");
  }
  std::uniform_real_distribution<double> angle_dist(0.0, 2.0 * std::numbers::pi);
  const Mat3 rot = rotation_about(params.up_axis, angle_dist(rng));

  PointCloud out = cloud;
  for (auto& p : out.points) p = rot * p;
  for (auto& n : out.normals) n = (rot * n).normalized();

  if (params.jitter_sigma > 0) {
    std::normal_distribution<double> noise(0.0, params.jitter_sigma);
    for (auto& p : out.points) {
      for (int c = 0; c < 3; ++c) {
        p[c] += std::clamp(noise(rng), -params.jitter_clip, params.jitter_clip);
      }
    }
  }
  return out;
}

}  // namespace grasp
