#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "grasp/label.hpp"
#include "grasp/random.hpp"

namespace grasp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// A single-view point cloud. `normals` is either empty or the same length as
/// `points`, holding unit vectors.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::optional<GraspLabel> label;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }

  /// Throws Error if any invariant is violated (non-empty, finite
  /// coordinates, normals matching in length and unit within 1e-6).
  void validate() const;
};

struct CovarianceEigen {
  Mat3 covariance;
  Vec3 eigenvalues;   // ascending
  Mat3 eigenvectors;  // column j pairs with eigenvalues[j]
};

struct NormalEstimationParams {
  int k = 100;
  Vec3 viewpoint = Vec3::Zero();
};

enum class Axis { X = 0, Y = 1, Z = 2 };

struct AugmentationParams {
  double jitter_sigma = 0.01;
  double jitter_clip = 0.05;
  Axis up_axis = Axis::Y;
};

struct Normalized {
  PointCloud cloud;
  Vec3 shift;
  double scale;
};

Vec3 centroid(const PointCloud& cloud);

/// Zero-mean, max radius one. Normals pass through untouched.
Normalized normalize_unit_sphere(const PointCloud& cloud);

/// Indices of the k nearest points to points[query_index], the query
/// included, ordered by (distance, index).
std::vector<std::size_t> knn(const PointCloud& cloud, std::size_t query_index,
                             std::size_t k);

CovarianceEigen covariance_eigen(const PointCloud& cloud,
                                 const std::vector<std::size_t>& neighbor_indices);

/// Symmetric 3x3 eigen-decomposition by cyclic Jacobi rotations. Eigenvalues
/// ascending; each eigenvector's largest-magnitude component is positive.
void symmetric_eigen3(const Mat3& matrix, Vec3& eigenvalues, Mat3& eigenvectors);

/// Normal of each point as the least-variance direction of its k-neighborhood
/// covariance, flipped to face params.viewpoint.
PointCloud estimate_normals(const PointCloud& cloud,
                            const NormalEstimationParams& params = {});

/// estimate_normals() evaluated only at the listed point indices, in order.
std::vector<Vec3> estimate_normals_at(const PointCloud& cloud,
                                      std::span<const std::size_t> indices,
                                      const NormalEstimationParams& params = {});

PointCloud sample_uniform(const PointCloud& cloud, std::size_t m, Rng& rng);

/// Source indices chosen by sample_uniform, exposed for coverage checks.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m, Rng& rng);

PointCloud augment(const PointCloud& cloud, const AugmentationParams& params,
                   Rng& rng);

Mat3 rotation_about(Axis axis, double angle);

}  // namespace grasp
