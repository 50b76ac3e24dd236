#pragma once

#include <Eigen/Geometry>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "grasp/cloud.hpp"
#include "grasp/formats.hpp"
#include "grasp/random.hpp"

namespace grasp {

enum class ShapeKind { Box, Cylinder, Sphere };

struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();
};

// Dimensions in meters. Box: full extents along x, y, z. Cylinder: radius,
// height along y, unused (must still be positive). Sphere: radius, then two
// unused entries.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::Box;
  Vec3 dimensions = Vec3::Constant(0.1);
  Pose pose;
  double surface_density = 1e5;  // points per square meter

  double surface_area() const;
  void validate() const;
};

/// Area-uniform surface samples with outward analytic normals, posed. The
/// point count is round(area * density), at least one.
PointCloud generate_primitive(const ShapeSpec& spec, Rng& rng);

/// Keeps the points visible from `viewpoint`: points are projected onto a
/// grid_resolution^2 image facing the centroid, and in every cell only those
/// within 1% depth of the cell's nearest point survive. Surviving normals are
/// flipped to face the viewpoint. Input order is preserved.
PointCloud single_view_cull(const PointCloud& cloud, const Vec3& viewpoint,
                            int grid_resolution);

struct SynthConfig {
  std::size_t per_class = 100;
  double noise_sigma = 0.002;
  double camera_distance = 0.6;
  int grid_resolution = 256;
  std::uint64_t seed = 0;
  std::size_t max_points = 4096;  // culled views are subsampled to this
  // 0 keeps the class recipes well apart; toward 1 their aspect ratios and
  // orientations drift into each other's ranges.
  double overlap = 0.0;

  void validate() const;
};

struct SynthDataset {
  std::vector<PointCloud> clouds;  // xyz only, labeled
  DatasetIndex index;              // paths relative to the dataset root
};

/// One culled, noisy view per object. Points are relative to the camera
/// position (the origin), on world axes with +y up.
SynthDataset generate_dataset(const SynthConfig& config);

/// Writes every cloud under `root` at its manifest path, then
/// root/manifest.csv.
void write_dataset(const SynthDataset& dataset, const std::filesystem::path& root);

}  // namespace grasp
