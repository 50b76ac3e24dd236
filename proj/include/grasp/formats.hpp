#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "grasp/cloud.hpp"
#include "grasp/label.hpp"

namespace grasp {

struct ManifestRow {
  std::string path;
  GraspLabel label;
  std::string object_id;
  std::string view_id;
  std::string source;
};

/// Rows binding cloud files to labels. Paths are unique; row order is kept.
struct DatasetIndex {
  std::vector<ManifestRow> rows;

  std::size_t size() const { return rows.size(); }
};

using ClassCounts = std::array<std::size_t, kNumClasses>;

// ASCII PCD v0.7 with FIELDS "x y z" or "x y z normal_x normal_y normal_z".
PointCloud parse_pcd(std::string_view bytes);
std::string write_pcd(const PointCloud& cloud);

DatasetIndex load_manifest(std::string_view bytes);
std::string write_manifest(const DatasetIndex& index);

ClassCounts class_histogram(const DatasetIndex& index);

// File helpers; failures raise Error(Errc::Io).
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

PointCloud load_pcd_file(const std::filesystem::path& path);

}  // namespace grasp
