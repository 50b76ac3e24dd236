#include "grasp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "grasp/error.hpp"
#include "grasp/parallel.hpp"

namespace grasp {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDepthTolerance = 0.01;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec3 random_unit(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Vec3 v(g(rng), g(rng), g(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

struct Sample {
  Vec3 point;
  Vec3 normal;
};

Sample sample_box(const Vec3& d, Rng& rng) {
  // Faces come in pairs normal to x, y, z with areas dy*dz, dx*dz, dx*dy.
  const std::array<double, 3> pair_area = {d.y() * d.z(), d.x() * d.z(), d.x() * d.y()};
  std::discrete_distribution<int> pick_axis(pair_area.begin(), pair_area.end());
  const int axis = pick_axis(rng);
  const double sign = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
  Sample s;
  for (int c = 0; c < 3; ++c) s.point[c] = uniform(rng, -0.5 * d[c], 0.5 * d[c]);
  s.point[axis] = sign * 0.5 * d[axis];
  s.normal = Vec3::Zero();
  s.normal[axis] = sign;
  return s;
}

Sample sample_cylinder(double r, double h, Rng& rng) {
  const double lateral = 2.0 * kPi * r * h;
  const double cap = kPi * r * r;
  const double u = uniform(rng, 0.0, lateral + 2.0 * cap);
  const double theta = uniform(rng, 0.0, 2.0 * kPi);
  Sample s;
  if (u < lateral) {
    s.point = Vec3(r * std::cos(theta), uniform(rng, -0.5 * h, 0.5 * h), r * std::sin(theta));
    s.normal = Vec3(std::cos(theta), 0.0, std::sin(theta));
  } else {
    const double sign = u < lateral + cap ? 1.0 : -1.0;
    const double rho = r * std::sqrt(uniform(rng, 0.0, 1.0));
    s.point = Vec3(rho * std::cos(theta), sign * 0.5 * h, rho * std::sin(theta));
    s.normal = Vec3(0.0, sign, 0.0);
  }
  return s;
}

// Orthonormal camera basis whose third axis points from the viewpoint to the
// target.
Mat3 camera_basis(const Vec3& forward) {
  const Vec3 helper = std::abs(forward.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
  const Vec3 right = helper.cross(forward).normalized();
  const Vec3 up = forward.cross(right);
  Mat3 basis;
  basis.col(0) = right;
  basis.col(1) = up;
  basis.col(2) = forward;
  return basis;
}

// Class recipes. Every shape is centered at the origin before posing; the
// overlap knob widens aspect ranges and tilts toward the neighbouring class.
ShapeSpec recipe(GraspLabel label, double overlap, Rng& rng) {
  ShapeSpec spec;
  Eigen::Quaterniond rot(Eigen::AngleAxisd(uniform(rng, 0.0, 2.0 * kPi), Vec3::UnitY()));
  const bool first_family = std::bernoulli_distribution(0.5)(rng);
  switch (label) {
    case GraspLabel::Pinch: {
      // Thin plate lying flat, thin along y.
      const double length = uniform(rng, 0.08, 0.15);
      const double width = length * uniform(rng, 0.6 - 0.3 * overlap, 1.0);
      const double thickness = uniform(rng, 0.004, 0.025 + 0.03 * overlap);
      spec.kind = ShapeKind::Box;
      spec.dimensions = Vec3(length, thickness, width);
      break;
    }
    case GraspLabel::Tripod: {
      const double diameter = uniform(rng, 0.03, 0.06);
      if (first_family) {
        // Short cylinder standing on its cap.
        spec.kind = ShapeKind::Cylinder;
        const double height = diameter * uniform(rng, 0.5, 1.0 + 0.8 * overlap);
        spec.dimensions = Vec3(0.5 * diameter, height, 0.5 * diameter);
      } else {
        spec.kind = ShapeKind::Sphere;
        spec.dimensions = Vec3::Constant(0.5 * diameter);
      }
      break;
    }
    case GraspLabel::PalmarWristNeutral: {
      const double width = uniform(rng, 0.04, 0.08);
      const double depth = first_family ? width * uniform(rng, 0.5, 1.0) : width;
      // Height is a multiple of the horizontal diagonal, so the world x
      // extent stays well below the y extent under any yaw.
      const double diagonal = std::hypot(width, depth);
      const double height = diagonal * uniform(rng, 2.0 - 0.4 * overlap, 3.0);
      if (first_family) {
        spec.kind = ShapeKind::Box;
        spec.dimensions = Vec3(width, height, depth);
      } else {
        spec.kind = ShapeKind::Cylinder;
        spec.dimensions = Vec3(0.5 * width, height, 0.5 * width);
      }
      break;
    }
    case GraspLabel::PalmarWristPronated: {
      const double length = uniform(rng, 0.14, 0.25);
      const double diameter = length * uniform(rng, 0.15, 0.3 + 0.3 * overlap);
      const double tilt = uniform(rng, -1.0, 1.0) * overlap * kPi / 6.0;
      // Long axis along x: cylinders are built along y and laid down.
      const Eigen::Quaterniond lay(Eigen::AngleAxisd(kPi / 2.0 - tilt, Vec3::UnitZ()));
      if (first_family) {
        spec.kind = ShapeKind::Box;
        const Eigen::Quaterniond t(Eigen::AngleAxisd(tilt, Vec3::UnitZ()));
        spec.dimensions = Vec3(length, diameter, diameter * uniform(rng, 0.7, 1.0));
        rot = rot * t;
      } else {
        spec.kind = ShapeKind::Cylinder;
        spec.dimensions = Vec3(0.5 * diameter, length, 0.5 * diameter);
        rot = rot * lay;
      }
      break;
    }
  }
  spec.pose.rotation = rot;
  return spec;
}

}  // namespace

double ShapeSpec::surface_area() const {
  const Vec3& d = dimensions;
  switch (kind) {
    case ShapeKind::Box:
      return 2.0 * (d.x() * d.y() + d.y() * d.z() + d.x() * d.z());
    case ShapeKind::Cylinder:
      return 2.0 * kPi * d.x() * d.y() + 2.0 * kPi * d.x() * d.x();
    case ShapeKind::Sphere:
      return 4.0 * kPi * d.x() * d.x();
  }
  return 0.0;
}

void ShapeSpec::validate() const {
  for (int c = 0; c < 3; ++c) {
    if (!(dimensions[c] > 0.0) || !std::isfinite(dimensions[c])) {
      throw Error(Errc::InvalidArgument, "shape dimensions must be positive and finite");
    }
  }
  if (std::abs(pose.rotation.norm() - 1.0) > 1e-9) {
    throw Error(Errc::InvalidArgument, "pose rotation must be a unit quaternion");
  }
  if (!pose.translation.allFinite()) {
    throw Error(Errc::InvalidArgument, "pose translation must be finite");
  }
  if (!(surface_density > 0.0) || !std::isfinite(surface_density)) {
    throw Error(Errc::InvalidArgument, "surface density must be positive");
  }
}

PointCloud generate_primitive(const ShapeSpec& spec, Rng& rng) {
  spec.validate();
  const auto count = static_cast<std::size_t>(
      std::max(1.0, std::round(spec.surface_area() * spec.surface_density)));
  const Mat3 rot = spec.pose.rotation.toRotationMatrix();
  PointCloud cloud;
  cloud.points.reserve(count);
  cloud.normals.reserve(count);
  const Vec3& d = spec.dimensions;
  for (std::size_t i = 0; i < count; ++i) {
    Sample s;
    switch (spec.kind) {
      case ShapeKind::Box:
        s = sample_box(d, rng);
        break;
      case ShapeKind::Cylinder:
        s = sample_cylinder(d.x(), d.y(), rng);
        break;
      case ShapeKind::Sphere:
        s.normal = random_unit(rng);
        s.point = d.x() * s.normal;
        break;
    }
    cloud.points.push_back(rot * s.point + spec.pose.translation);
    cloud.normals.push_back(rot * s.normal);
  }
  return cloud;
}

PointCloud single_view_cull(const PointCloud& cloud, const Vec3& viewpoint,
                            int grid_resolution) {
  if (cloud.empty()) throw Error(Errc::EmptyCloud, "cannot cull an empty cloud");
  if (grid_resolution < 1) {
    throw Error(Errc::InvalidArgument, "grid resolution must be positive");
  }
  if (!viewpoint.allFinite()) throw Error(Errc::InvalidArgument, "viewpoint must be finite");
  const Vec3 center = centroid(cloud);
  double radius = 0.0;
  for (const auto& p : cloud.points) radius = std::max(radius, (p - center).norm());
  const double distance = (center - viewpoint).norm();
  if (distance <= radius) {
    throw Error(Errc::ViewpointInsideObject,
                "viewpoint lies inside the bounding sphere of the cloud");
  }

  const Mat3 basis = camera_basis((center - viewpoint) / distance);
  // Half-width of the image plane at unit depth: the bounding sphere's cone.
  const double half = std::max(radius / std::sqrt(distance * distance - radius * radius),
                               std::numeric_limits<double>::min());
  const auto res = static_cast<std::size_t>(grid_resolution);

  const std::size_t n = cloud.size();
  std::vector<std::size_t> cell(n);
  std::vector<double> depth(n);
  std::vector<double> nearest(res * res, std::numeric_limits<double>::infinity());
  auto to_cell = [&](double v) {
    const double t = (v / half + 1.0) * 0.5 * static_cast<double>(res);
    return std::min(res - 1, static_cast<std::size_t>(std::max(0.0, t)));
  };
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 q = basis.transpose() * (cloud.points[i] - viewpoint);
    depth[i] = q.z();
    cell[i] = to_cell(q.y() / q.z()) * res + to_cell(q.x() / q.z());
    nearest[cell[i]] = std::min(nearest[cell[i]], depth[i]);
  }

  PointCloud out;
  out.label = cloud.label;
  for (std::size_t i = 0; i < n; ++i) {
    if (depth[i] > nearest[cell[i]] * (1.0 + kDepthTolerance)) continue;
    out.points.push_back(cloud.points[i]);
    if (cloud.has_normals()) {
      Vec3 normal = cloud.normals[i];
      if (normal.dot(viewpoint - cloud.points[i]) < 0.0) normal = -normal;
      out.normals.push_back(normal);
    }
  }
  return out;
}

void SynthConfig::validate() const {
  if (per_class < 1) throw Error(Errc::InvalidConfig, "per_class must be at least 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw Error(Errc::InvalidConfig, "noise_sigma must be non-negative");
  }
  if (!(camera_distance > 0.0) || !std::isfinite(camera_distance)) {
    throw Error(Errc::InvalidConfig, "camera_distance must be positive");
  }
  if (grid_resolution < 16) throw Error(Errc::InvalidConfig, "grid_resolution must be >= 16");
  if (max_points < 1) throw Error(Errc::InvalidConfig, "max_points must be positive");
  if (!(overlap >= 0.0 && overlap <= 1.0)) {
    throw Error(Errc::InvalidConfig, "overlap must lie in [0, 1]");
  }
}

SynthDataset generate_dataset(const SynthConfig& config) {
  config.validate();
  const std::size_t total = config.per_class * kNumClasses;
  SynthDataset out;
  out.clouds.resize(total);
  out.index.rows.resize(total);

  // Dense enough that every image cell under the object sees several
  // surface samples, so back faces always share a cell with a front one.
  const double target_samples =
      3.0 * static_cast<double>(config.grid_resolution) * config.grid_resolution;

  parallel_for(total, [&](std::size_t i) {
    const GraspLabel label = kAllLabels[i / config.per_class];
    const std::size_t ordinal = i % config.per_class;
    Rng rng = derive_rng(config.seed, i);

    ShapeSpec spec = recipe(label, config.overlap, rng);
    spec.pose.translation = Vec3(uniform(rng, -0.02, 0.02), uniform(rng, -0.02, 0.02),
                                 uniform(rng, -0.02, 0.02));
    spec.surface_density = target_samples / spec.surface_area();
    const PointCloud surface = generate_primitive(spec, rng);

    const double azimuth = uniform(rng, 0.0, 2.0 * kPi);
    const double elevation = uniform(rng, 15.0, 60.0) * kPi / 180.0;
    const Vec3 direction(std::cos(elevation) * std::cos(azimuth), std::sin(elevation),
                         std::cos(elevation) * std::sin(azimuth));
    const Vec3 viewpoint = spec.pose.translation + config.camera_distance * direction;
    PointCloud visible = single_view_cull(surface, viewpoint, config.grid_resolution);

    PointCloud cloud;
    cloud.label = label;
    if (visible.size() > config.max_points) {
      auto keep = sample_indices(visible.size(), config.max_points, rng);
      std::sort(keep.begin(), keep.end());
      cloud.points.reserve(keep.size());
      for (std::size_t k : keep) cloud.points.push_back(visible.points[k]);
    } else {
      cloud.points = std::move(visible.points);
    }
    if (config.noise_sigma > 0.0) {
      std::normal_distribution<double> noise(0.0, config.noise_sigma);
      for (auto& p : cloud.points) {
        for (int c = 0; c < 3; ++c) p[c] += noise(rng);
      }
    }
    // Sensor-relative coordinates with world axes kept: the camera sits at
    // the origin, where normal estimation looks for it by default.
    for (auto& p : cloud.points) p -= viewpoint;

    const std::string token(label_token(label));
    std::string ordinal_text = std::to_string(ordinal);
    ordinal_text.insert(0, ordinal_text.size() < 5 ? 5 - ordinal_text.size() : 0, '0');
    ManifestRow& row = out.index.rows[i];
    row.object_id = token + "_" + ordinal_text;
    row.path = "clouds/" + row.object_id + ".pcd";
    row.label = label;
    row.view_id = "0";
    row.source = "synthetic";
    out.clouds[i] = std::move(cloud);
  });
  return out;
}

void write_dataset(const SynthDataset& dataset, const std::filesystem::path& root) {
  if (dataset.clouds.size() != dataset.index.size()) {
    throw Error(Errc::InvalidArgument, "dataset clouds and manifest rows differ in count");
  }
  for (std::size_t i = 0; i < dataset.clouds.size(); ++i) {
    write_file(root / dataset.index.rows[i].path, write_pcd(dataset.clouds[i]));
  }
  write_file(root / "manifest.csv", write_manifest(dataset.index));
}

}  // namespace grasp
