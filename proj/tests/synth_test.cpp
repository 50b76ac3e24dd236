#include <Eigen/Eigenvalues>

#include <numbers>
#include <set>
#include <tuple>

#include "grasp/synth.hpp"
#include "support.hpp"

namespace grasp {
namespace {

constexpr double kPi = std::numbers::pi;

ShapeSpec shape(ShapeKind kind, Vec3 dims, double density) {
  ShapeSpec s;
  s.kind = kind;
  s.dimensions = dims;
  s.surface_density = density;
  return s;
}

// First intersection distance of the ray vp + t*dir (unit dir) with a sphere,
// or infinity when it misses.
double ray_sphere(const Vec3& vp, const Vec3& dir, const Vec3& center, double r) {
  const Vec3 oc = vp - center;
  const double b = oc.dot(dir);
  const double c = oc.squaredNorm() - r * r;
  const double disc = b * b - c;
  if (disc < 0) return std::numeric_limits<double>::infinity();
  return -b - std::sqrt(disc);
}

using Key = std::tuple<double, double, double>;
Key key(const Vec3& p) { return {p.x(), p.y(), p.z()}; }

const SynthDataset& hundred_per_class() {
  static const SynthDataset data = [] {
    SynthConfig config;
    config.per_class = 100;
    config.seed = 5;
    return generate_dataset(config);
  }();
  return data;
}

struct Extents {
  double vertical;
  double major;
  double minor;
};

// Robust (1st to 99th percentile) extents: vertical along y, horizontal
// along the principal axes of the x-z footprint.
Extents extents_of(const PointCloud& c) {
  auto spread = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t lo = v.size() / 100;
    const std::size_t hi = v.size() - 1 - lo;
    return v[hi] - v[lo];
  };
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : c.points) mean += Eigen::Vector2d(p.x(), p.z());
  mean /= static_cast<double>(c.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : c.points) {
    const Eigen::Vector2d d = Eigen::Vector2d(p.x(), p.z()) - mean;
    cov += d * d.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  std::vector<double> ys;
  std::vector<double> a;
  std::vector<double> b;
  for (const auto& p : c.points) {
    const Eigen::Vector2d q(p.x(), p.z());
    ys.push_back(p.y());
    a.push_back(q.dot(eig.eigenvectors().col(1)));
    b.push_back(q.dot(eig.eigenvectors().col(0)));
  }
  return {spread(ys), spread(a), spread(b)};
}

TEST(Primitive, CylinderLateralOnAnalyticSurface) {
  Rng rng(1);
  const double r = 0.03;
  const double h = 0.1;
  const auto c = generate_primitive(shape(ShapeKind::Cylinder, {r, h, r}, 2e6), rng);
  std::size_t lateral = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Vec3& p = c.points[i];
    if (std::abs(std::abs(p.y()) - 0.5 * h) < 1e-15) {
      EXPECT_LE(std::hypot(p.x(), p.z()), r + 1e-12);
      EXPECT_EQ(std::abs(c.normals[i].y()), 1.0);
      continue;
    }
    ++lateral;
    EXPECT_LT(std::abs(p.x() * p.x() + p.z() * p.z() - r * r), 1e-9);
    EXPECT_LT((c.normals[i] - Vec3(p.x(), 0, p.z()) / r).norm(), 1e-9);
  }
  // Lateral share is its area fraction, h / (h + r).
  const double share = static_cast<double>(lateral) / static_cast<double>(c.size());
  EXPECT_NEAR(share, h / (h + r), 0.02);
}

TEST(Primitive, SphereNormalsAreRadial) {
  Rng rng(2);
  ShapeSpec s = shape(ShapeKind::Sphere, {0.04, 1, 1}, 1e6);
  s.pose.translation = Vec3(0.3, -0.1, 0.7);
  const auto c = generate_primitive(s, rng);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Vec3 radial = (c.points[i] - s.pose.translation) / 0.04;
    EXPECT_LT(test::angle_between(c.normals[i], radial), 1e-9);
    EXPECT_NEAR(radial.norm(), 1.0, 1e-12);
  }
}

TEST(Primitive, BoxFaceCountsWithinMultinomialBounds) {
  Rng rng(3);
  const Vec3 d(0.1, 0.2, 0.1);
  const auto c = generate_primitive(shape(ShapeKind::Box, d, 2e5), rng);
  const double n = static_cast<double>(c.size());
  EXPECT_EQ(c.size(), static_cast<std::size_t>(std::round(2 * (0.02 + 0.02 + 0.01) * 2e5)));
  // Six faces: -x, +x, -y, +y, -z, +z.
  std::array<double, 6> count{};
  for (const auto& p : c.points) {
    int face = -1;
    for (int k = 0; k < 3; ++k) {
      if (std::abs(std::abs(p[k]) - 0.5 * d[k]) < 1e-15) face = 2 * k + (p[k] > 0 ? 1 : 0);
    }
    ASSERT_GE(face, 0);
    ++count[static_cast<std::size_t>(face)];
  }
  const std::array<double, 3> area = {d.y() * d.z(), d.x() * d.z(), d.x() * d.y()};
  const double total = 2 * (area[0] + area[1] + area[2]);
  for (int f = 0; f < 6; ++f) {
    const double p = area[static_cast<std::size_t>(f / 2)] / total;
    const double sigma = std::sqrt(n * p * (1 - p));
    EXPECT_NEAR(count[static_cast<std::size_t>(f)], n * p, 3 * sigma) << "face " << f;
  }
}

TEST(Primitive, PoseIsApplied) {
  ShapeSpec s = shape(ShapeKind::Box, {0.1, 0.2, 0.3}, 1e4);
  s.pose.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()));
  s.pose.translation = Vec3(1, 2, 3);
  Rng a(4);
  Rng b(4);
  const auto posed = generate_primitive(s, a);
  s.pose = Pose{};
  const auto raw = generate_primitive(s, b);
  const Mat3 r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    EXPECT_LT((posed.points[i] - (r * raw.points[i] + Vec3(1, 2, 3))).norm(), 1e-12);
    EXPECT_LT((posed.normals[i] - r * raw.normals[i]).norm(), 1e-12);
  }
}

TEST(Primitive, InvalidSpecsRejected) {
  Rng rng(1);
  EXPECT_GRASP_ERROR(generate_primitive(shape(ShapeKind::Box, {0.1, 0, 0.1}, 1e4), rng),
                     Errc::InvalidArgument);
  ShapeSpec s = shape(ShapeKind::Sphere, {0.1, 0.1, 0.1}, 1e4);
  s.pose.rotation = Eigen::Quaterniond(1.0, 0.1, 0.0, 0.0);
  EXPECT_GRASP_ERROR(generate_primitive(s, rng), Errc::InvalidArgument);
}

TEST(Cull, SphereFromAfarPassesRaycastOracle) {
  Rng rng(5);
  const double r = 0.05;
  // Dense enough that every image cell over the front face holds samples;
  // an empty front cell would legitimately expose the back.
  const auto sphere = generate_primitive(shape(ShapeKind::Sphere, {r, r, r}, 8e6), rng);
  const Vec3 vp(0, 0, 1.0);
  const int res = 64;
  const auto seen = single_view_cull(sphere, vp, res);
  ASSERT_GT(seen.size(), 1000u);
  // Diagonal of one image cell in view-tangent units, rounded up.
  const double cell = 2.0 * r / std::sqrt(1.0 - r * r) / res * std::sqrt(2.0) * 1.05;
  const double silhouette_depth = vp.z() - r * r / vp.z();

  std::size_t back_facing = 0;
  for (std::size_t i = 0; i < seen.size(); ++i) {
    const Vec3& p = seen.points[i];
    // A retained point's depth along the view axis is within the tolerance
    // of the nearest sample in its cell, which is no deeper than the front
    // surface at the cell's outer edge (or the silhouette beyond it).
    const double depth = vp.z() - p.z();
    const Eigen::Vector2d tangent = Eigen::Vector2d(p.x(), p.y()) / depth;
    const double t = tangent.norm();
    const Eigen::Vector2d outward = tangent * ((t + cell) / std::max(t, 1e-12));
    const Vec3 dir = Vec3(outward.x(), outward.y(), -1.0).normalized();
    const double hit = ray_sphere(vp, dir, Vec3::Zero(), r);
    const double front_depth = std::isfinite(hit) ? hit * -dir.z() : silhouette_depth;
    EXPECT_LE(depth, front_depth * 1.01 + 1e-12);
    const double facing = (p / r).dot((vp - p).normalized());
    if (facing <= 0) {
      ++back_facing;
      // Only grazing points at the silhouette may leak past the tolerance.
      EXPECT_GT(facing, -0.2);
    }
    EXPECT_GE(seen.normals[i].dot(vp - p), 0.0);
  }
  // The 1% depth tolerance admits a thin band of grazing back-facing points.
  EXPECT_LT(static_cast<double>(back_facing), 0.03 * static_cast<double>(seen.size()));

  // 100 random rays that hit the sphere: each front hit has a retained
  // sample nearby.
  std::normal_distribution<double> g;
  int rays = 0;
  while (rays < 100) {
    const Vec3 target = 0.9 * r * Vec3(g(rng), g(rng), 0).normalized() *
                        std::sqrt(std::uniform_real_distribution<double>(0, 1)(rng));
    const Vec3 dir = (target - vp).normalized();
    const double t = ray_sphere(vp, dir, Vec3::Zero(), r);
    if (!std::isfinite(t)) continue;
    ++rays;
    const Vec3 hit = vp + t * dir;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : seen.points) best = std::min(best, (p - hit).norm());
    EXPECT_LT(best, 0.004) << "ray " << rays;
  }
}

TEST(Cull, PlaneFacingCameraKeepsEveryPoint) {
  PointCloud plane;
  for (int i = 0; i < 40; ++i) {
    for (int j = 0; j < 40; ++j) plane.points.emplace_back(0.005 * (i - 19.5), 0.005 * (j - 19.5), 0);
  }
  plane.normals.assign(plane.size(), Vec3(0, 0, 1));
  const auto seen = single_view_cull(plane, Vec3(0, 0, 0.5), 256);
  EXPECT_EQ(seen.points, plane.points);
}

TEST(Cull, RearSphereOnlyOutsideFrontSilhouette) {
  Rng rng(6);
  const double r_front = 0.03;
  const double r_back = 0.1;
  const Vec3 vp(0, 0, 1.0);
  ShapeSpec front = shape(ShapeKind::Sphere, {r_front, 1, 1}, 2e6);
  front.pose.translation = Vec3(0, 0, 0.3);
  ShapeSpec back = shape(ShapeKind::Sphere, {r_back, 1, 1}, 2e6);
  const auto a = generate_primitive(front, rng);
  const auto b = generate_primitive(back, rng);
  PointCloud both = a;
  both.points.insert(both.points.end(), b.points.begin(), b.points.end());
  both.normals.insert(both.normals.end(), b.normals.begin(), b.normals.end());

  const auto seen = single_view_cull(both, vp, 256);
  const std::set<Key> rear(
      [&] {
        std::set<Key> s;
        for (const auto& p : b.points) s.insert(key(p));
        return s;
      }());
  // Angular radius of the front sphere seen from the viewpoint.
  const double silhouette = std::asin(r_front / (vp - front.pose.translation).norm());
  // One image cell of slack at the silhouette edge.
  const double cell = 2.0 * 0.2 / 256.0;
  std::size_t rear_kept = 0;
  for (const auto& p : seen.points) {
    if (!rear.count(key(p))) continue;
    ++rear_kept;
    const double angle = test::angle_between(p - vp, -Vec3::UnitZ());
    EXPECT_GT(angle, silhouette - cell) << p.transpose();
  }
  EXPECT_GT(rear_kept, 1000u);
}

TEST(Cull, OutputIsSubsetOfInput) {
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    ShapeSpec s = shape(t % 2 ? ShapeKind::Box : ShapeKind::Cylinder, {0.05, 0.1, 0.07}, 2e5);
    s.pose.rotation = Eigen::Quaterniond::UnitRandom();
    const auto cloud = generate_primitive(s, rng);
    const Vec3 vp = 0.5 * test::random_cloud(1, rng).points[0].normalized();
    const auto seen = single_view_cull(cloud, vp, 64);
    std::multiset<Key> all;
    for (const auto& p : cloud.points) all.insert(key(p));
    for (const auto& p : seen.points) {
      auto it = all.find(key(p));
      ASSERT_NE(it, all.end());
      all.erase(it);
    }
    EXPECT_LT(seen.size(), cloud.size());
  }
}

TEST(Cull, ViewpointInsideObjectRejected) {
  Rng rng(8);
  const auto sphere = generate_primitive(shape(ShapeKind::Sphere, {0.1, 1, 1}, 1e4), rng);
  EXPECT_GRASP_ERROR(single_view_cull(sphere, Vec3(0, 0, 0.05), 64), Errc::ViewpointInsideObject);
}

TEST(Dataset, OnePerClass) {
  SynthConfig config;
  config.per_class = 1;
  const auto data = generate_dataset(config);
  ASSERT_EQ(data.clouds.size(), 4u);
  EXPECT_EQ(class_histogram(data.index), (ClassCounts{1, 1, 1, 1}));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(data.clouds[i].label, data.index.rows[i].label);
    EXPECT_FALSE(data.clouds[i].has_normals());
    EXPECT_LE(data.clouds[i].size(), config.max_points);
    EXPECT_GT(data.clouds[i].size(), 200u);
    data.clouds[i].validate();
  }
}

TEST(Dataset, SameSeedIsBitIdentical) {
  SynthConfig config;
  config.per_class = 2;
  config.seed = 99;
  const auto a = generate_dataset(config);
  const auto b = generate_dataset(config);
  EXPECT_EQ(write_manifest(a.index), write_manifest(b.index));
  for (std::size_t i = 0; i < a.clouds.size(); ++i) EXPECT_EQ(a.clouds[i].points, b.clouds[i].points);
  config.seed = 100;
  const auto c = generate_dataset(config);
  EXPECT_NE(a.clouds[0].points, c.clouds[0].points);
}

TEST(Dataset, CameraSitsAtOriginAboveTheObject) {
  const auto& data = hundred_per_class();
  for (const auto& cloud : data.clouds) {
    // Objects span under 0.3 m and are posed within 0.035 m of the target.
    for (const auto& p : cloud.points) {
      ASSERT_GT(p.norm(), 0.6 - 0.2);
      ASSERT_LT(p.norm(), 0.6 + 0.2);
    }
    // Looking down at 15 to 60 degrees of elevation.
    const Vec3 look = centroid(cloud).normalized();
    EXPECT_LT(look.y(), -std::sin(10.0 * std::numbers::pi / 180.0));
    EXPECT_GT(look.y(), -std::sin(65.0 * std::numbers::pi / 180.0));
  }
}

TEST(Dataset, PalmarNeutralIsTall) {
  const auto& data = hundred_per_class();
  std::size_t checked = 0;
  for (const auto& c : data.clouds) {
    if (c.label != GraspLabel::PalmarWristNeutral) continue;
    Vec3 lo = c.points[0];
    Vec3 hi = c.points[0];
    for (const auto& p : c.points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    EXPECT_GT((hi.y() - lo.y()) / (hi.x() - lo.x()), 1.5);
    ++checked;
  }
  EXPECT_EQ(checked, 100u);
}

TEST(Dataset, PinchIsThinAndTripodIsSmall) {
  const auto& data = hundred_per_class();
  for (const auto& c : data.clouds) {
    const Extents e = extents_of(c);
    if (c.label == GraspLabel::Pinch) {
      EXPECT_LT(e.vertical, 0.03 + 0.01);
    }
    if (c.label == GraspLabel::Tripod) {
      EXPECT_LT(e.major, 0.06 + 0.01);
    }
  }
}

TEST(Dataset, LinearlySeparableInLogExtents) {
  const auto& data = hundred_per_class();
  std::vector<Eigen::Vector4d> x;
  std::vector<int> y;
  for (const auto& c : data.clouds) {
    const Extents e = extents_of(c);
    x.emplace_back(std::log(e.vertical), std::log(e.major), std::log(e.minor), 1.0);
    y.push_back(label_code(*c.label));
  }
  // Multiclass perceptron; it converges exactly when the classes are
  // linearly separable.
  Eigen::Matrix4d w = Eigen::Matrix4d::Zero();
  std::size_t errors = x.size();
  for (int epoch = 0; epoch < 20000 && errors > 0; ++epoch) {
    errors = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      Eigen::Vector4d scores = w * x[i];
      int best = 0;
      scores.maxCoeff(&best);
      const double truth = scores[y[i]];
      bool wrong = best != y[i];
      for (int k = 0; k < 4; ++k) wrong = wrong || (k != y[i] && scores[k] >= truth);
      if (wrong) {
        ++errors;
        w.row(y[i]) += x[i].transpose();
        w.row(best == y[i] ? (y[i] + 1) % 4 : best) -= x[i].transpose();
      }
    }
  }
  EXPECT_EQ(errors, 0u);
}

TEST(Dataset, ManifestMatchesCloudsAndWritesFiles) {
  SynthConfig config;
  config.per_class = 1;
  const auto data = generate_dataset(config);
  test::TempDir dir("synth");
  write_dataset(data, dir.path());
  const auto index = load_manifest(read_file(dir.path() / "manifest.csv"));
  ASSERT_EQ(index.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(index.rows[i].source, "synthetic");
    const auto loaded = load_pcd_file(dir.path() / index.rows[i].path);
    EXPECT_EQ(loaded.points, data.clouds[i].points);
  }
}

TEST(Dataset, ConfigValidation) {
  SynthConfig config;
  config.per_class = 0;
  EXPECT_GRASP_ERROR(generate_dataset(config), Errc::InvalidConfig);
  config = {};
  config.grid_resolution = 8;
  EXPECT_GRASP_ERROR(generate_dataset(config), Errc::InvalidConfig);
  config = {};
  config.noise_sigma = -1;
  EXPECT_GRASP_ERROR(generate_dataset(config), Errc::InvalidConfig);
}

}  // namespace
}  // namespace grasp
