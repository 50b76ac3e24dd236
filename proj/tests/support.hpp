#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "grasp/cloud.hpp"
#include "grasp/error.hpp"
#include "grasp/nn/tensor.hpp"

namespace grasp::test {

// Expects `stmt` to throw grasp::Error with code `errc`.
#define EXPECT_GRASP_ERROR(stmt, errc)                                        \
  do {                                                                        \
    try {                                                                     \
      stmt;                                                                   \
      ADD_FAILURE() << "expected " << ::grasp::errc_name(errc) << ", no throw"; \
    } catch (const ::grasp::Error& e) {                                       \
      EXPECT_EQ(e.code(), errc) << e.what();                                  \
    }                                                                         \
  } while (false)

inline PointCloud random_cloud(std::size_t n, Rng& rng, bool normals = false,
                               double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::normal_distribution<double> g;
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(u(rng), u(rng), u(rng));
  if (normals) {
    for (std::size_t i = 0; i < n; ++i) {
      c.normals.push_back(Vec3(g(rng), g(rng), g(rng)).normalized());
    }
  }
  return c;
}

inline double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

// Norm-wise relative error ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

// Central differences of a scalar function over every entry of `x`.
inline std::vector<double> numeric_gradient(nn::Tensor<double>& x,
                                            const std::function<double()>& f,
                                            double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline std::vector<double> to_vector(const nn::Tensor<double>& t) {
  return {t.values().begin(), t.values().end()};
}

inline nn::Tensor<double> random_tensor(nn::Shape shape, Rng& rng, double scale = 1.0) {
  nn::Tensor<double> t(std::move(shape));
  std::normal_distribution<double> g(0.0, scale);
  for (auto& v : t.values()) v = g(rng);
  return t;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("grasp_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path fixture_dir() { return GRASP_FIXTURE_DIR; }

}  // namespace grasp::test
