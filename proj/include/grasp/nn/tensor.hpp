#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "grasp/error.hpp"

namespace grasp::nn {

enum class Mode { Train, Eval };

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const MatrixRM<T>>;

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major array. The scalar type is fixed at creation: float for
/// training, double for gradient verification.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  /// Contents unspecified; for outputs that are fully overwritten.
  static Tensor uninitialized(Shape shape) {
    const std::size_t n = element_count(shape);
    return Tensor(std::move(shape), Storage(n), Adopt{});
  }

  Tensor(Shape shape, const std::vector<T>& values)
      : Tensor(std::move(shape), Storage(values.begin(), values.end()), Adopt{}) {}

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Product of all leading dimensions.
  std::size_t rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  MatMap<T> matrix() {
    return MatMap<T>(data_.data(), static_cast<Eigen::Index>(rows()),
                     static_cast<Eigen::Index>(cols()));
  }
  ConstMatMap<T> matrix() const {
    return ConstMatMap<T>(data_.data(), static_cast<Eigen::Index>(rows()),
                          static_cast<Eigen::Index>(cols()));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_, Adopt{}); }

  /// Raises Error(NonFinite) naming `op` when any value is NaN or infinite.
  void check_finite(std::string_view op) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw Error(Errc::NonFinite, std::string(op) + " produced a non-finite value at " +
                                         std::to_string(i),
                    static_cast<std::int64_t>(i));
      }
    }
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  static std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

 private:
  // A fixed 64-byte alignment keeps vectorized kernels, and so their
  // rounding, independent of where the allocator places a buffer.
  // Default-inserted elements are left uninitialized.
  struct Allocator : Eigen::aligned_allocator<T> {
    using value_type = T;
    template <typename U>
    struct rebind {
      using other = typename std::conditional_t<std::is_same_v<U, T>, Allocator,
                                                Eigen::aligned_allocator<U>>;
    };
    Allocator() = default;
    template <typename U>
    void construct(U* p) noexcept {
      ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
  };
  using Storage = std::vector<T, Allocator>;
  struct Adopt {};

  Tensor(Shape shape, Storage values, Adopt) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != element_count(shape_)) {
      throw Error(Errc::ShapeMismatch, "tensor data length " +
                                           std::to_string(data_.size()) +
                                           " does not match shape " +
                                           shape_string(shape_));
    }
  }

  Shape shape_;
  Storage data_;
};

}  // namespace grasp::nn
