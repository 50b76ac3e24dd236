#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "grasp/nn/tensor.hpp"
#include "grasp/random.hpp"

namespace grasp::nn {

/// Trainable tensor with its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }
};

// Affine map over the last axis: out = input * weight + bias. Applied per
// point this is the shared MLP.
template <typename T>
struct DenseLayer {
  Param<T> weight;  // in x out
  Param<T> bias;    // out

  DenseLayer() = default;
  DenseLayer(const std::string& name, std::size_t in, std::size_t out)
      : weight(name + ".weight", Tensor<T>({in, out})),
        bias(name + ".bias", Tensor<T>({out})) {}

  std::size_t in() const { return weight.value.dim(0); }
  std::size_t out() const { return weight.value.dim(1); }
};

template <typename T>
struct DenseGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
Tensor<T> dense_forward(const DenseLayer<T>& layer, const Tensor<T>& input);

/// Gradients of dense_forward. The input gradient is skipped (left empty) when
/// `need_input_grad` is false, e.g. for the first layer of a network.
template <typename T>
DenseGrads<T> dense_backward(const DenseLayer<T>& layer, const Tensor<T>& input,
                             const Tensor<T>& upstream, bool need_input_grad = true);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

// Passes upstream where input > 0; the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& upstream);

// Batch normalization over the last axis. Statistics pool every leading
// axis, so per-point features are normalized over batch x points jointly.
template <typename T>
struct BatchNormLayer {
  Param<T> gamma;
  Param<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  BatchNormLayer() = default;
  BatchNormLayer(const std::string& name, std::size_t features)
      : gamma(name + ".gamma", Tensor<T>({features}, T{1})),
        beta(name + ".beta", Tensor<T>({features})),
        running_mean({features}),
        running_var({features}, T{1}) {}

  std::size_t features() const { return gamma.value.size(); }
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::Eval;
  Tensor<T> xhat;
  std::vector<double> inv_std;
};

/// Train mode normalizes with the biased batch variance and folds the batch
/// statistics into the running ones with `momentum`; eval mode uses the
/// running statistics.
template <typename T>
Tensor<T> batchnorm_forward(BatchNormLayer<T>& layer, const Tensor<T>& input, Mode mode,
                            BatchNormCache<T>* cache = nullptr);

/// Eval-mode normalization; never touches the layer.
template <typename T>
Tensor<T> batchnorm_infer(const BatchNormLayer<T>& layer, const Tensor<T>& input,
                          BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormLayer<T>& layer,
                                     const BatchNormCache<T>& cache,
                                     const Tensor<T>& upstream);

// dense -> batchnorm -> relu over row chunks. Same arithmetic as chaining the
// three ops, with fewer passes over memory. The cache keeps xhat; backward
// also needs the layer output for the relu mask.
template <typename T>
Tensor<T> dense_bn_relu_forward(const DenseLayer<T>& dense, const BatchNormLayer<T>& bn,
                                const Tensor<T>& input, Mode mode,
                                BatchNormCache<T>* cache = nullptr,
                                BatchNormLayer<T>* update = nullptr);

template <typename T>
struct DenseBnReluGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
DenseBnReluGrads<T> dense_bn_relu_backward(const DenseLayer<T>& dense,
                                           const BatchNormLayer<T>& bn,
                                           const BatchNormCache<T>& cache,
                                           const Tensor<T>& input, const Tensor<T>& output,
                                           Tensor<T> upstream, bool need_input_grad = true);

template <typename T>
struct MaxPoolResult {
  Tensor<T> output;                  // batch x features
  std::vector<std::uint32_t> argmax;  // batch x features, point index
};

/// Max over the points axis of a batch x points x features tensor. Ties go to
/// the lowest point index.
template <typename T>
MaxPoolResult<T> maxpool_points_forward(const Tensor<T>& input);

template <typename T>
Tensor<T> maxpool_points_backward(std::span<const std::uint32_t> argmax,
                                  const Tensor<T>& upstream, std::size_t points);

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;
};

/// Mean softmax cross-entropy over the batch; grad = (softmax - onehot) / batch.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
std::vector<double> softmax_row(const Tensor<T>& logits, std::size_t row);

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  Tensor<T> mask;  // 0 or 1/keep_prob per element; all ones in eval mode
};

// Inverted dropout: eval mode is the identity.
template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double keep_prob, Mode mode,
                                 Rng& rng);

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& mask, const Tensor<T>& upstream);

}  // namespace grasp::nn
