#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "grasp/nn/layers.hpp"

namespace grasp::nn {

// dense -> batchnorm -> relu -> max over points, evaluated without
// materializing the batch x points x width activation.
//
// Batch-norm statistics come from the centered Gram matrix of the input
// (mean_f = xbar.w_f + b_f, var_f = w_f' G w_f / M), and because the
// normalization is a per-feature monotone map, the pooled value is the
// activation at the argmax of sign(gamma_f) * z. The backward pass keeps the
// same structure: the upstream gradient only touches the selected rows, and
// the dense batch-norm correction terms collapse into products with G and
// W diag(c) W'.
template <typename T>
struct PointFeatureBlock {
  DenseLayer<T> dense;
  BatchNormLayer<T> bn;

  PointFeatureBlock() = default;
  PointFeatureBlock(const std::string& name, std::size_t in, std::size_t out)
      : dense(name + ".dense", in, out), bn(name + ".bn", out) {}

  std::size_t in() const { return dense.in(); }
  std::size_t out() const { return dense.out(); }
};

template <typename T>
struct PointFeatureCache {
  Mode mode = Mode::Eval;
  std::size_t batch = 0;
  std::size_t points = 0;
  Eigen::VectorXd input_mean;            // in
  Eigen::MatrixXd gram;                  // in x in, centered, summed over rows
  std::vector<double> inv_std;           // out
  std::vector<std::uint32_t> selected;   // batch x out, point index
  std::vector<double> xhat_selected;     // batch x out
  std::vector<double> pre_activation;    // batch x out, gamma * xhat + beta
};

template <typename T>
struct PointFeatureGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> gamma;
  Tensor<T> beta;
};

/// input: batch x points x in. Returns batch x out.
template <typename T>
Tensor<T> point_feature_forward(PointFeatureBlock<T>& block, const Tensor<T>& input,
                                Mode mode, PointFeatureCache<T>* cache = nullptr);

template <typename T>
Tensor<T> point_feature_infer(const PointFeatureBlock<T>& block, const Tensor<T>& input,
                              PointFeatureCache<T>* cache = nullptr);

/// Train-mode gradients; `input` is the tensor given to the forward call.
template <typename T>
PointFeatureGrads<T> point_feature_backward(const PointFeatureBlock<T>& block,
                                            const PointFeatureCache<T>& cache,
                                            const Tensor<T>& input,
                                            const Tensor<T>& upstream,
                                            bool need_input_grad = true);

}  // namespace grasp::nn
