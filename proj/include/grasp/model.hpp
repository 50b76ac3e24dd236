#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grasp/cloud.hpp"
#include "grasp/label.hpp"
#include "grasp/nn/layers.hpp"
#include "grasp/nn/point_block.hpp"
#include "grasp/random.hpp"

namespace grasp {

/// Architecture of the classifier. Widths follow the original PointNet
/// classification network; the last entry of `mlp2` and `tnet_mlp` is the
/// pooled feature width, the last entry of `head` is the class count.
struct PointNetConfig {
  bool use_normals = false;
  std::size_t num_classes = kNumClasses;
  std::size_t points_per_cloud = 2048;
  bool use_input_tnet = true;
  bool use_feature_tnet = true;
  double tnet_reg_weight = 0.001;
  double dropout_keep = 0.7;
  std::vector<std::size_t> mlp1 = {64, 64};
  std::vector<std::size_t> mlp2 = {64, 128, 1024};
  std::vector<std::size_t> head = {512, 256, 4};
  std::vector<std::size_t> tnet_mlp = {64, 128, 1024};
  std::vector<std::size_t> tnet_head = {512, 256};
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;

  std::size_t input_channels() const { return use_normals ? 6 : 3; }
  std::size_t global_width() const { return mlp2.back(); }
  void validate() const;

  static PointNetConfig basic();
  static PointNetConfig extended();

  bool operator==(const PointNetConfig&) const = default;
};

// dense -> batchnorm -> relu
template <typename T>
struct SharedLayer {
  nn::DenseLayer<T> dense;
  nn::BatchNormLayer<T> bn;
};

template <typename T>
struct StackCache {
  std::vector<nn::Tensor<T>> activations;  // [0] is the stack input
  std::vector<nn::BatchNormCache<T>> bn;
};

/// Regresses a dim x dim transform per cloud: shared MLP, max pool, dense
/// head. The last layer starts at zero weight with identity bias.
template <typename T>
struct TNet {
  std::size_t dim = 0;
  std::vector<SharedLayer<T>> mlp;
  nn::PointFeatureBlock<T> pool;
  std::vector<SharedLayer<T>> fc;
  nn::DenseLayer<T> out;
};

template <typename T>
struct TNetCache {
  StackCache<T> mlp;
  nn::PointFeatureCache<T> pool;
  StackCache<T> fc;
};

/// input: batch x points x dim. Returns batch x dim x dim.
template <typename T>
nn::Tensor<T> tnet_forward(TNet<T>& tnet, const nn::Tensor<T>& input, nn::Mode mode,
                           TNetCache<T>* cache = nullptr);

/// Accumulates parameter gradients; returns d(input) when requested.
template <typename T>
nn::Tensor<T> tnet_backward(TNet<T>& tnet, const TNetCache<T>& cache,
                            const nn::Tensor<T>& d_transform, bool need_input_grad);

template <typename T>
struct ForwardCache {
  nn::Tensor<T> input;
  nn::Tensor<T> input_transform;
  TNetCache<T> input_tnet;
  StackCache<T> mlp1;
  nn::Tensor<T> feature_transform;
  TNetCache<T> feature_tnet;
  StackCache<T> mlp2;
  nn::PointFeatureCache<T> pool;
  StackCache<T> head;
  nn::Tensor<T> dropout_mask;
  nn::Tensor<T> logits_input;
};

template <typename T>
struct ForwardResult {
  nn::Tensor<T> logits;             // batch x classes
  nn::Tensor<T> feature_transform;  // batch x k x k, empty without feature T-net
  nn::Tensor<T> input_transform;    // batch x 3 x 3, empty without input T-net
  nn::Tensor<T> global_feature;     // batch x global_width
};

template <typename T>
class PointNet {
 public:
  /// Zero-initialized parameters with identity T-net biases.
  explicit PointNet(const PointNetConfig& config);

  /// He-normal dense weights (std sqrt(2 / fan_in)); T-nets start at identity.
  static PointNet build(const PointNetConfig& config, Rng& rng);

  const PointNetConfig& config() const { return config_; }

  std::vector<nn::Param<T>*> parameters();
  std::vector<const nn::Param<T>*> parameters() const;
  // Batch-norm running statistics, in declaration order.
  std::vector<nn::Tensor<T>*> buffers();
  std::vector<const nn::Tensor<T>*> buffers() const;

  void zero_grad();

  /// batch: batch x points_per_cloud x input_channels. Train mode updates
  /// batch-norm running statistics and draws dropout masks from `rng`.
  ForwardResult<T> forward(const nn::Tensor<T>& batch, nn::Mode mode, Rng* rng = nullptr,
                           ForwardCache<T>* cache = nullptr);

  /// Eval-mode forward that leaves the model untouched.
  ForwardResult<T> infer(const nn::Tensor<T>& batch) const;

  /// Accumulates parameter gradients from d(logits) and d(feature transform).
  void backward(const ForwardCache<T>& cache, const nn::Tensor<T>& d_logits,
                const nn::Tensor<T>& d_feature_transform);

  std::int64_t global_step = 0;

  TNet<T> input_tnet;
  std::vector<SharedLayer<T>> mlp1;
  TNet<T> feature_tnet;
  std::vector<SharedLayer<T>> mlp2;
  nn::PointFeatureBlock<T> pool;
  std::vector<SharedLayer<T>> head;
  nn::DenseLayer<T> classifier;

 private:
  PointNetConfig config_;
};

template <typename T>
struct LossGrads {
  double loss = 0.0;
  double cross_entropy = 0.0;
  double regularizer = 0.0;  // mean ||I - A A'||_F^2, before weighting
  nn::Tensor<T> d_logits;
  nn::Tensor<T> d_feature_transform;  // empty when no transform was given
};

/// Cross-entropy plus reg_weight * mean over the batch of ||I - A A'||_F^2.
template <typename T>
LossGrads<T> pointnet_loss(const nn::Tensor<T>& logits, std::span<const int> labels,
                           const nn::Tensor<T>& feature_transform, double reg_weight);

/// Packs preprocessed clouds into batch x points x channels.
template <typename T>
nn::Tensor<T> make_batch(std::span<const PointCloud* const> clouds,
                         const PointNetConfig& config);

struct Prediction {
  GraspLabel label = GraspLabel::Pinch;
  std::array<double, kNumClasses> probabilities{};
};

Prediction predict(const PointNet<float>& model, const PointCloud& cloud);

/// predict() over many clouds, evaluated `chunk` at a time.
std::vector<Prediction> predict_many(const PointNet<float>& model,
                                     std::span<const PointCloud> clouds,
                                     std::size_t chunk = 16);

// Checkpoint container: "GCPN1", u16 version, config block, then each
// parameter and buffer as little-endian float32 in declaration order, and a
// CRC-32 trailer over everything before it.
std::string save_checkpoint(const PointNet<float>& model);

/// When `expected` is given, a checkpoint with a different configuration is
/// rejected with ShapeMismatch.
PointNet<float> load_checkpoint(std::string_view bytes,
                                const PointNetConfig* expected = nullptr);

}  // namespace grasp
