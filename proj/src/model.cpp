#include "grasp/model.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "grasp/error.hpp"

namespace grasp {

using nn::Mode;
using nn::Tensor;

void PointNetConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::InvalidConfig, what); };
  auto positive = [](const std::vector<std::size_t>& widths) {
    return std::all_of(widths.begin(), widths.end(), [](std::size_t w) { return w > 0; });
  };
  if (num_classes != kNumClasses) fail("num_classes must be 4");
  if (points_per_cloud == 0) fail("points_per_cloud must be positive");
  if (mlp1.empty() || mlp2.empty() || head.empty() || tnet_mlp.empty()) {
    fail("mlp1, mlp2, head and tnet_mlp need at least one width");
  }
  if (!positive(mlp1) || !positive(mlp2) || !positive(head) || !positive(tnet_mlp) ||
      !positive(tnet_head)) {
    fail("layer widths must be positive");
  }
  if (head.back() != num_classes) fail("last head width must equal num_classes");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) fail("dropout_keep must be in (0, 1]");
  if (tnet_reg_weight < 0.0) fail("tnet_reg_weight must be non-negative");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) fail("bn_momentum must be in [0, 1)");
  if (!(bn_epsilon > 0.0)) fail("bn_epsilon must be positive");
}

PointNetConfig PointNetConfig::basic() { return PointNetConfig{}; }

PointNetConfig PointNetConfig::extended() {
  PointNetConfig config;
  config.use_normals = true;
  return config;
}

namespace {

template <typename T>
SharedLayer<T> make_shared(const std::string& name, std::size_t in, std::size_t out,
                           const PointNetConfig& config) {
  SharedLayer<T> layer{nn::DenseLayer<T>(name, in, out), nn::BatchNormLayer<T>(name + ".bn", out)};
  layer.bn.momentum = config.bn_momentum;
  layer.bn.epsilon = config.bn_epsilon;
  return layer;
}

template <typename T>
std::vector<SharedLayer<T>> make_stack(const std::string& name, std::size_t in,
                                       std::span<const std::size_t> widths,
                                       const PointNetConfig& config) {
  std::vector<SharedLayer<T>> layers;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    layers.push_back(make_shared<T>(name + "." + std::to_string(i), in, widths[i], config));
    in = widths[i];
  }
  return layers;
}

template <typename T>
nn::PointFeatureBlock<T> make_pool(const std::string& name, std::size_t in, std::size_t out,
                                   const PointNetConfig& config) {
  nn::PointFeatureBlock<T> block(name, in, out);
  block.bn.momentum = config.bn_momentum;
  block.bn.epsilon = config.bn_epsilon;
  return block;
}

template <typename T>
TNet<T> make_tnet(const std::string& name, std::size_t dim, const PointNetConfig& config) {
  TNet<T> t;
  t.dim = dim;
  const std::span<const std::size_t> widths(config.tnet_mlp);
  t.mlp = make_stack<T>(name + ".mlp", dim, widths.first(widths.size() - 1), config);
  const std::size_t pool_in = widths.size() > 1 ? widths[widths.size() - 2] : dim;
  t.pool = make_pool<T>(name + ".pool", pool_in, widths.back(), config);
  t.fc = make_stack<T>(name + ".fc", widths.back(), config.tnet_head, config);
  const std::size_t fc_out = config.tnet_head.empty() ? widths.back() : config.tnet_head.back();
  t.out = nn::DenseLayer<T>(name + ".out", fc_out, dim * dim);
  for (std::size_t i = 0; i < dim; ++i) t.out.bias.value[i * dim + i] = T{1};
  return t;
}

// Calls on_dense(layer, is_transform_head) and on_bn(layer) in declaration order.
template <typename Net, typename OnDense, typename OnBn>
void visit_layers(Net& net, OnDense&& on_dense, OnBn&& on_bn) {
  auto stack = [&](auto& layers) {
    for (auto& l : layers) {
      on_dense(l.dense, false);
      on_bn(l.bn);
    }
  };
  auto tnet = [&](auto& t) {
    stack(t.mlp);
    on_dense(t.pool.dense, false);
    on_bn(t.pool.bn);
    stack(t.fc);
    on_dense(t.out, true);
  };
  const auto& config = net.config();
  if (config.use_input_tnet) tnet(net.input_tnet);
  stack(net.mlp1);
  if (config.use_feature_tnet) tnet(net.feature_tnet);
  stack(net.mlp2);
  on_dense(net.pool.dense, false);
  on_bn(net.pool.bn);
  stack(net.head);
  on_dense(net.classifier, false);
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T, typename Layers>
Tensor<T> stack_run(Layers& layers, const Tensor<T>& input, Mode mode, StackCache<T>* cache) {
  constexpr bool kConst = std::is_const_v<Layers>;
  if (cache) {
    cache->activations.clear();
    cache->activations.reserve(layers.size() + 1);
    cache->activations.push_back(input);
    cache->bn.assign(layers.size(), {});
  }
  if (layers.empty()) return input;
  // Activations live in the cache when there is one, so no per-layer copies.
  Tensor<T> local;
  const Tensor<T>* x = &input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    nn::BatchNormCache<T>* bn_cache = cache ? &cache->bn[i] : nullptr;
    Tensor<T> y;
    if constexpr (kConst) {
      y = nn::dense_bn_relu_forward(layers[i].dense, layers[i].bn, *x, Mode::Eval, bn_cache);
    } else {
      y = nn::dense_bn_relu_forward(layers[i].dense, layers[i].bn, *x, mode, bn_cache,
                                    &layers[i].bn);
    }
    if (cache) {
      cache->activations.push_back(std::move(y));
      x = &cache->activations.back();
    } else {
      local = std::move(y);
      x = &local;
    }
  }
  return cache ? *x : std::move(local);
}

template <typename T>
Tensor<T> stack_backward(std::vector<SharedLayer<T>>& layers, const StackCache<T>& cache,
                         Tensor<T> grad, bool need_input_grad) {
  for (std::size_t i = layers.size(); i-- > 0;) {
    auto g = nn::dense_bn_relu_backward(layers[i].dense, layers[i].bn, cache.bn[i],
                                        cache.activations[i], cache.activations[i + 1],
                                        std::move(grad), i > 0 || need_input_grad);
    add_into(layers[i].dense.weight.grad, g.weight);
    add_into(layers[i].dense.bias.grad, g.bias);
    add_into(layers[i].bn.gamma.grad, g.gamma);
    add_into(layers[i].bn.beta.grad, g.beta);
    grad = std::move(g.input);
  }
  return grad;
}

template <typename T, typename Block>
Tensor<T> pool_run(Block& block, const Tensor<T>& input, Mode mode,
                   nn::PointFeatureCache<T>* cache) {
  if constexpr (std::is_const_v<Block>) {
    return nn::point_feature_infer(block, input, cache);
  } else {
    return nn::point_feature_forward(block, input, mode, cache);
  }
}

template <typename T, typename TN>
Tensor<T> tnet_run(TN& tnet, const Tensor<T>& input, Mode mode, TNetCache<T>* cache) {
  if (input.rank() != 3 || input.dim(2) != tnet.dim) {
    throw Error(Errc::ShapeMismatch, "T-net expects batch x points x " +
                                         std::to_string(tnet.dim) + ", got " +
                                         nn::shape_string(input.shape()));
  }
  const std::size_t nb = input.dim(0);
  Tensor<T> h = stack_run(tnet.mlp, input, mode, cache ? &cache->mlp : nullptr);
  Tensor<T> pooled = pool_run(tnet.pool, h, mode, cache ? &cache->pool : nullptr);
  Tensor<T> f = stack_run(tnet.fc, pooled, mode, cache ? &cache->fc : nullptr);
  Tensor<T> flat = nn::dense_forward(tnet.out, f);
  return flat.reshaped({nb, tnet.dim, tnet.dim});
}

// out_b = x_b * m_b for each cloud, where x is batch x points x (blocks * d)
// and the same d x d matrix acts on every d-wide channel block.
template <typename T>
Tensor<T> apply_transform(const Tensor<T>& x, const Tensor<T>& m, std::size_t d) {
  const std::size_t nb = x.dim(0);
  const std::size_t np = x.dim(1);
  const std::size_t c = x.dim(2);
  using Strided = Eigen::Map<const nn::MatrixRM<T>, 0, Eigen::OuterStride<>>;
  using StridedOut = Eigen::Map<nn::MatrixRM<T>, 0, Eigen::OuterStride<>>;
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < nb; ++b) {
    const nn::ConstMatMap<T> mb(m.data() + b * d * d, static_cast<Eigen::Index>(d),
                                static_cast<Eigen::Index>(d));
    for (std::size_t blk = 0; blk < c / d; ++blk) {
      const Strided xb(x.data() + b * np * c + blk * d, static_cast<Eigen::Index>(np),
                       static_cast<Eigen::Index>(d), Eigen::OuterStride<>(static_cast<Eigen::Index>(c)));
      StridedOut ob(out.data() + b * np * c + blk * d, static_cast<Eigen::Index>(np),
                    static_cast<Eigen::Index>(d), Eigen::OuterStride<>(static_cast<Eigen::Index>(c)));
      ob.noalias() = xb * mb;
    }
  }
  return out;
}

// Gradients of apply_transform: d(x) = d(out) m', d(m) = sum over blocks x' d(out).
template <typename T>
void transform_backward(const Tensor<T>& x, const Tensor<T>& m, std::size_t d,
                        const Tensor<T>& d_out, Tensor<T>* d_x, Tensor<T>& d_m) {
  const std::size_t nb = x.dim(0);
  const std::size_t np = x.dim(1);
  const std::size_t c = x.dim(2);
  using Strided = Eigen::Map<const nn::MatrixRM<T>, 0, Eigen::OuterStride<>>;
  using StridedOut = Eigen::Map<nn::MatrixRM<T>, 0, Eigen::OuterStride<>>;
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(c));
  const auto rows = static_cast<Eigen::Index>(np);
  const auto cols = static_cast<Eigen::Index>(d);
  d_m = Tensor<T>({nb, d, d});
  if (d_x) *d_x = Tensor<T>(x.shape());
  for (std::size_t b = 0; b < nb; ++b) {
    const nn::ConstMatMap<T> mb(m.data() + b * d * d, cols, cols);
    nn::MatMap<T> dmb(d_m.data() + b * d * d, cols, cols);
    for (std::size_t blk = 0; blk < c / d; ++blk) {
      const std::size_t offset = b * np * c + blk * d;
      const Strided xb(x.data() + offset, rows, cols, stride);
      const Strided gb(d_out.data() + offset, rows, cols, stride);
      dmb.noalias() += xb.transpose() * gb;
      if (d_x) {
        StridedOut dxb(d_x->data() + offset, rows, cols, stride);
        dxb.noalias() = gb * mb.transpose();
      }
    }
  }
}

template <typename T>
Tensor<T> slice_xyz(const Tensor<T>& batch) {
  const std::size_t nb = batch.dim(0);
  const std::size_t np = batch.dim(1);
  const std::size_t c = batch.dim(2);
  Tensor<T> xyz({nb, np, 3});
  for (std::size_t i = 0; i < nb * np; ++i) {
    for (std::size_t k = 0; k < 3; ++k) xyz[i * 3 + k] = batch[i * c + k];
  }
  return xyz;
}

template <typename T, typename Net>
ForwardResult<T> forward_impl(Net& net, const Tensor<T>& batch, Mode mode, Rng* rng,
                              ForwardCache<T>* cache) {
  const PointNetConfig& config = net.config();
  if (batch.rank() != 3 || batch.dim(0) == 0) {
    throw Error(Errc::ShapeMismatch,
                "expected batch x points x channels, got " + nn::shape_string(batch.shape()));
  }
  if (batch.dim(1) != config.points_per_cloud) {
    throw Error(Errc::WrongPointCount, "model expects " +
                                           std::to_string(config.points_per_cloud) +
                                           " points per cloud, got " +
                                           std::to_string(batch.dim(1)));
  }
  if (batch.dim(2) != config.input_channels()) {
    throw Error(Errc::ShapeMismatch, "model expects " +
                                         std::to_string(config.input_channels()) +
                                         " channels, got " + std::to_string(batch.dim(2)));
  }
  ForwardResult<T> result;
  if (cache) cache->input = batch;

  Tensor<T> x;
  if (config.use_input_tnet) {
    result.input_transform = tnet_run(net.input_tnet, slice_xyz(batch), mode,
                                      cache ? &cache->input_tnet : nullptr);
    x = apply_transform(batch, result.input_transform, 3);
    if (cache) cache->input_transform = result.input_transform;
  } else {
    x = batch;
  }

  Tensor<T> h = stack_run(net.mlp1, x, mode, cache ? &cache->mlp1 : nullptr);
  x = Tensor<T>();
  if (config.use_feature_tnet) {
    result.feature_transform = tnet_run(net.feature_tnet, h, mode,
                                        cache ? &cache->feature_tnet : nullptr);
    h = apply_transform(h, result.feature_transform, h.dim(2));
    if (cache) cache->feature_transform = result.feature_transform;
  }

  Tensor<T> g = stack_run(net.mlp2, h, mode, cache ? &cache->mlp2 : nullptr);
  h = Tensor<T>();
  result.global_feature = pool_run(net.pool, g, mode, cache ? &cache->pool : nullptr);
  g = Tensor<T>();

  Tensor<T> f = stack_run(net.head, result.global_feature, mode, cache ? &cache->head : nullptr);
  if (mode == Mode::Train && !net.head.empty() && config.dropout_keep < 1.0) {
    if (!rng) throw Error(Errc::InvalidArgument, "train-mode dropout needs an rng");
    auto dropped = nn::dropout_forward(f, config.dropout_keep, mode, *rng);
    f = std::move(dropped.output);
    if (cache) cache->dropout_mask = std::move(dropped.mask);
  } else if (cache) {
    cache->dropout_mask = Tensor<T>();
  }
  result.logits = nn::dense_forward(net.classifier, f);
  result.logits.check_finite("model forward");
  if (cache) cache->logits_input = std::move(f);
  return result;
}

template <typename T>
void init_he(nn::DenseLayer<T>& layer, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(layer.in())));
  for (auto& w : layer.weight.value.values()) w = static_cast<T>(dist(rng));
}

}  // namespace

template <typename T>
Tensor<T> tnet_forward(TNet<T>& tnet, const Tensor<T>& input, Mode mode, TNetCache<T>* cache) {
  return tnet_run(tnet, input, mode, cache);
}

template <typename T>
Tensor<T> tnet_backward(TNet<T>& tnet, const TNetCache<T>& cache, const Tensor<T>& d_transform,
                        bool need_input_grad) {
  const std::size_t nb = d_transform.dim(0);
  const Tensor<T> flat = d_transform.reshaped({nb, tnet.dim * tnet.dim});
  auto out = nn::dense_backward(tnet.out, cache.fc.activations.back(), flat);
  add_into(tnet.out.weight.grad, out.weight);
  add_into(tnet.out.bias.grad, out.bias);
  Tensor<T> d_pooled = stack_backward(tnet.fc, cache.fc, std::move(out.input), true);
  auto pool = nn::point_feature_backward(tnet.pool, cache.pool, cache.mlp.activations.back(),
                                         d_pooled, need_input_grad || !tnet.mlp.empty());
  add_into(tnet.pool.dense.weight.grad, pool.weight);
  add_into(tnet.pool.dense.bias.grad, pool.bias);
  add_into(tnet.pool.bn.gamma.grad, pool.gamma);
  add_into(tnet.pool.bn.beta.grad, pool.beta);
  if (tnet.mlp.empty()) return pool.input;
  return stack_backward(tnet.mlp, cache.mlp, std::move(pool.input), need_input_grad);
}

template <typename T>
PointNet<T>::PointNet(const PointNetConfig& config) : config_(config) {
  config_.validate();
  const std::size_t channels = config_.input_channels();
  if (config_.use_input_tnet) input_tnet = make_tnet<T>("input_tnet", 3, config_);
  mlp1 = make_stack<T>("mlp1", channels, config_.mlp1, config_);
  if (config_.use_feature_tnet) {
    feature_tnet = make_tnet<T>("feature_tnet", config_.mlp1.back(), config_);
  }
  const std::span<const std::size_t> widths(config_.mlp2);
  mlp2 = make_stack<T>("mlp2", config_.mlp1.back(), widths.first(widths.size() - 1), config_);
  const std::size_t pool_in = widths.size() > 1 ? widths[widths.size() - 2] : config_.mlp1.back();
  pool = make_pool<T>("pool", pool_in, widths.back(), config_);
  const std::span<const std::size_t> head_widths(config_.head);
  head = make_stack<T>("head", widths.back(), head_widths.first(head_widths.size() - 1), config_);
  const std::size_t cls_in = head_widths.size() > 1 ? head_widths[head_widths.size() - 2]
                                                    : widths.back();
  classifier = nn::DenseLayer<T>("classifier", cls_in, config_.num_classes);
}

template <typename T>
PointNet<T> PointNet<T>::build(const PointNetConfig& config, Rng& rng) {
  PointNet<T> net(config);
  visit_layers(
      net,
      [&](nn::DenseLayer<T>& layer, bool transform_head) {
        if (!transform_head) init_he(layer, rng);
      },
      [](nn::BatchNormLayer<T>&) {});
  return net;
}

template <typename T>
std::vector<nn::Param<T>*> PointNet<T>::parameters() {
  std::vector<nn::Param<T>*> out;
  visit_layers(
      *this,
      [&](nn::DenseLayer<T>& l, bool) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
      },
      [&](nn::BatchNormLayer<T>& l) {
        out.push_back(&l.gamma);
        out.push_back(&l.beta);
      });
  return out;
}

template <typename T>
std::vector<const nn::Param<T>*> PointNet<T>::parameters() const {
  std::vector<const nn::Param<T>*> out;
  visit_layers(
      *this,
      [&](const nn::DenseLayer<T>& l, bool) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
      },
      [&](const nn::BatchNormLayer<T>& l) {
        out.push_back(&l.gamma);
        out.push_back(&l.beta);
      });
  return out;
}

template <typename T>
std::vector<Tensor<T>*> PointNet<T>::buffers() {
  std::vector<Tensor<T>*> out;
  visit_layers(
      *this, [](nn::DenseLayer<T>&, bool) {},
      [&](nn::BatchNormLayer<T>& l) {
        out.push_back(&l.running_mean);
        out.push_back(&l.running_var);
      });
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> PointNet<T>::buffers() const {
  std::vector<const Tensor<T>*> out;
  visit_layers(
      *this, [](const nn::DenseLayer<T>&, bool) {},
      [&](const nn::BatchNormLayer<T>& l) {
        out.push_back(&l.running_mean);
        out.push_back(&l.running_var);
      });
  return out;
}

template <typename T>
void PointNet<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
ForwardResult<T> PointNet<T>::forward(const Tensor<T>& batch, Mode mode, Rng* rng,
                                      ForwardCache<T>* cache) {
  return forward_impl(*this, batch, mode, rng, cache);
}

template <typename T>
ForwardResult<T> PointNet<T>::infer(const Tensor<T>& batch) const {
  return forward_impl<T>(*this, batch, Mode::Eval, nullptr, nullptr);
}

template <typename T>
void PointNet<T>::backward(const ForwardCache<T>& cache, const Tensor<T>& d_logits,
                           const Tensor<T>& d_feature_transform) {
  auto cls = nn::dense_backward(classifier, cache.logits_input, d_logits);
  add_into(classifier.weight.grad, cls.weight);
  add_into(classifier.bias.grad, cls.bias);
  Tensor<T> grad = std::move(cls.input);
  if (!cache.dropout_mask.empty()) grad = nn::dropout_backward(cache.dropout_mask, grad);
  grad = stack_backward(head, cache.head, std::move(grad), true);

  auto pooled = nn::point_feature_backward(pool, cache.pool, cache.mlp2.activations.back(), grad);
  add_into(pool.dense.weight.grad, pooled.weight);
  add_into(pool.dense.bias.grad, pooled.bias);
  add_into(pool.bn.gamma.grad, pooled.gamma);
  add_into(pool.bn.beta.grad, pooled.beta);
  grad = stack_backward(mlp2, cache.mlp2, std::move(pooled.input), true);

  if (config_.use_feature_tnet) {
    Tensor<T> d_features;
    Tensor<T> d_a;
    transform_backward(cache.mlp1.activations.back(), cache.feature_transform,
                       config_.mlp1.back(), grad, &d_features, d_a);
    if (!d_feature_transform.empty()) add_into(d_a, d_feature_transform);
    Tensor<T> through_tnet = tnet_backward(feature_tnet, cache.feature_tnet, d_a, true);
    add_into(d_features, through_tnet);
    grad = std::move(d_features);
  }

  grad = stack_backward(mlp1, cache.mlp1, std::move(grad), config_.use_input_tnet);

  if (config_.use_input_tnet) {
    Tensor<T> d_t;
    transform_backward<T>(cache.input, cache.input_transform, 3, grad, nullptr, d_t);
    tnet_backward(input_tnet, cache.input_tnet, d_t, false);
  }
}

template <typename T>
LossGrads<T> pointnet_loss(const Tensor<T>& logits, std::span<const int> labels,
                           const Tensor<T>& feature_transform, double reg_weight) {
  auto ce = nn::softmax_cross_entropy(logits, labels);
  LossGrads<T> out;
  out.cross_entropy = ce.loss;
  out.d_logits = std::move(ce.grad);
  if (!feature_transform.empty()) {
    if (feature_transform.rank() != 3 || feature_transform.dim(1) != feature_transform.dim(2) ||
        feature_transform.dim(0) != logits.dim(0)) {
      throw Error(Errc::ShapeMismatch, "feature transform must be batch x k x k, got " +
                                           nn::shape_string(feature_transform.shape()));
    }
    const std::size_t nb = feature_transform.dim(0);
    const auto k = static_cast<Eigen::Index>(feature_transform.dim(1));
    out.d_feature_transform = Tensor<T>(feature_transform.shape());
    double total = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      const Eigen::MatrixXd a =
          nn::ConstMatMap<T>(feature_transform.data() + b * k * k, k, k).template cast<double>();
      const Eigen::MatrixXd e = Eigen::MatrixXd::Identity(k, k) - a * a.transpose();
      total += e.squaredNorm();
      const Eigen::MatrixXd grad = (-4.0 * reg_weight / static_cast<double>(nb)) * (e * a);
      nn::MatMap<T>(out.d_feature_transform.data() + b * k * k, k, k) = grad.template cast<T>();
    }
    out.regularizer = total / static_cast<double>(nb);
  }
  out.loss = out.cross_entropy + reg_weight * out.regularizer;
  return out;
}

template <typename T>
Tensor<T> make_batch(std::span<const PointCloud* const> clouds, const PointNetConfig& config) {
  const std::size_t np = config.points_per_cloud;
  const std::size_t c = config.input_channels();
  Tensor<T> batch({clouds.size(), np, c});
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    const PointCloud& cloud = *clouds[b];
    if (cloud.size() != np) {
      throw Error(Errc::WrongPointCount,
                  "cloud " + std::to_string(b) + " has " + std::to_string(cloud.size()) +
                      " points, model expects " + std::to_string(np),
                  static_cast<std::int64_t>(b));
    }
    if (config.use_normals && !cloud.has_normals()) {
      throw Error(Errc::MissingNormals,
                  "extended model needs normals; cloud " + std::to_string(b) + " has none",
                  static_cast<std::int64_t>(b));
    }
    for (std::size_t p = 0; p < np; ++p) {
      T* row = batch.data() + (b * np + p) * c;
      for (int k = 0; k < 3; ++k) row[k] = static_cast<T>(cloud.points[p][k]);
      if (config.use_normals) {
        for (int k = 0; k < 3; ++k) row[3 + k] = static_cast<T>(cloud.normals[p][k]);
      }
    }
  }
  return batch;
}

std::vector<Prediction> predict_many(const PointNet<float>& model,
                                     std::span<const PointCloud> clouds, std::size_t chunk) {
  std::vector<Prediction> out;
  out.reserve(clouds.size());
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t start = 0; start < clouds.size(); start += chunk) {
    const std::size_t end = std::min(clouds.size(), start + chunk);
    std::vector<const PointCloud*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&clouds[i]);
    const Tensor<float> batch = make_batch<float>(ptrs, model.config());
    const auto result = model.infer(batch);
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      const auto probs = nn::softmax_row(result.logits, i);
      Prediction p;
      std::copy(probs.begin(), probs.end(), p.probabilities.begin());
      // max_element returns the first maximum, i.e. the lowest class code.
      const auto best = std::max_element(p.probabilities.begin(), p.probabilities.end());
      p.label = static_cast<GraspLabel>(best - p.probabilities.begin());
      out.push_back(p);
    }
  }
  return out;
}

Prediction predict(const PointNet<float>& model, const PointCloud& cloud) {
  return predict_many(model, std::span<const PointCloud>(&cloud, 1), 1).front();
}

template struct TNet<float>;
template struct TNet<double>;
template class PointNet<float>;
template class PointNet<double>;
template Tensor<float> tnet_forward(TNet<float>&, const Tensor<float>&, Mode, TNetCache<float>*);
template Tensor<double> tnet_forward(TNet<double>&, const Tensor<double>&, Mode,
                                     TNetCache<double>*);
template Tensor<float> tnet_backward(TNet<float>&, const TNetCache<float>&, const Tensor<float>&,
                                     bool);
template Tensor<double> tnet_backward(TNet<double>&, const TNetCache<double>&,
                                      const Tensor<double>&, bool);
template LossGrads<float> pointnet_loss(const Tensor<float>&, std::span<const int>,
                                        const Tensor<float>&, double);
template LossGrads<double> pointnet_loss(const Tensor<double>&, std::span<const int>,
                                         const Tensor<double>&, double);
template Tensor<float> make_batch(std::span<const PointCloud* const>, const PointNetConfig&);
template Tensor<double> make_batch(std::span<const PointCloud* const>, const PointNetConfig&);

}  // namespace grasp
