#include "grasp/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "grasp/parallel.hpp"

namespace grasp::nn {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {

template <typename T>
void require_last_dim(const Tensor<T>& t, std::size_t want, const char* op) {
  if (t.rank() == 0 || t.cols() != want) {
    throw Error(Errc::ShapeMismatch, std::string(op) + ": expected last dimension " +
                                         std::to_string(want) + ", got " +
                                         shape_string(t.shape()));
  }
}

// Row-blocked product so large per-point products can use several workers.
template <typename A, typename B, typename Out>
void blocked_product(const A& a, const B& b, Out out) {
  const auto rows = static_cast<std::size_t>(a.rows());
  const std::size_t blocks =
      std::min<std::size_t>(thread_count(), std::max<std::size_t>(1, rows / 256));
  if (blocks <= 1) {
    out.noalias() = a * b;
    return;
  }
  parallel_for(blocks, [&](std::size_t i) {
    const auto begin = static_cast<Eigen::Index>(rows * i / blocks);
    const auto end = static_cast<Eigen::Index>(rows * (i + 1) / blocks);
    out.middleRows(begin, end - begin).noalias() = a.middleRows(begin, end - begin) * b;
  });
}

}  // namespace

template <typename T>
Tensor<T> dense_forward(const DenseLayer<T>& layer, const Tensor<T>& input) {
  require_last_dim(input, layer.in(), "dense_forward");
  Shape shape = input.shape();
  shape.back() = layer.out();
  Tensor<T> out(shape);
  blocked_product(input.matrix(), layer.weight.value.matrix(), out.matrix());
  auto o = out.matrix();
  const auto bias = layer.bias.value.matrix();  // 1 x out
  o.rowwise() += bias.row(0);
  out.check_finite("dense_forward");
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const DenseLayer<T>& layer, const Tensor<T>& input,
                             const Tensor<T>& upstream, bool need_input_grad) {
  require_last_dim(input, layer.in(), "dense_backward");
  require_last_dim(upstream, layer.out(), "dense_backward");
  if (input.rows() != upstream.rows()) {
    throw Error(Errc::ShapeMismatch, "dense_backward: input " + shape_string(input.shape()) +
                                         " vs upstream " + shape_string(upstream.shape()));
  }
  DenseGrads<T> g;
  g.weight = Tensor<T>({layer.in(), layer.out()});
  g.weight.matrix().noalias() = input.matrix().transpose() * upstream.matrix();
  g.bias = Tensor<T>({layer.out()});
  g.bias.matrix().row(0) = upstream.matrix().colwise().sum();
  if (need_input_grad) {
    g.input = Tensor<T>(input.shape());
    blocked_product(upstream.matrix(), layer.weight.value.matrix().transpose(),
                    g.input.matrix());
  }
  return g;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? input[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& upstream) {
  if (input.shape() != upstream.shape()) {
    throw Error(Errc::ShapeMismatch, "relu_backward shape mismatch");
  }
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? upstream[i] : T{0};
  return out;
}

namespace {

template <typename T>
Tensor<T> batchnorm_impl(const BatchNormLayer<T>& layer, const Tensor<T>& input, Mode mode,
                         BatchNormCache<T>* cache, BatchNormLayer<T>* update) {
  const std::size_t f = layer.features();
  require_last_dim(input, f, "batchnorm_forward");
  const std::size_t m = input.rows();
  const T* x = input.data();

  std::vector<double> mean(f, 0.0);
  std::vector<double> inv_std(f, 0.0);
  if (mode == Mode::Train) {
    if (m < 2) {
      throw Error(Errc::InsufficientBatch,
                  "batch norm in train mode needs at least 2 samples per feature");
    }
    std::vector<double> var(f, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < f; ++c) mean[c] += x[r * f + c];
    }
    for (auto& v : mean) v /= static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < f; ++c) {
        const double d = x[r * f + c] - mean[c];
        var[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < f; ++c) {
      var[c] /= static_cast<double>(m);
      inv_std[c] = 1.0 / std::sqrt(var[c] + layer.epsilon);
      if (update) {
        update->running_mean[c] = static_cast<T>(layer.momentum * layer.running_mean[c] +
                                                 (1.0 - layer.momentum) * mean[c]);
        update->running_var[c] = static_cast<T>(layer.momentum * layer.running_var[c] +
                                                (1.0 - layer.momentum) * var[c]);
      }
    }
  } else {
    for (std::size_t c = 0; c < f; ++c) {
      mean[c] = layer.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(layer.running_var[c]) + layer.epsilon);
    }
  }

  Tensor<T> out(input.shape());
  Tensor<T> xhat;
  if (cache) xhat = Tensor<T>(input.shape());
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      const double h = (x[r * f + c] - mean[c]) * inv_std[c];
      if (cache) xhat[r * f + c] = static_cast<T>(h);
      out[r * f + c] = static_cast<T>(layer.gamma.value[c] * h + layer.beta.value[c]);
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  out.check_finite("batchnorm_forward");
  return out;
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_forward(BatchNormLayer<T>& layer, const Tensor<T>& input, Mode mode,
                            BatchNormCache<T>* cache) {
  return batchnorm_impl(layer, input, mode, cache, &layer);
}

template <typename T>
Tensor<T> batchnorm_infer(const BatchNormLayer<T>& layer, const Tensor<T>& input,
                          BatchNormCache<T>* cache) {
  return batchnorm_impl<T>(layer, input, Mode::Eval, cache, nullptr);
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormLayer<T>& layer,
                                     const BatchNormCache<T>& cache,
                                     const Tensor<T>& upstream) {
  const std::size_t f = layer.features();
  if (upstream.shape() != cache.xhat.shape()) {
    throw Error(Errc::ShapeMismatch, "batchnorm_backward: upstream " +
                                         shape_string(upstream.shape()) + " vs cached " +
                                         shape_string(cache.xhat.shape()));
  }
  const std::size_t m = upstream.rows();
  const T* dy = upstream.data();
  const T* xh = cache.xhat.data();

  std::vector<double> sum_dy(f, 0.0);
  std::vector<double> sum_dy_xhat(f, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      sum_dy[c] += dy[r * f + c];
      sum_dy_xhat[c] += static_cast<double>(dy[r * f + c]) * xh[r * f + c];
    }
  }

  BatchNormGrads<T> g;
  g.gamma = Tensor<T>({f});
  g.beta = Tensor<T>({f});
  for (std::size_t c = 0; c < f; ++c) {
    g.gamma[c] = static_cast<T>(sum_dy_xhat[c]);
    g.beta[c] = static_cast<T>(sum_dy[c]);
  }

  g.input = Tensor<T>(upstream.shape());
  if (cache.mode == Mode::Eval) {
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < f; ++c) {
        g.input[r * f + c] =
            static_cast<T>(layer.gamma.value[c] * cache.inv_std[c] * dy[r * f + c]);
      }
    }
    return g;
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  std::vector<double> a(f);
  std::vector<double> b(f);
  std::vector<double> scale(f);
  for (std::size_t c = 0; c < f; ++c) {
    const double gam = layer.gamma.value[c];
    scale[c] = gam * cache.inv_std[c];
    a[c] = sum_dy[c] * inv_m;
    b[c] = sum_dy_xhat[c] * inv_m;
  }
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      const std::size_t i = r * f + c;
      g.input[i] = static_cast<T>(scale[c] * (dy[i] - a[c] - xh[i] * b[c]));
    }
  }
  return g;
}

template <typename T>
MaxPoolResult<T> maxpool_points_forward(const Tensor<T>& input) {
  if (input.rank() != 3 || input.dim(1) == 0) {
    throw Error(Errc::ShapeMismatch,
                "maxpool expects batch x points x features, got " + shape_string(input.shape()));
  }
  const std::size_t b = input.dim(0);
  const std::size_t n = input.dim(1);
  const std::size_t f = input.dim(2);
  MaxPoolResult<T> res{Tensor<T>({b, f}), std::vector<std::uint32_t>(b * f, 0)};
  for (std::size_t i = 0; i < b; ++i) {
    const T* base = input.data() + i * n * f;
    T* best = res.output.data() + i * f;
    std::uint32_t* arg = res.argmax.data() + i * f;
    std::copy(base, base + f, best);
    for (std::size_t p = 1; p < n; ++p) {
      const T* row = base + p * f;
      for (std::size_t c = 0; c < f; ++c) {
        if (row[c] > best[c]) {
          best[c] = row[c];
          arg[c] = static_cast<std::uint32_t>(p);
        }
      }
    }
  }
  return res;
}

template <typename T>
Tensor<T> maxpool_points_backward(std::span<const std::uint32_t> argmax,
                                  const Tensor<T>& upstream, std::size_t points) {
  if (upstream.rank() != 2 || argmax.size() != upstream.size()) {
    throw Error(Errc::ShapeMismatch, "maxpool_points_backward: argmax/upstream mismatch");
  }
  const std::size_t b = upstream.dim(0);
  const std::size_t f = upstream.dim(1);
  Tensor<T> grad({b, points, f});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t c = 0; c < f; ++c) {
      const std::uint32_t p = argmax[i * f + c];
      grad[(i * points + p) * f + c] += upstream[i * f + c];
    }
  }
  return grad;
}

template <typename T>
std::vector<double> softmax_row(const Tensor<T>& logits, std::size_t row) {
  const std::size_t c = logits.cols();
  const T* z = logits.data() + row * c;
  const double top = *std::max_element(z, z + c);
  std::vector<double> p(c);
  double total = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    p[j] = std::exp(static_cast<double>(z[j]) - top);
    total += p[j];
  }
  for (auto& v : p) v /= total;
  return p;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error(Errc::ShapeMismatch, "softmax_cross_entropy: logits " +
                                         shape_string(logits.shape()) + " vs " +
                                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.dim(0);
  const std::size_t c = logits.dim(1);
  LossResult<T> res{0.0, Tensor<T>(logits.shape())};
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw Error(Errc::InvalidLabel, "label " + std::to_string(labels[i]) +
                                          " outside [0, " + std::to_string(c) + ")",
                  static_cast<std::int64_t>(i));
    }
    const T* z = logits.data() + i * c;
    const double top = *std::max_element(z, z + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(static_cast<double>(z[j]) - top);
    const double log_total = std::log(total);
    const auto y = static_cast<std::size_t>(labels[i]);
    res.loss += log_total - (static_cast<double>(z[y]) - top);
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(static_cast<double>(z[j]) - top - log_total);
      res.grad[i * c + j] = static_cast<T>((p - (j == y ? 1.0 : 0.0)) / static_cast<double>(b));
    }
  }
  res.loss /= static_cast<double>(b);
  return res;
}

template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double keep_prob, Mode mode,
                                 Rng& rng) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw Error(Errc::InvalidArgument, "dropout keep probability must be in (0, 1]");
  }
  DropoutResult<T> res;
  if (mode == Mode::Eval || keep_prob == 1.0) {
    res.output = input;
    res.mask = Tensor<T>(input.shape(), T{1});
    return res;
  }
  res.output = Tensor<T>(input.shape());
  res.mask = Tensor<T>(input.shape());
  std::bernoulli_distribution keep(keep_prob);
  const T scale = static_cast<T>(1.0 / keep_prob);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const T m = keep(rng) ? scale : T{0};
    res.mask[i] = m;
    res.output[i] = input[i] * m;
  }
  return res;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& mask, const Tensor<T>& upstream) {
  if (mask.shape() != upstream.shape()) {
    throw Error(Errc::ShapeMismatch, "dropout_backward shape mismatch");
  }
  Tensor<T> g(upstream.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = upstream[i] * mask[i];
  return g;
}

namespace {

constexpr std::size_t kChunk = 256;

// Row-chunk worker over an m-row matrix; chunks are independent.
template <typename Fn>
void for_chunks(std::size_t m, Fn&& fn) {
  const std::size_t chunks = (m + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t i) {
    const std::size_t begin = i * kChunk;
    fn(begin, std::min(m, begin + kChunk) - begin);
  });
}

// xhat = (z - mean) * inv_std in place, out = relu(gamma * xhat + beta), for
// rows [r0, r0 + rows). Elementwise work stays in T so it vectorizes.
template <typename T>
void normalize_relu(Tensor<T>& z, Tensor<T>& out, const std::vector<double>& mean,
                    const std::vector<double>& inv_std, const T* gamma, const T* beta,
                    std::size_t r0, std::size_t rows) {
  const std::size_t f = mean.size();
  std::vector<T> mu(f);
  std::vector<T> is(f);
  for (std::size_t c = 0; c < f; ++c) {
    mu[c] = static_cast<T>(mean[c]);
    is[c] = static_cast<T>(inv_std[c]);
  }
  for (std::size_t r = r0; r < r0 + rows; ++r) {
    T* zr = z.data() + r * f;
    T* yr = out.data() + r * f;
    for (std::size_t c = 0; c < f; ++c) {
      const T h = (zr[c] - mu[c]) * is[c];
      zr[c] = h;
      yr[c] = std::max(gamma[c] * h + beta[c], T{0});
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> dense_bn_relu_forward(const DenseLayer<T>& dense, const BatchNormLayer<T>& bn,
                                const Tensor<T>& input, Mode mode, BatchNormCache<T>* cache,
                                BatchNormLayer<T>* update) {
  require_last_dim(input, dense.in(), "dense_bn_relu_forward");
  require_last_dim(bn.gamma.value, dense.out(), "dense_bn_relu_forward");
  const std::size_t m = input.rows();
  const std::size_t f = dense.out();
  const auto x = input.matrix();
  const auto w = dense.weight.value.matrix();
  const T* bias = dense.bias.value.data();
  const T* gamma = bn.gamma.value.data();
  const T* beta = bn.beta.value.data();

  Shape shape = input.shape();
  shape.back() = f;
  auto z = Tensor<T>::uninitialized(shape);  // pre-activation, normalized in place into xhat
  auto out = Tensor<T>::uninitialized(shape);
  auto zm = z.matrix();

  std::vector<double> mean(f, 0.0);
  std::vector<double> inv_std(f, 0.0);
  if (mode == Mode::Train) {
    if (m < 2) {
      throw Error(Errc::InsufficientBatch,
                  "batch norm in train mode needs at least 2 samples per feature");
    }
    // Each chunk leaves its mean and squared deviation while still in cache;
    // they are merged in chunk order so results do not depend on threads.
    const std::size_t chunks = (m + kChunk - 1) / kChunk;
    std::vector<double> partial(chunks * 2 * f, 0.0);
    for_chunks(m, [&](std::size_t r0, std::size_t rows) {
      const auto b0 = static_cast<Eigen::Index>(r0);
      const auto n = static_cast<Eigen::Index>(rows);
      zm.middleRows(b0, n).noalias() = x.middleRows(b0, n) * w;
      std::vector<T> acc(f, T{0});
      for (std::size_t r = r0; r < r0 + rows; ++r) {
        T* zr = z.data() + r * f;
        for (std::size_t c = 0; c < f; ++c) {
          zr[c] += bias[c];
          acc[c] += zr[c];
        }
      }
      double* dst = partial.data() + (r0 / kChunk) * 2 * f;
      for (std::size_t c = 0; c < f; ++c) {
        dst[c] = static_cast<double>(acc[c]) / static_cast<double>(rows);
        acc[c] = static_cast<T>(dst[c]);
      }
      std::vector<T> sq(f, T{0});
      for (std::size_t r = r0; r < r0 + rows; ++r) {
        const T* zr = z.data() + r * f;
        for (std::size_t c = 0; c < f; ++c) {
          const T d = zr[c] - acc[c];
          sq[c] += d * d;
        }
      }
      std::copy(sq.begin(), sq.end(), dst + f);
    });
    // Pairwise-update merge of (count, mean, squared deviation).
    std::vector<double> m2(f, 0.0);
    double count = 0.0;
    for (std::size_t i = 0; i < chunks; ++i) {
      const double n = static_cast<double>(std::min(m, (i + 1) * kChunk) - i * kChunk);
      const double total = count + n;
      const double* src = partial.data() + i * 2 * f;
      for (std::size_t c = 0; c < f; ++c) {
        const double delta = src[c] - mean[c];
        mean[c] += delta * n / total;
        m2[c] += src[f + c] + delta * delta * count * n / total;
      }
      count = total;
    }
    for (std::size_t c = 0; c < f; ++c) {
      const double var = m2[c] / static_cast<double>(m);
      inv_std[c] = 1.0 / std::sqrt(var + bn.epsilon);
      if (update) {
        update->running_mean[c] =
            static_cast<T>(bn.momentum * bn.running_mean[c] + (1.0 - bn.momentum) * mean[c]);
        update->running_var[c] =
            static_cast<T>(bn.momentum * bn.running_var[c] + (1.0 - bn.momentum) * var);
      }
    }
    for_chunks(m, [&](std::size_t r0, std::size_t rows) {
      normalize_relu(z, out, mean, inv_std, gamma, beta, r0, rows);
    });
  } else {
    for (std::size_t c = 0; c < f; ++c) {
      mean[c] = static_cast<double>(bn.running_mean[c]) - bias[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(bn.running_var[c]) + bn.epsilon);
    }
    for_chunks(m, [&](std::size_t r0, std::size_t rows) {
      const auto b0 = static_cast<Eigen::Index>(r0);
      const auto n = static_cast<Eigen::Index>(rows);
      zm.middleRows(b0, n).noalias() = x.middleRows(b0, n) * w;
      normalize_relu(z, out, mean, inv_std, gamma, beta, r0, rows);
    });
  }
  if (cache) {
    cache->mode = mode;
    cache->xhat = std::move(z);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
DenseBnReluGrads<T> dense_bn_relu_backward(const DenseLayer<T>& dense,
                                           const BatchNormLayer<T>& bn,
                                           const BatchNormCache<T>& cache,
                                           const Tensor<T>& input, const Tensor<T>& output,
                                           Tensor<T> upstream, bool need_input_grad) {
  const std::size_t f = dense.out();
  require_last_dim(input, dense.in(), "dense_bn_relu_backward");
  if (upstream.shape() != output.shape() || upstream.shape() != cache.xhat.shape() ||
      upstream.cols() != f || upstream.rows() != input.rows()) {
    throw Error(Errc::ShapeMismatch, "dense_bn_relu_backward: upstream " +
                                         shape_string(upstream.shape()) + ", output " +
                                         shape_string(output.shape()) + ", input " +
                                         shape_string(input.shape()));
  }
  const std::size_t m = upstream.rows();
  const std::size_t chunks = (m + kChunk - 1) / kChunk;
  T* dy = upstream.data();
  const T* xh = cache.xhat.data();
  const T* y = output.data();

  std::vector<double> partial(chunks * 2 * f, 0.0);
  for_chunks(m, [&](std::size_t r0, std::size_t rows) {
    std::vector<T> s_dy(f, T{0});
    std::vector<T> s_dyx(f, T{0});
    for (std::size_t r = r0; r < r0 + rows; ++r) {
      for (std::size_t c = 0; c < f; ++c) {
        const std::size_t i = r * f + c;
        const T g = y[i] > T{0} ? dy[i] : T{0};
        dy[i] = g;
        s_dy[c] += g;
        s_dyx[c] += g * xh[i];
      }
    }
    double* dst = partial.data() + (r0 / kChunk) * 2 * f;
    std::copy(s_dy.begin(), s_dy.end(), dst);
    std::copy(s_dyx.begin(), s_dyx.end(), dst + f);
  });
  std::vector<double> sum_dy(f, 0.0);
  std::vector<double> sum_dyx(f, 0.0);
  for (std::size_t i = 0; i < chunks; ++i) {
    for (std::size_t c = 0; c < f; ++c) {
      sum_dy[c] += partial[i * 2 * f + c];
      sum_dyx[c] += partial[i * 2 * f + f + c];
    }
  }

  DenseBnReluGrads<T> g;
  g.gamma = Tensor<T>({f});
  g.beta = Tensor<T>({f});
  std::vector<T> scale(f);
  std::vector<T> a(f, T{0});
  std::vector<T> b(f, T{0});
  const bool train = cache.mode == Mode::Train;
  for (std::size_t c = 0; c < f; ++c) {
    g.gamma[c] = static_cast<T>(sum_dyx[c]);
    g.beta[c] = static_cast<T>(sum_dy[c]);
    scale[c] = static_cast<T>(bn.gamma.value[c] * cache.inv_std[c]);
    if (train) {
      a[c] = static_cast<T>(sum_dy[c] / static_cast<double>(m));
      b[c] = static_cast<T>(sum_dyx[c] / static_cast<double>(m));
    }
  }
  // upstream becomes d(pre-activation) in place; the input gradient of each
  // chunk is taken while its rows are still in cache.
  if (need_input_grad) g.input = Tensor<T>::uninitialized(input.shape());
  const auto wt = dense.weight.value.matrix().transpose();
  const auto dz_all = upstream.matrix();
  for_chunks(m, [&](std::size_t r0, std::size_t rows) {
    std::vector<T> s_dz(f, T{0});
    for (std::size_t r = r0; r < r0 + rows; ++r) {
      for (std::size_t c = 0; c < f; ++c) {
        const std::size_t i = r * f + c;
        const T dz = scale[c] * (dy[i] - a[c] - xh[i] * b[c]);
        dy[i] = dz;
        s_dz[c] += dz;
      }
    }
    std::copy(s_dz.begin(), s_dz.end(), partial.begin() + static_cast<std::ptrdiff_t>((r0 / kChunk) * 2 * f));
    if (need_input_grad) {
      const auto b0 = static_cast<Eigen::Index>(r0);
      const auto n = static_cast<Eigen::Index>(rows);
      g.input.matrix().middleRows(b0, n).noalias() = dz_all.middleRows(b0, n) * wt;
    }
  });
  g.bias = Tensor<T>({f});
  for (std::size_t c = 0; c < f; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < chunks; ++i) s += partial[i * 2 * f + c];
    g.bias[c] = static_cast<T>(s);
  }
  g.weight = Tensor<T>::uninitialized({dense.in(), f});
  g.weight.matrix().noalias() = input.matrix().transpose() * upstream.matrix();
  return g;
}

#define GRASP_INSTANTIATE_LAYERS(T)                                                       \
  template Tensor<T> dense_forward(const DenseLayer<T>&, const Tensor<T>&);               \
  template DenseGrads<T> dense_backward(const DenseLayer<T>&, const Tensor<T>&,           \
                                        const Tensor<T>&, bool);                          \
  template Tensor<T> relu_forward(const Tensor<T>&);                                      \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> batchnorm_forward(BatchNormLayer<T>&, const Tensor<T>&, Mode,        \
                                       BatchNormCache<T>*);                               \
  template Tensor<T> batchnorm_infer(const BatchNormLayer<T>&, const Tensor<T>&,          \
                                     BatchNormCache<T>*);                                 \
  template BatchNormGrads<T> batchnorm_backward(const BatchNormLayer<T>&,                 \
                                                const BatchNormCache<T>&,                 \
                                                const Tensor<T>&);                        \
  template MaxPoolResult<T> maxpool_points_forward(const Tensor<T>&);                     \
  template Tensor<T> maxpool_points_backward(std::span<const std::uint32_t>,              \
                                             const Tensor<T>&, std::size_t);              \
  template std::vector<double> softmax_row(const Tensor<T>&, std::size_t);                \
  template LossResult<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);   \
  template DropoutResult<T> dropout_forward(const Tensor<T>&, double, Mode, Rng&);        \
  template Tensor<T> dropout_backward(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> dense_bn_relu_forward(const DenseLayer<T>&, const BatchNormLayer<T>&, \
                                           const Tensor<T>&, Mode, BatchNormCache<T>*,     \
                                           BatchNormLayer<T>*);                            \
  template DenseBnReluGrads<T> dense_bn_relu_backward(                                     \
      const DenseLayer<T>&, const BatchNormLayer<T>&, const BatchNormCache<T>&,            \
      const Tensor<T>&, const Tensor<T>&, Tensor<T>, bool);

GRASP_INSTANTIATE_LAYERS(float)
GRASP_INSTANTIATE_LAYERS(double)

}  // namespace grasp::nn
