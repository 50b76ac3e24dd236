#include "grasp/nn/point_block.hpp"

#include <cmath>
#include <limits>

#include "grasp/nn/point_max.hpp"
#include "grasp/parallel.hpp"

namespace grasp::nn {

namespace {

template <typename T>
ConstMatMap<T> cloud_rows(const Tensor<T>& input, std::size_t b) {
  const std::size_t n = input.dim(1);
  const std::size_t d = input.dim(2);
  return ConstMatMap<T>(input.data() + b * n * d, static_cast<Eigen::Index>(n),
                        static_cast<Eigen::Index>(d));
}

template <typename T>
Tensor<T> forward_impl(const PointFeatureBlock<T>& block, const Tensor<T>& input, Mode mode,
                       PointFeatureCache<T>* cache, BatchNormLayer<T>* update) {
  if (input.rank() != 3 || input.dim(2) != block.in() || input.dim(1) == 0) {
    throw Error(Errc::ShapeMismatch, "point feature block expects batch x points x " +
                                         std::to_string(block.in()) + ", got " +
                                         shape_string(input.shape()));
  }
  const std::size_t nb = input.dim(0);
  const std::size_t np = input.dim(1);
  const std::size_t d = block.in();
  const std::size_t f = block.out();
  const double m = static_cast<double>(nb * np);
  const Eigen::MatrixXd w = block.dense.weight.value.matrix().template cast<double>();
  const auto& bias = block.dense.bias.value;
  const auto& gamma = block.bn.gamma.value;
  const auto& beta = block.bn.beta.value;

  std::vector<double> mean(f);
  std::vector<double> inv_std(f);
  Eigen::VectorXd xbar = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  Eigen::MatrixXd gram;

  if (mode == Mode::Train) {
    if (nb * np < 2) {
      throw Error(Errc::InsufficientBatch,
                  "batch norm in train mode needs at least 2 samples per feature");
    }
    std::vector<Eigen::VectorXd> sums(nb);
    parallel_for(nb, [&](std::size_t b) {
      // Column sums in T over short runs, accumulated in double.
      const auto x = cloud_rows(input, b);
      Eigen::VectorXd total = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
      for (Eigen::Index r0 = 0; r0 < x.rows(); r0 += 64) {
        const Eigen::Index rows = std::min<Eigen::Index>(64, x.rows() - r0);
        total += x.middleRows(r0, rows).colwise().sum().transpose().template cast<double>();
      }
      sums[b] = std::move(total);
    });
    for (const auto& s : sums) xbar += s;
    xbar /= m;

    // Centre on the rounded mean, then remove the rank-one residual exactly.
    const Eigen::Matrix<T, 1, Eigen::Dynamic> xbar_t = xbar.transpose().template cast<T>();
    const Eigen::VectorXd delta = xbar - xbar_t.transpose().template cast<double>();
    std::vector<Eigen::MatrixXd> grams(nb);
    parallel_for(nb, [&](std::size_t b) {
      const MatrixRM<T> centered = cloud_rows(input, b).rowwise() - xbar_t;
      MatrixRM<T> g = MatrixRM<T>::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
      g.template selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
      grams[b] = g.template selfadjointView<Eigen::Lower>().toDenseMatrix().template cast<double>();
    });
    gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (const auto& g : grams) gram += g;
    gram -= m * delta * delta.transpose();

    const Eigen::MatrixXd gw = gram * w;
    for (std::size_t j = 0; j < f; ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      const double var = std::max(0.0, w.col(col).dot(gw.col(col)) / m);
      mean[j] = xbar.dot(w.col(col)) + bias[j];
      inv_std[j] = 1.0 / std::sqrt(var + block.bn.epsilon);
      if (update) {
        const double rm = block.bn.running_mean[j];
        const double rv = block.bn.running_var[j];
        update->running_mean[j] =
            static_cast<T>(block.bn.momentum * rm + (1.0 - block.bn.momentum) * mean[j]);
        update->running_var[j] =
            static_cast<T>(block.bn.momentum * rv + (1.0 - block.bn.momentum) * var);
      }
    }
  } else {
    for (std::size_t j = 0; j < f; ++j) {
      mean[j] = block.bn.running_mean[j];
      inv_std[j] =
          1.0 / std::sqrt(static_cast<double>(block.bn.running_var[j]) + block.bn.epsilon);
    }
  }

  // Columns pre-multiplied by sign(gamma) so the selection is always a max.
  MatrixRM<T> signed_w = block.dense.weight.value.matrix();
  for (std::size_t j = 0; j < f; ++j) {
    if (gamma[j] < T{0}) signed_w.col(static_cast<Eigen::Index>(j)) *= T{-1};
  }

  std::vector<std::uint32_t> selected = argmax_points(input, signed_w);
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t j = 0; j < f; ++j) {
      // gamma == 0 makes every point tie; the first one wins.
      if (gamma[j] == T{0}) selected[b * f + j] = 0;
    }
  }

  Tensor<T> out({nb, f});
  std::vector<double> xhat_sel(nb * f);
  std::vector<double> pre(nb * f);
  const bool train = mode == Mode::Train;
  for (std::size_t b = 0; b < nb; ++b) {
    const T* x = input.data() + b * np * d;
    for (std::size_t j = 0; j < f; ++j) {
      const std::size_t k = b * f + j;
      const T* xs = x + static_cast<std::size_t>(selected[k]) * d;
      double h = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double xc = train ? xs[c] - xbar[static_cast<Eigen::Index>(c)] : xs[c];
        h += xc * w(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j));
      }
      h = train ? h * inv_std[j] : (h + bias[j] - mean[j]) * inv_std[j];
      xhat_sel[k] = h;
      pre[k] = gamma[j] * h + beta[j];
      out[k] = static_cast<T>(pre[k] > 0.0 ? pre[k] : 0.0);
    }
  }
  out.check_finite("point_feature_forward");

  if (cache) {
    cache->mode = mode;
    cache->batch = nb;
    cache->points = np;
    cache->input_mean = std::move(xbar);
    cache->gram = std::move(gram);
    cache->inv_std = std::move(inv_std);
    cache->selected = std::move(selected);
    cache->xhat_selected = std::move(xhat_sel);
    cache->pre_activation = std::move(pre);
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> point_feature_forward(PointFeatureBlock<T>& block, const Tensor<T>& input,
                                Mode mode, PointFeatureCache<T>* cache) {
  return forward_impl(block, input, mode, cache, &block.bn);
}

template <typename T>
Tensor<T> point_feature_infer(const PointFeatureBlock<T>& block, const Tensor<T>& input,
                              PointFeatureCache<T>* cache) {
  return forward_impl<T>(block, input, Mode::Eval, cache, nullptr);
}

template <typename T>
PointFeatureGrads<T> point_feature_backward(const PointFeatureBlock<T>& block,
                                            const PointFeatureCache<T>& cache,
                                            const Tensor<T>& input,
                                            const Tensor<T>& upstream,
                                            bool need_input_grad) {
  if (cache.mode != Mode::Train) {
    throw Error(Errc::InvalidArgument, "point feature backward needs a train-mode forward");
  }
  const std::size_t nb = cache.batch;
  const std::size_t np = cache.points;
  const std::size_t d = block.in();
  const std::size_t f = block.out();
  if (upstream.rank() != 2 || upstream.dim(0) != nb || upstream.dim(1) != f ||
      input.rank() != 3 || input.dim(0) != nb || input.dim(1) != np || input.dim(2) != d) {
    throw Error(Errc::ShapeMismatch, "point_feature_backward: upstream " +
                                         shape_string(upstream.shape()) + ", input " +
                                         shape_string(input.shape()));
  }
  const double m = static_cast<double>(nb * np);
  const Eigen::MatrixXd w = block.dense.weight.value.matrix().template cast<double>();
  const auto& gamma = block.bn.gamma.value;

  PointFeatureGrads<T> g;
  g.gamma = Tensor<T>({f});
  g.beta = Tensor<T>({f});

  // Sparse gradient w.r.t. the pre-bias activations, scaled by inv_std.
  std::vector<double> sp(nb * f, 0.0);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(f));
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(f));
  for (std::size_t j = 0; j < f; ++j) {
    double dgamma = 0.0;
    double dbeta = 0.0;
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t k = b * f + j;
      const double dy = cache.pre_activation[k] > 0.0 ? upstream[k] : 0.0;
      dgamma += dy * cache.xhat_selected[k];
      dbeta += dy;
      const double dxhat = gamma[j] * dy;
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * cache.xhat_selected[k];
      sp[k] = dxhat * cache.inv_std[j];
    }
    g.gamma[j] = static_cast<T>(dgamma);
    g.beta[j] = static_cast<T>(dbeta);
    const auto jj = static_cast<Eigen::Index>(j);
    a[jj] = sum_dxhat / m * cache.inv_std[j];
    c[jj] = sum_dxhat_xhat / m * cache.inv_std[j] * cache.inv_std[j];
  }

  // dW = X' Sp - M xbar a' - G W diag(c)
  Eigen::MatrixXd dw = -m * cache.input_mean * a.transpose() - (cache.gram * w) * c.asDiagonal();
  Eigen::VectorXd db = -m * a;
  for (std::size_t b = 0; b < nb; ++b) {
    const auto x = cloud_rows(input, b);
    for (std::size_t j = 0; j < f; ++j) {
      const double s = sp[b * f + j];
      if (s == 0.0) continue;
      const auto jj = static_cast<Eigen::Index>(j);
      dw.col(jj) += s * x.row(static_cast<Eigen::Index>(cache.selected[b * f + j]))
                            .transpose()
                            .template cast<double>();
      db[jj] += s;
    }
  }
  g.weight = Tensor<T>({d, f});
  g.weight.matrix() = dw.template cast<T>();
  g.bias = Tensor<T>({f});
  for (std::size_t j = 0; j < f; ++j) g.bias[j] = static_cast<T>(db[static_cast<Eigen::Index>(j)]);

  if (!need_input_grad) return g;

  // dX = Sp W' - 1 (W a)' - (X - xbar) W diag(c) W'
  const Eigen::MatrixXd p = -(w * c.asDiagonal() * w.transpose());
  const Eigen::Matrix<T, 1, Eigen::Dynamic> xbar_t =
      cache.input_mean.transpose().template cast<T>();
  const Eigen::VectorXd delta = cache.input_mean - xbar_t.transpose().template cast<double>();
  const Eigen::RowVectorXd row_const = -(w * a).transpose() - delta.transpose() * p;
  const MatrixRM<T> p_t = p.template cast<T>();
  const Eigen::Matrix<T, 1, Eigen::Dynamic> row_const_t = row_const.template cast<T>();
  const MatrixRM<T> w_t = block.dense.weight.value.matrix();

  g.input = Tensor<T>(input.shape());
  parallel_for(nb, [&](std::size_t b) {
    MatMap<T> dx(g.input.data() + b * np * d, static_cast<Eigen::Index>(np),
                 static_cast<Eigen::Index>(d));
    const auto x = cloud_rows(input, b);
    dx.noalias() = (x.rowwise() - xbar_t) * p_t;
    dx.rowwise() += row_const_t;
    for (std::size_t j = 0; j < f; ++j) {
      const double s = sp[b * f + j];
      if (s == 0.0) continue;
      dx.row(static_cast<Eigen::Index>(cache.selected[b * f + j])) +=
          static_cast<T>(s) * w_t.col(static_cast<Eigen::Index>(j)).transpose();
    }
  });
  return g;
}

template Tensor<float> point_feature_forward(PointFeatureBlock<float>&, const Tensor<float>&,
                                             Mode, PointFeatureCache<float>*);
template Tensor<double> point_feature_forward(PointFeatureBlock<double>&,
                                              const Tensor<double>&, Mode,
                                              PointFeatureCache<double>*);
template Tensor<float> point_feature_infer(const PointFeatureBlock<float>&,
                                           const Tensor<float>&, PointFeatureCache<float>*);
template Tensor<double> point_feature_infer(const PointFeatureBlock<double>&,
                                            const Tensor<double>&, PointFeatureCache<double>*);
template PointFeatureGrads<float> point_feature_backward(const PointFeatureBlock<float>&,
                                                         const PointFeatureCache<float>&,
                                                         const Tensor<float>&,
                                                         const Tensor<float>&, bool);
template PointFeatureGrads<double> point_feature_backward(const PointFeatureBlock<double>&,
                                                          const PointFeatureCache<double>&,
                                                          const Tensor<double>&,
                                                          const Tensor<double>&, bool);

}  // namespace grasp::nn
