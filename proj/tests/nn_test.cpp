#include <array>

#include "grasp/nn/adam.hpp"
#include "grasp/nn/layers.hpp"
#include "grasp/nn/point_block.hpp"
#include "grasp/nn/point_max.hpp"
#include "support.hpp"

namespace grasp::nn {
namespace {

using test::numeric_gradient;
using test::random_tensor;
using test::relative_error;
using test::to_vector;
using TD = Tensor<double>;

// Weighted sum of an output against a fixed random probe; its gradient with
// respect to the output is the probe itself.
double probe_dot(const TD& out, const TD& probe) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * probe[i];
  return s;
}

DenseLayer<double> random_dense(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer<double> layer("d", in, out);
  layer.weight.value = random_tensor({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  layer.bias.value = random_tensor({out}, rng, 0.5);
  return layer;
}

BatchNormLayer<double> random_bn(std::size_t features, Rng& rng) {
  BatchNormLayer<double> bn("bn", features);
  bn.gamma.value = random_tensor({features}, rng, 1.0);
  bn.beta.value = random_tensor({features}, rng, 0.5);
  return bn;
}

// Pushes every entry at least `gap` away from zero, keeping its sign.
void away_from_zero(TD& t, double gap) {
  for (auto& v : t.values()) v = v >= 0 ? v + gap : v - gap;
}

TEST(Dense, IdentityWeightsPassInputThrough) {
  Rng rng(1);
  DenseLayer<double> layer("d", 5, 5);
  for (std::size_t i = 0; i < 5; ++i) layer.weight.value[i * 5 + i] = 1.0;
  const TD x = random_tensor({3, 4, 5}, rng);
  EXPECT_EQ(to_vector(dense_forward(layer, x)), to_vector(x));
}

TEST(Dense, ScalarHandArithmetic) {
  DenseLayer<double> layer("d", 1, 1);
  layer.weight.value[0] = 3;
  layer.bias.value[0] = 1;
  const TD x({1, 1}, std::vector<double>{2});
  EXPECT_EQ(dense_forward(layer, x)[0], 7.0);
  const auto g = dense_backward(layer, x, TD({1, 1}, std::vector<double>{1}));
  EXPECT_EQ(g.weight[0], 2.0);
  EXPECT_EQ(g.input[0], 3.0);
  EXPECT_EQ(g.bias[0], 1.0);
}

TEST(Dense, MatchesTripleLoopOracle) {
  Rng rng(2);
  const auto layer = random_dense(16, 32, rng);
  const TD x = random_tensor({4, 8, 16}, rng);
  const TD y = dense_forward(layer, x);
  ASSERT_EQ(y.shape(), (Shape{4, 8, 32}));
  for (std::size_t r = 0; r < 32; ++r) {
    for (std::size_t o = 0; o < 32; ++o) {
      double acc = layer.bias.value[o];
      for (std::size_t i = 0; i < 16; ++i) acc += x[r * 16 + i] * layer.weight.value[i * 32 + o];
      EXPECT_NEAR(y[r * 32 + o], acc, 1e-6);
    }
  }
}

TEST(Dense, ZeroUpstreamGivesZeroGrads) {
  Rng rng(3);
  const auto layer = random_dense(6, 4, rng);
  const TD x = random_tensor({5, 6}, rng);
  const auto g = dense_backward(layer, x, TD({5, 4}));
  for (const TD* t : {&g.input, &g.weight, &g.bias}) {
    for (double v : t->values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Dense, ShapeMismatch) {
  DenseLayer<double> layer("d", 3, 2);
  EXPECT_GRASP_ERROR(dense_forward(layer, TD({2, 4})), Errc::ShapeMismatch);
  EXPECT_GRASP_ERROR(dense_backward(layer, TD({2, 3}), TD({2, 3})), Errc::ShapeMismatch);
}

TEST(Dense, FiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t in = 2 + static_cast<std::size_t>(trial) * 3;
    const std::size_t out = 7 - static_cast<std::size_t>(trial);
    auto layer = random_dense(in, out, rng);
    TD x = random_tensor({3, 2, in}, rng);
    const TD probe = random_tensor({3, 2, out}, rng);
    auto f = [&] { return probe_dot(dense_forward(layer, x), probe); };
    const auto g = dense_backward(layer, x, probe);
    EXPECT_LT(relative_error(to_vector(g.input), numeric_gradient(x, f)), 1e-6);
    EXPECT_LT(relative_error(to_vector(g.weight), numeric_gradient(layer.weight.value, f)), 1e-6);
    EXPECT_LT(relative_error(to_vector(g.bias), numeric_gradient(layer.bias.value, f)), 1e-6);
  }
}

TEST(Relu, HandExamples) {
  const TD x({3}, std::vector<double>{-1, 0, 2});
  EXPECT_EQ(to_vector(relu_forward(x)), (std::vector<double>{0, 0, 2}));
  const TD x2({2}, std::vector<double>{-1, 2});
  const TD up({2}, std::vector<double>{5, 7});
  EXPECT_EQ(to_vector(relu_backward(x2, up)), (std::vector<double>{0, 7}));
  EXPECT_EQ(relu_backward(TD({1}), TD({1}, 3.0))[0], 0.0);
}

TEST(Relu, FiniteDifferencesAwayFromKink) {
  Rng rng(5);
  TD x = random_tensor({4, 9}, rng);
  away_from_zero(x, 1e-3);
  const TD probe = random_tensor({4, 9}, rng);
  auto f = [&] { return probe_dot(relu_forward(x), probe); };
  EXPECT_LT(relative_error(to_vector(relu_backward(x, probe)), numeric_gradient(x, f)), 1e-6);
}

TEST(BatchNorm, EvalWithUnitRunningStats) {
  Rng rng(6);
  BatchNormLayer<double> bn("bn", 4);
  const TD x = random_tensor({3, 5, 4}, rng);
  const TD y = batchnorm_forward(bn, x, Mode::Eval);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i] / std::sqrt(1 + 1e-5), 1e-15);
  EXPECT_EQ(to_vector(bn.running_mean), std::vector<double>(4, 0.0));
}

TEST(BatchNorm, TrainOnSymmetricColumn) {
  BatchNormLayer<double> bn("bn", 1);
  const TD x({2, 1}, std::vector<double>{-1, 1});
  const TD y = batchnorm_forward(bn, x, Mode::Train);
  EXPECT_NEAR(y[0], -1 / std::sqrt(1 + 1e-5), 1e-12);
  EXPECT_NEAR(y[1], 1 / std::sqrt(1 + 1e-5), 1e-12);
  // Running stats move 10% toward the batch (mean 0, biased var 1).
  EXPECT_NEAR(bn.running_mean[0], 0.0, 1e-15);
  EXPECT_NEAR(bn.running_var[0], 1.0, 1e-15);
}

TEST(BatchNorm, RunningStatsFollowMomentum) {
  BatchNormLayer<double> bn("bn", 1);
  const TD x({4, 1}, std::vector<double>{1, 2, 3, 6});
  batchnorm_forward(bn, x, Mode::Train);
  // Batch mean 3, biased variance 3.5.
  EXPECT_NEAR(bn.running_mean[0], 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(bn.running_var[0], 0.9 + 0.1 * 3.5, 1e-12);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(7);
  BatchNormLayer<double> bn("bn", 3);
  bn.gamma.value.fill(0.0);
  bn.beta.value = TD({3}, std::vector<double>{1, -2, 0.5});
  const TD y = batchnorm_forward(bn, random_tensor({6, 3}, rng), Mode::Train);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t f = 0; f < 3; ++f) EXPECT_EQ(y[r * 3 + f], bn.beta.value[f]);
  }
}

TEST(BatchNorm, ConstantFeatureStaysFinite) {
  BatchNormLayer<double> bn("bn", 2);
  const TD x({5, 2}, 4.0);
  BatchNormCache<double> cache;
  const TD y = batchnorm_forward(bn, x, Mode::Train, &cache);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  const auto g = batchnorm_backward(bn, cache, TD({5, 2}, 1.0));
  for (const TD* t : {&g.input, &g.gamma, &g.beta}) t->check_finite("test");
}

TEST(BatchNorm, ZeroUpstreamAndErrors) {
  Rng rng(8);
  auto bn = random_bn(3, rng);
  BatchNormCache<double> cache;
  batchnorm_forward(bn, random_tensor({4, 3}, rng), Mode::Train, &cache);
  const auto g = batchnorm_backward(bn, cache, TD({4, 3}));
  for (const TD* t : {&g.input, &g.gamma, &g.beta}) {
    for (double v : t->values()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_GRASP_ERROR(batchnorm_forward(bn, TD({1, 3}), Mode::Train), Errc::InsufficientBatch);
  EXPECT_GRASP_ERROR(batchnorm_forward(bn, TD({4, 2}), Mode::Train), Errc::ShapeMismatch);
  EXPECT_GRASP_ERROR(batchnorm_backward(bn, cache, TD({4, 2})), Errc::ShapeMismatch);
}

TEST(BatchNorm, FiniteDifferences) {
  Rng rng(9);
  auto bn = random_bn(5, rng);
  TD x = random_tensor({3, 4, 5}, rng, 2.0);
  const TD probe = random_tensor({3, 4, 5}, rng);
  BatchNormCache<double> cache;
  batchnorm_forward(bn, x, Mode::Train, &cache);
  const auto g = batchnorm_backward(bn, cache, probe);
  auto f = [&] { return probe_dot(batchnorm_forward(bn, x, Mode::Train), probe); };
  EXPECT_LT(relative_error(to_vector(g.input), numeric_gradient(x, f)), 1e-5);
  EXPECT_LT(relative_error(to_vector(g.gamma), numeric_gradient(bn.gamma.value, f)), 1e-5);
  EXPECT_LT(relative_error(to_vector(g.beta), numeric_gradient(bn.beta.value, f)), 1e-5);
}

TEST(MaxPool, HandExample) {
  const TD x({1, 2, 2}, std::vector<double>{1, 5, 3, 2});
  const auto r = maxpool_points_forward(x);
  EXPECT_EQ(to_vector(r.output), (std::vector<double>{3, 5}));
  EXPECT_EQ(r.argmax, (std::vector<std::uint32_t>{1, 0}));
  const TD up({1, 2}, std::vector<double>{10, 20});
  EXPECT_EQ(to_vector(maxpool_points_backward<double>(r.argmax, up, 2)),
            (std::vector<double>{0, 20, 10, 0}));
  for (double v : maxpool_points_backward<double>(r.argmax, TD({1, 2}), 2).values()) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(MaxPool, TiesGoToLowestIndexAndSinglePointIsIdentity) {
  const TD ties({1, 3, 1}, std::vector<double>{2, 2, 2});
  EXPECT_EQ(maxpool_points_forward(ties).argmax[0], 0u);
  Rng rng(10);
  const TD one = random_tensor({2, 1, 4}, rng);
  EXPECT_EQ(to_vector(maxpool_points_forward(one).output), to_vector(one));
}

TEST(MaxPool, PermutationInvariant) {
  Rng rng(11);
  const std::size_t points = 17;
  const TD x = random_tensor({2, points, 6}, rng);
  const auto base = to_vector(maxpool_points_forward(x).output);
  std::vector<std::size_t> perm(points);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 50; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    TD y({2, points, 6});
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t p = 0; p < points; ++p) {
        for (std::size_t f = 0; f < 6; ++f) y[(b * points + p) * 6 + f] = x[(b * points + perm[p]) * 6 + f];
      }
    }
    EXPECT_EQ(to_vector(maxpool_points_forward(y).output), base);
  }
}

TEST(MaxPool, FiniteDifferences) {
  Rng rng(12);
  TD x = random_tensor({2, 6, 3}, rng);
  const TD probe = random_tensor({2, 3}, rng);
  const auto r = maxpool_points_forward(x);
  auto f = [&] { return probe_dot(maxpool_points_forward(x).output, probe); };
  EXPECT_LT(relative_error(to_vector(maxpool_points_backward<double>(r.argmax, probe, 6)),
                           numeric_gradient(x, f)),
            1e-6);
}

TEST(CrossEntropy, AnalyticValues) {
  const std::vector<int> label{2};
  EXPECT_NEAR(softmax_cross_entropy(TD({1, 4}), label).loss, std::log(4.0), 1e-12);
  EXPECT_NEAR(softmax_cross_entropy(TD({1, 4}), label).loss, 1.386294, 1e-6);
  TD sure({1, 4});
  sure[2] = 30;
  EXPECT_LT(softmax_cross_entropy(sure, label).loss, 1e-9);
  EXPECT_GRASP_ERROR(softmax_cross_entropy(TD({1, 4}), std::vector<int>{4}), Errc::InvalidLabel);
  EXPECT_GRASP_ERROR(softmax_cross_entropy(TD({1, 4}), std::vector<int>{-1}), Errc::InvalidLabel);
}

TEST(CrossEntropy, SoftmaxRowSumsToOneForHugeLogits) {
  const TD logits({1, 4}, std::vector<double>{1000, -1000, 999, 0});
  const auto p = softmax_row(logits, 0);
  EXPECT_NEAR(p[0] + p[1] + p[2] + p[3], 1.0, 1e-12);
  EXPECT_NEAR(p[0] / p[2], std::exp(1.0), 1e-9);
}

TEST(CrossEntropy, FiniteDifferences) {
  Rng rng(13);
  TD logits = random_tensor({5, 4}, rng, 2.0);
  const std::vector<int> labels{0, 3, 1, 2, 3};
  const auto r = softmax_cross_entropy(logits, labels);
  auto f = [&] { return softmax_cross_entropy(logits, labels).loss; };
  EXPECT_LT(relative_error(to_vector(r.grad), numeric_gradient(logits, f)), 1e-7);
}

TEST(Dropout, IdentityCases) {
  Rng rng(14);
  const TD x = random_tensor({10, 10}, rng);
  EXPECT_EQ(to_vector(dropout_forward(x, 1.0, Mode::Train, rng).output), to_vector(x));
  EXPECT_EQ(to_vector(dropout_forward(x, 0.7, Mode::Eval, rng).output), to_vector(x));
}

TEST(Dropout, SurvivorFraction) {
  Rng rng(15);
  const TD x({1000, 1000}, 1.0);
  const auto r = dropout_forward(x, 0.7, Mode::Train, rng);
  std::size_t alive = 0;
  for (std::size_t i = 0; i < r.output.size(); ++i) {
    if (r.output[i] != 0.0) {
      ++alive;
      EXPECT_NEAR(r.output[i], 1 / 0.7, 1e-15);
    }
  }
  const double fraction = static_cast<double>(alive) / 1e6;
  EXPECT_GE(fraction, 0.698);
  EXPECT_LE(fraction, 0.702);
}

TEST(Dropout, BackwardAppliesMask) {
  Rng rng(16);
  TD x = random_tensor({4, 8}, rng);
  const TD probe = random_tensor({4, 8}, rng);
  const auto r = dropout_forward(x, 0.5, Mode::Train, rng);
  // With the mask fixed, dropout is linear in its input.
  auto f = [&] {
    TD y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= r.mask[i];
    return probe_dot(y, probe);
  };
  EXPECT_LT(relative_error(to_vector(dropout_backward(r.mask, probe)), numeric_gradient(x, f)),
            1e-9);
}

TEST(DenseBnRelu, MatchesComposedLayers) {
  Rng rng(17);
  const auto dense = random_dense(7, 9, rng);
  auto bn_fused = random_bn(9, rng);
  auto bn_plain = bn_fused;
  // Enough rows to span several internal chunks.
  const TD x = random_tensor({3, 300, 7}, rng);
  BatchNormCache<double> cache;
  const TD fused = dense_bn_relu_forward(dense, bn_fused, x, Mode::Train, &cache, &bn_fused);
  const TD plain = relu_forward(batchnorm_forward(bn_plain, dense_forward(dense, x), Mode::Train));
  EXPECT_LT(relative_error(to_vector(fused), to_vector(plain)), 1e-12);
  EXPECT_LT(relative_error(to_vector(bn_fused.running_mean), to_vector(bn_plain.running_mean)), 1e-12);
  EXPECT_LT(relative_error(to_vector(bn_fused.running_var), to_vector(bn_plain.running_var)), 1e-12);

  const TD eval_fused = dense_bn_relu_forward(dense, bn_fused, x, Mode::Eval);
  const TD eval_plain =
      relu_forward(batchnorm_infer(bn_plain, dense_forward(dense, x)));
  EXPECT_LT(relative_error(to_vector(eval_fused), to_vector(eval_plain)), 1e-12);
}

TEST(DenseBnRelu, FiniteDifferences) {
  Rng rng(18);
  auto dense = random_dense(4, 6, rng);
  auto bn = random_bn(6, rng);
  TD x = random_tensor({2, 5, 4}, rng);
  const TD probe = random_tensor({2, 5, 6}, rng);
  BatchNormCache<double> cache;
  const TD out = dense_bn_relu_forward(dense, bn, x, Mode::Train, &cache);
  const auto g = dense_bn_relu_backward(dense, bn, cache, x, out, probe);
  auto f = [&] { return probe_dot(dense_bn_relu_forward(dense, bn, x, Mode::Train), probe); };
  EXPECT_LT(relative_error(to_vector(g.input), numeric_gradient(x, f)), 1e-5);
  EXPECT_LT(relative_error(to_vector(g.weight), numeric_gradient(dense.weight.value, f)), 1e-5);
  EXPECT_LT(relative_error(to_vector(g.gamma), numeric_gradient(bn.gamma.value, f)), 1e-5);
  EXPECT_LT(relative_error(to_vector(g.beta), numeric_gradient(bn.beta.value, f)), 1e-5);
  // The bias cancels through the batch mean.
  for (double v : g.bias.values()) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_TRUE(dense_bn_relu_backward(dense, bn, cache, x, out, probe, false).input.empty());
}

TEST(PointFeatureBlock, MatchesComposedLayers) {
  Rng rng(19);
  PointFeatureBlock<double> block("blk", 5, 8);
  block.dense = random_dense(5, 8, rng);
  block.bn = random_bn(8, rng);
  auto bn_plain = block.bn;
  const TD x = random_tensor({3, 40, 5}, rng);
  const TD pooled = point_feature_forward(block, x, Mode::Train);
  const TD z = relu_forward(batchnorm_forward(bn_plain, dense_forward(block.dense, x), Mode::Train));
  const TD plain = maxpool_points_forward(z).output;
  EXPECT_LT(relative_error(to_vector(pooled), to_vector(plain)), 1e-10);
  EXPECT_LT(relative_error(to_vector(block.bn.running_var), to_vector(bn_plain.running_var)), 1e-10);

  const TD eval = point_feature_infer(block, x);
  const TD eval_plain =
      maxpool_points_forward(relu_forward(batchnorm_infer(bn_plain, dense_forward(block.dense, x))))
          .output;
  EXPECT_LT(relative_error(to_vector(eval), to_vector(eval_plain)), 1e-10);
}

TEST(PointFeatureBlock, FiniteDifferences) {
  Rng rng(20);
  PointFeatureBlock<double> block("blk", 4, 6);
  block.dense = random_dense(4, 6, rng);
  block.bn = random_bn(6, rng);
  TD x = random_tensor({2, 9, 4}, rng);
  const TD probe = random_tensor({2, 6}, rng);
  PointFeatureCache<double> cache;
  point_feature_forward(block, x, Mode::Train, &cache);
  const auto g = point_feature_backward(block, cache, x, probe);
  auto f = [&] { return probe_dot(point_feature_forward(block, x, Mode::Train), probe); };
  EXPECT_LT(relative_error(to_vector(g.input), numeric_gradient(x, f)), 1e-5);
  EXPECT_LT(relative_error(to_vector(g.weight), numeric_gradient(block.dense.weight.value, f)),
            1e-5);
  EXPECT_LT(relative_error(to_vector(g.gamma), numeric_gradient(block.bn.gamma.value, f)), 1e-5);
  EXPECT_LT(relative_error(to_vector(g.beta), numeric_gradient(block.bn.beta.value, f)), 1e-5);
}

TEST(PointArgmax, TileBackendAgreesWithPlain) {
  Rng rng(21);
  const Tensor<float> x = random_tensor({2, 2048, 128}, rng).cast<float>();
  const MatrixRM<float> w = random_tensor({128, 1024}, rng).cast<float>().matrix();
  set_tile_backend_enabled(false);
  const auto plain = argmax_points(x, w);
  set_tile_backend_enabled(true);
  const auto tiled = argmax_points(x, w);
  EXPECT_EQ(plain, tiled) << "tile backend available: " << tile_backend_available();
}

TEST(PointArgmax, MatchesBruteForceInDouble) {
  Rng rng(22);
  const TD x = random_tensor({2, 50, 3}, rng);
  const MatrixRM<double> w = random_tensor({3, 7}, rng).matrix();
  const auto got = argmax_points(x, w);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t f = 0; f < 7; ++f) {
      std::size_t best = 0;
      double best_score = -std::numeric_limits<double>::infinity();
      for (std::size_t p = 0; p < 50; ++p) {
        double s = 0;
        for (std::size_t k = 0; k < 3; ++k) s += x[(b * 50 + p) * 3 + k] * w(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f));
        if (s > best_score) {
          best_score = s;
          best = p;
        }
      }
      EXPECT_EQ(got[b * 7 + f], best);
    }
  }
}

TEST(Adam, ZeroGradLeavesParams) {
  Rng rng(23);
  Param<double> p("p", random_tensor({3, 3}, rng));
  const auto before = to_vector(p.value);
  Adam<double> adam;
  Param<double>* list[] = {&p};
  for (int i = 0; i < 3; ++i) adam.step(list);
  EXPECT_EQ(to_vector(p.value), before);
  EXPECT_EQ(adam.step_count(), 3);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Param<double> p("p", TD({4}, std::vector<double>{0, 1, 2, 3}));
  p.grad = TD({4}, std::vector<double>{0.5, -2, 1e-3, -7});
  Adam<double> adam;
  Param<double>* list[] = {&p};
  adam.step(list);
  const std::vector<double> start{0, 1, 2, 3};
  for (std::size_t i = 0; i < 4; ++i) {
    const double delta = p.value[i] - start[i];
    EXPECT_EQ(std::signbit(delta), p.grad[i] > 0);
    EXPECT_GE(std::abs(delta), 0.999 * 0.001);
    EXPECT_LE(std::abs(delta), 0.001);
  }
}

TEST(Adam, MatchesReferenceRecurrence) {
  Rng rng(24);
  Param<double> p("p", random_tensor({5}, rng));
  Adam<double> adam(AdamConfig{0.01, 0.8, 0.99, 1e-6});
  Param<double>* list[] = {&p};
  std::vector<double> theta = to_vector(p.value);
  std::vector<double> m(5, 0.0);
  std::vector<double> v(5, 0.0);
  for (int t = 1; t <= 5; ++t) {
    p.grad = random_tensor({5}, rng);
    adam.step(list);
    for (std::size_t i = 0; i < 5; ++i) {
      m[i] = 0.8 * m[i] + 0.2 * p.grad[i];
      v[i] = 0.99 * v[i] + 0.01 * p.grad[i] * p.grad[i];
      const double mh = m[i] / (1 - std::pow(0.8, t));
      const double vh = v[i] / (1 - std::pow(0.99, t));
      theta[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-6);
    }
    EXPECT_LT(relative_error(to_vector(p.value), theta), 1e-12);
  }
}

TEST(Adam, DeterministicAndShapeChecked) {
  auto run = [] {
    Param<double> p("p", TD({2}, std::vector<double>{1, 2}));
    Adam<double> adam;
    Param<double>* list[] = {&p};
    for (int i = 0; i < 2; ++i) {
      p.grad = TD({2}, std::vector<double>{0.3, -0.1});
      adam.step(list);
    }
    return to_vector(p.value);
  };
  EXPECT_EQ(run(), run());

  Param<double> a("a", TD({2}));
  Param<double> b("b", TD({3}));
  Adam<double> adam;
  Param<double>* first[] = {&a};
  adam.step(first);
  Param<double>* second[] = {&b};
  EXPECT_GRASP_ERROR(adam.step(second), Errc::ShapeMismatch);
}

TEST(Tensor, ShapeChecksAndNonFiniteDetection) {
  EXPECT_GRASP_ERROR(TD({2, 2}, std::vector<double>{1, 2, 3}), Errc::ShapeMismatch);
  TD t({3});
  t[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    t.check_finite("probe");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonFinite);
    EXPECT_EQ(e.row(), 1);
  }
  EXPECT_EQ(TD({2, 3, 4}).rows(), 6u);
  EXPECT_GRASP_ERROR(TD({2, 3}).reshaped({4, 2}), Errc::ShapeMismatch);
}

}  // namespace
}  // namespace grasp::nn
