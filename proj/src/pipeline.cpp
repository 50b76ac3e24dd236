#include "grasp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>

#include "grasp/error.hpp"
#include "grasp/nn/adam.hpp"
#include "grasp/parallel.hpp"

namespace grasp {
namespace {

// rng streams derived from TrainConfig::seed
constexpr std::uint64_t kSplitStream = 0x5011;
constexpr std::uint64_t kFoldStream = 0xf01d;
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kTrainStream = 0x7a1e;

GraspLabel require_label(const PointCloud& cloud, std::size_t i) {
  if (!cloud.label) {
    throw Error(Errc::InvalidLabel, "cloud " + std::to_string(i) + " has no label",
                static_cast<std::int64_t>(i));
  }
  return *cloud.label;
}

// Units to stratify: single rows, or groups of rows sharing an object.
struct Unit {
  GraspLabel label;
  std::vector<std::size_t> rows;
};

std::vector<Unit> make_units(const DatasetIndex& index, SplitGranularity granularity) {
  if (index.size() == 0) throw Error(Errc::EmptyManifest, "manifest has no rows");
  std::vector<Unit> units;
  if (granularity == SplitGranularity::Cloud) {
    units.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) units.push_back({index.rows[i].label, {i}});
    return units;
  }
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& row = index.rows[i];
    auto [it, fresh] = slot.try_emplace(row.object_id, units.size());
    if (fresh) units.push_back({row.label, {}});
    units[it->second].rows.push_back(i);
  }
  return units;
}

// Unit positions per class, shuffled.
std::array<std::vector<std::size_t>, kNumClasses> shuffled_by_class(
    const std::vector<Unit>& units, Rng& rng) {
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t u = 0; u < units.size(); ++u) {
    by_class[static_cast<std::size_t>(label_code(units[u].label))].push_back(u);
  }
  for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);
  return by_class;
}

void append_rows(const Unit& unit, std::vector<std::size_t>& out) {
  out.insert(out.end(), unit.rows.begin(), unit.rows.end());
}

std::vector<const PointCloud*> gather(std::span<const PointCloud> clouds,
                                      std::span<const std::size_t> order) {
  std::vector<const PointCloud*> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(&clouds[i]);
  return out;
}

std::vector<int> label_codes(std::span<const PointCloud* const> clouds) {
  std::vector<int> out;
  out.reserve(clouds.size());
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    out.push_back(label_code(require_label(*clouds[i], i)));
  }
  return out;
}

std::size_t argmax_row(const nn::Tensor<float>& logits, std::size_t row) {
  const std::size_t classes = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t c = 1; c < classes; ++c) {
    if (logits[row * classes + c] > logits[row * classes + best]) best = c;
  }
  return best;
}

void check_inputs(std::span<const PointCloud> clouds, const PointNetConfig& model,
                  const char* what) {
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    require_label(clouds[i], i);
    if (model.use_normals && !clouds[i].has_normals()) {
      throw Error(Errc::MissingNormals,
                  std::string(what) + " cloud " + std::to_string(i) +
                      " has no normals but the model takes them",
                  static_cast<std::int64_t>(i));
    }
  }
}

// Mean loss and accuracy of the eval-mode model on a labeled set.
std::array<double, 2> eval_loss_accuracy(const PointNet<float>& model,
                                         std::span<const PointCloud> set, double reg_weight) {
  constexpr std::size_t kChunk = 16;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < set.size(); start += kChunk) {
    const std::size_t end = std::min(set.size(), start + kChunk);
    std::vector<const PointCloud*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&set[i]);
    const auto labels = label_codes(ptrs);
    const auto out = model.infer(make_batch<float>(ptrs, model.config()));
    const auto lg = pointnet_loss(out.logits, labels, out.feature_transform, reg_weight);
    loss += lg.loss * static_cast<double>(ptrs.size());
    for (std::size_t b = 0; b < ptrs.size(); ++b) {
      if (static_cast<int>(argmax_row(out.logits, b)) == labels[b]) ++correct;
    }
  }
  const auto n = static_cast<double>(set.size());
  return {loss / n, static_cast<double>(correct) / n};
}

// Shuffled batches of at most batch_size; a trailing singleton joins the
// previous batch so batch norm always sees two samples.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  // Sorting inside a batch keeps the set while making the summation order
  // independent of the shuffle.
  for (auto& b : batches) std::sort(b.begin(), b.end());
  return batches;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error(Errc::InvalidConfig, "lr must be >= 0");
  if (batch_size < 2) {
    throw Error(Errc::BatchTooSmall, "batch_size must be at least 2 for batch norm");
  }
  if (epochs < 1) throw Error(Errc::InvalidConfig, "epochs must be at least 1");
  double sum = 0.0;
  for (double f : split) {
    if (!(f >= 0.0) || !std::isfinite(f)) {
      throw Error(Errc::InvalidConfig, "split fractions must be non-negative");
    }
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(Errc::InvalidConfig, "split must sum to 1");
  if (augmentation.jitter_sigma < 0 || augmentation.jitter_clip < augmentation.jitter_sigma) {
    throw Error(Errc::InvalidConfig, "need 0 <= jitter_sigma <= jitter_clip");
  }
  if (normals.k < 3) throw Error(Errc::InvalidConfig, "normal estimation needs k >= 3");
  model.validate();
}

std::size_t Metrics::total() const {
  std::size_t n = 0;
  for (const auto& row : confusion) n = std::accumulate(row.begin(), row.end(), n);
  return n;
}

Metrics score(std::span<const GraspLabel> truth, std::span<const GraspLabel> predicted) {
  if (truth.size() != predicted.size()) {
    throw Error(Errc::ShapeMismatch, "truth and prediction counts differ");
  }
  Metrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++m.confusion[static_cast<std::size_t>(label_code(truth[i]))]
                 [static_cast<std::size_t>(label_code(predicted[i]))];
  }
  std::size_t diagonal = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::size_t support =
        std::accumulate(m.confusion[c].begin(), m.confusion[c].end(), std::size_t{0});
    m.per_class_accuracy[c] =
        support == 0 ? 0.0
                     : static_cast<double>(m.confusion[c][c]) / static_cast<double>(support);
    diagonal += m.confusion[c][c];
  }
  m.overall_accuracy =
      truth.empty() ? 0.0 : static_cast<double>(diagonal) / static_cast<double>(truth.size());
  return m;
}

SplitIndices split_dataset(const DatasetIndex& index, const TrainConfig& config) {
  const auto units = make_units(index, config.split_granularity);
  Rng rng = derive_rng(config.seed, kSplitStream);
  const auto by_class = shuffled_by_class(units, rng);
  SplitIndices out;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < 3) {
      throw Error(Errc::ClassTooSmall,
                  std::string(label_token(kAllLabels[c])) + " has " +
                      std::to_string(members.size()) + " members, need at least 3");
    }
    const auto n = static_cast<double>(members.size());
    auto part = [&](double fraction) {
      if (fraction <= 0.0) return std::size_t{0};
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * fraction)));
    };
    const std::size_t n_test = part(config.split[2]);
    const std::size_t n_val = std::min(part(config.split[1]), members.size() - n_test);
    const std::size_t n_train = members.size() - n_test - n_val;
    for (std::size_t j = 0; j < members.size(); ++j) {
      auto& dest = j < n_train ? out.train : (j < n_train + n_val ? out.val : out.test);
      append_rows(units[members[j]], dest);
    }
  }
  for (auto* part : {&out.train, &out.val, &out.test}) std::sort(part->begin(), part->end());
  return out;
}

std::vector<Fold> make_folds(const DatasetIndex& index, std::size_t k, const TrainConfig& config) {
  if (k < 2) throw Error(Errc::InvalidArgument, "need at least 2 folds");
  const auto units = make_units(index, config.split_granularity);
  Rng rng = derive_rng(config.seed, kFoldStream);
  const auto by_class = shuffled_by_class(units, rng);
  std::vector<std::vector<std::size_t>> tests(k);
  std::size_t next = 0;  // dealing continues across classes to balance fold sizes
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& members = by_class[c];
    if (!members.empty() && members.size() < k) {
      throw Error(Errc::ClassTooSmall,
                  std::string(label_token(kAllLabels[c])) + " has " +
                      std::to_string(members.size()) + " members, fewer than " +
                      std::to_string(k) + " folds");
    }
    for (std::size_t u : members) {
      append_rows(units[u], tests[next % k]);
      ++next;
    }
  }
  std::vector<Fold> folds(k);
  for (std::size_t f = 0; f < k; ++f) {
    std::sort(tests[f].begin(), tests[f].end());
    std::vector<bool> in_test(index.size(), false);
    for (std::size_t i : tests[f]) in_test[i] = true;
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (!in_test[i]) folds[f].train.push_back(i);
    }
    folds[f].test = std::move(tests[f]);
  }
  return folds;
}

PointCloud preprocess(const PointCloud& cloud, const PointNetConfig& model,
                      const NormalEstimationParams& normals, Rng& rng) {
  cloud.validate();
  PointCloud xyz;
  xyz.points = cloud.points;
  xyz.label = cloud.label;
  const Normalized normalized = normalize_unit_sphere(xyz);
  // Same draws as sample_uniform, so normals are only needed at the kept points.
  const auto idx = sample_indices(cloud.size(), model.points_per_cloud, rng);
  PointCloud out;
  out.label = cloud.label;
  out.points.reserve(idx.size());
  for (std::size_t i : idx) out.points.push_back(normalized.cloud.points[i]);
  if (model.use_normals) out.normals = estimate_normals_at(cloud, idx, normals);
  return out;
}

std::vector<PointCloud> preprocess_all(std::span<const PointCloud> clouds,
                                       const PointNetConfig& model,
                                       const NormalEstimationParams& normals,
                                       std::uint64_t seed) {
  std::vector<PointCloud> out(clouds.size());
  parallel_for(clouds.size(), [&](std::size_t i) {
    Rng rng = derive_rng(seed, i);
    out[i] = preprocess(clouds[i], model, normals, rng);
  });
  return out;
}

TrainResult train(PointNet<float> model, std::span<const PointCloud> train_set,
                  std::span<const PointCloud> val_set, const TrainConfig& config, Rng& rng) {
  config.validate();
  if (!(model.config() == config.model)) {
    throw Error(Errc::InvalidConfig, "model does not match the training configuration");
  }
  if (train_set.size() < 2) {
    throw Error(Errc::BatchTooSmall, "training needs at least 2 clouds for batch norm");
  }
  check_inputs(train_set, config.model, "training");
  check_inputs(val_set, config.model, "validation");

  nn::Adam<float> optimizer(nn::AdamConfig{.lr = config.lr});
  const auto params = model.parameters();
  const double reg = config.model.tnet_reg_weight;

  Metrics history;
  std::optional<PointNet<float>> best;
  double best_accuracy = -1.0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& batch : make_batches(train_set.size(), config.batch_size, rng)) {
      std::vector<PointCloud> augmented;
      std::vector<const PointCloud*> ptrs;
      if (config.augment) {
        augmented.reserve(batch.size());
        for (std::size_t i : batch) {
          augmented.push_back(augment(train_set[i], config.augmentation, rng));
        }
        for (const auto& c : augmented) ptrs.push_back(&c);
      } else {
        ptrs = gather(train_set, batch);
      }
      const auto labels = label_codes(ptrs);
      const auto input = make_batch<float>(ptrs, config.model);

      ForwardCache<float> cache;
      const auto out = model.forward(input, nn::Mode::Train, &rng, &cache);
      const auto lg = pointnet_loss(out.logits, labels, out.feature_transform, reg);
      model.zero_grad();
      model.backward(cache, lg.d_logits, lg.d_feature_transform);
      optimizer.step(params);
      ++model.global_step;

      loss_sum += lg.loss * static_cast<double>(batch.size());
      for (std::size_t b = 0; b < batch.size(); ++b) {
        if (static_cast<int>(argmax_row(out.logits, b)) == labels[b]) ++correct;
      }
    }
    const auto n = static_cast<double>(train_set.size());
    history.loss_history.push_back(loss_sum / n);
    history.accuracy_history.push_back(static_cast<double>(correct) / n);

    if (!val_set.empty()) {
      const auto [val_loss, val_accuracy] = eval_loss_accuracy(model, val_set, reg);
      history.val_loss_history.push_back(val_loss);
      history.val_accuracy_history.push_back(val_accuracy);
      if (val_accuracy > best_accuracy) {
        best_accuracy = val_accuracy;
        best = model;
      }
    }
  }

  TrainResult result{best ? std::move(*best) : std::move(model), {}};
  result.metrics = evaluate(result.model, val_set.empty() ? train_set : val_set);
  result.metrics.loss_history = std::move(history.loss_history);
  result.metrics.accuracy_history = std::move(history.accuracy_history);
  result.metrics.val_loss_history = std::move(history.val_loss_history);
  result.metrics.val_accuracy_history = std::move(history.val_accuracy_history);
  return result;
}

Metrics evaluate(const PointNet<float>& model, std::span<const PointCloud> test_set) {
  check_inputs(test_set, model.config(), "evaluation");
  const auto predictions = predict_many(model, test_set);
  std::vector<GraspLabel> truth;
  std::vector<GraspLabel> predicted;
  truth.reserve(test_set.size());
  predicted.reserve(test_set.size());
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    truth.push_back(*test_set[i].label);
    predicted.push_back(predictions[i].label);
  }
  return score(truth, predicted);
}

SingleRun train_and_test(const DatasetIndex& index, std::span<const PointCloud> clouds,
                         const TrainConfig& config) {
  config.validate();
  if (clouds.size() != index.size()) {
    throw Error(Errc::ShapeMismatch, "cloud count differs from manifest row count");
  }
  auto parts = split_dataset(index, config);
  auto pick = [&](const std::vector<std::size_t>& rows) {
    std::vector<PointCloud> out;
    out.reserve(rows.size());
    for (std::size_t i : rows) out.push_back(clouds[i]);
    return out;
  };
  Rng init = derive_rng(config.seed, kInitStream);
  Rng rng = derive_rng(config.seed, kTrainStream);
  auto trained = train(PointNet<float>::build(config.model, init), pick(parts.train),
                       pick(parts.val), config, rng);
  Metrics test = evaluate(trained.model, pick(parts.test));
  return {std::move(parts), std::move(trained.model), std::move(trained.metrics),
          std::move(test)};
}

std::array<double, 2> mean_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  const auto n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

CrossValidation summarize(std::vector<Metrics> folds) {
  CrossValidation cv;
  std::vector<double> values(folds.size());
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (std::size_t f = 0; f < folds.size(); ++f) values[f] = folds[f].per_class_accuracy[c];
    const auto [mean, sd] = mean_std(values);
    cv.class_mean[c] = mean;
    cv.class_std[c] = sd;
  }
  for (std::size_t f = 0; f < folds.size(); ++f) values[f] = folds[f].overall_accuracy;
  const auto [mean, sd] = mean_std(values);
  cv.overall_mean = mean;
  cv.overall_std = sd;
  cv.folds = std::move(folds);
  return cv;
}

CrossValidation cross_validate(const DatasetIndex& index, std::span<const PointCloud> clouds,
                               std::size_t k, const TrainConfig& config) {
  config.validate();
  if (clouds.size() != index.size()) {
    throw Error(Errc::ShapeMismatch, "cloud count differs from manifest row count");
  }
  const auto folds = make_folds(index, k, config);
  // Validation rows come out of each fold's training part in the single-run
  // train:val proportion.
  const double trainval = config.split[0] + config.split[1];
  const double val_share = trainval > 0.0 ? config.split[1] / trainval : 0.0;

  std::vector<Metrics> results;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    DatasetIndex sub;
    for (std::size_t i : folds[f].train) sub.rows.push_back(index.rows[i]);
    TrainConfig inner = config;
    inner.seed = config.seed + 1000003 * (f + 1);
    inner.split = {1.0 - val_share, val_share, 0.0};
    const auto parts = split_dataset(sub, inner);

    auto pick = [&](const std::vector<std::size_t>& local) {
      std::vector<PointCloud> out;
      out.reserve(local.size());
      for (std::size_t j : local) out.push_back(clouds[folds[f].train[j]]);
      return out;
    };
    const auto train_part = pick(parts.train);
    const auto val_part = pick(parts.val);
    std::vector<PointCloud> test_part;
    for (std::size_t i : folds[f].test) test_part.push_back(clouds[i]);

    Rng init = derive_rng(config.seed, kInitStream + 2 * f);
    Rng rng = derive_rng(config.seed, kTrainStream + 2 * f);
    auto trained = train(PointNet<float>::build(config.model, init), train_part, val_part,
                         config, rng);
    Metrics m = evaluate(trained.model, test_part);
    m.loss_history = std::move(trained.metrics.loss_history);
    m.accuracy_history = std::move(trained.metrics.accuracy_history);
    m.val_loss_history = std::move(trained.metrics.val_loss_history);
    m.val_accuracy_history = std::move(trained.metrics.val_accuracy_history);
    results.push_back(std::move(m));
  }
  return summarize(std::move(results));
}

}  // namespace grasp
