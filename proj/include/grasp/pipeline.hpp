#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "grasp/cloud.hpp"
#include "grasp/formats.hpp"
#include "grasp/label.hpp"
#include "grasp/model.hpp"
#include "grasp/random.hpp"

namespace grasp {

enum class SplitGranularity { Cloud, Object };

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentationParams augmentation;
  PointNetConfig model;
  NormalEstimationParams normals;
  std::array<double, 3> split = {0.8, 0.1, 0.1};
  SplitGranularity split_granularity = SplitGranularity::Cloud;

  void validate() const;
};

using ConfusionMatrix = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;

struct Metrics {
  std::array<double, kNumClasses> per_class_accuracy{};
  double overall_accuracy = 0.0;
  ConfusionMatrix confusion{};  // rows true, columns predicted
  // Per epoch; empty for a bare evaluation.
  std::vector<double> loss_history;
  std::vector<double> accuracy_history;
  std::vector<double> val_loss_history;
  std::vector<double> val_accuracy_history;

  std::size_t total() const;
  bool operator==(const Metrics&) const = default;
};

/// Metrics of `predicted` against `truth`; classes without support score 0.
Metrics score(std::span<const GraspLabel> truth, std::span<const GraspLabel> predicted);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Stratified partition of the manifest rows by config.split. With object
/// granularity all rows sharing an object_id land in the same part (an
/// object's class is that of its first row).
SplitIndices split_dataset(const DatasetIndex& index, const TrainConfig& config);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// k stratified test folds covering the index, each paired with the rest.
std::vector<Fold> make_folds(const DatasetIndex& index, std::size_t k,
                             const TrainConfig& config);

/// Normals (extended input only) on the raw cloud, then unit-sphere
/// normalization, then uniform sampling to the model's point count.
PointCloud preprocess(const PointCloud& cloud, const PointNetConfig& model,
                      const NormalEstimationParams& normals, Rng& rng);

/// preprocess() over many clouds; cloud i draws from derive_rng(seed, i).
std::vector<PointCloud> preprocess_all(std::span<const PointCloud> clouds,
                                       const PointNetConfig& model,
                                       const NormalEstimationParams& normals,
                                       std::uint64_t seed);

struct TrainResult {
  PointNet<float> model;
  // Scores of the returned model on the validation set (the training set
  // when there is none), plus the per-epoch histories.
  Metrics metrics;
};

/// Mini-batch Adam on labeled, preprocessed clouds. Returns the parameters
/// of the epoch with the best validation accuracy (earliest on ties, final
/// epoch when there is no validation set).
TrainResult train(PointNet<float> model, std::span<const PointCloud> train_set,
                  std::span<const PointCloud> val_set, const TrainConfig& config, Rng& rng);

Metrics evaluate(const PointNet<float>& model, std::span<const PointCloud> test_set);

struct SingleRun {
  SplitIndices split;
  PointNet<float> model;
  Metrics training;  // histories and validation scores from train()
  Metrics test;
};

/// One split-train-test run with every rng stream derived from config.seed.
/// `clouds` are preprocessed and aligned with the index rows.
SingleRun train_and_test(const DatasetIndex& index, std::span<const PointCloud> clouds,
                         const TrainConfig& config);

struct CrossValidation {
  std::vector<Metrics> folds;
  std::array<double, kNumClasses> class_mean{};
  std::array<double, kNumClasses> class_std{};
  double overall_mean = 0.0;
  double overall_std = 0.0;

  bool operator==(const CrossValidation&) const = default;
};

/// Mean and sample standard deviation (0 for fewer than two values).
std::array<double, 2> mean_std(std::span<const double> values);

CrossValidation summarize(std::vector<Metrics> folds);

/// Trains a fresh model per fold on its train part and scores its test
/// fold. `clouds` are preprocessed and aligned with the index rows.
CrossValidation cross_validate(const DatasetIndex& index, std::span<const PointCloud> clouds,
                               std::size_t k, const TrainConfig& config);

}  // namespace grasp
