#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "grasp/cloud.hpp"
#include "grasp/error.hpp"
#include "grasp/formats.hpp"
#include "grasp/model.hpp"
#include "grasp/parallel.hpp"
#include "grasp/pipeline.hpp"
#include "grasp/report.hpp"
#include "grasp/synth.hpp"

namespace grasp::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
  // synth
  SynthConfig synth;
  // shared
  std::string input;
  std::string out;
  std::string manifest;
  std::string checkpoint;
  std::string model = "extended";
  std::string format = "text";
  std::string granularity = "cloud";
  std::vector<double> viewpoint = {0.0, 0.0, 0.0};
  std::uint64_t seed = 0;
  int k = 100;
  std::size_t points = 2048;
  double lr = 0.001;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double jitter = 0.01;
  bool no_augment = false;
  std::size_t folds = 5;
};

ReportFormat parse_format(const std::string& s) {
  if (s == "json") return ReportFormat::Json;
  if (s == "csv") return ReportFormat::Csv;
  return ReportFormat::Text;
}

PointNetConfig model_config(const Options& o) {
  PointNetConfig c = o.model == "basic" ? PointNetConfig::basic() : PointNetConfig::extended();
  c.points_per_cloud = o.points;
  return c;
}

NormalEstimationParams normal_params(const Options& o) {
  NormalEstimationParams p;
  p.k = o.k;
  p.viewpoint = Vec3(o.viewpoint[0], o.viewpoint[1], o.viewpoint[2]);
  return p;
}

TrainConfig train_config(const Options& o) {
  TrainConfig c;
  c.lr = o.lr;
  c.epochs = o.epochs;
  c.batch_size = o.batch_size;
  c.seed = o.seed;
  c.augment = !o.no_augment;
  c.augmentation.jitter_sigma = o.jitter;
  c.augmentation.jitter_clip = std::max(c.augmentation.jitter_clip, 5.0 * o.jitter);
  c.model = model_config(o);
  c.normals = normal_params(o);
  c.split_granularity =
      o.granularity == "object" ? SplitGranularity::Object : SplitGranularity::Cloud;
  c.validate();
  return c;
}

struct LoadedSet {
  DatasetIndex index;
  std::vector<PointCloud> clouds;  // preprocessed, labeled from the manifest
};

LoadedSet load_set(const std::string& manifest, const PointNetConfig& model,
                   const NormalEstimationParams& normals, std::uint64_t seed) {
  LoadedSet set;
  set.index = load_manifest(read_file(manifest));
  const fs::path root = fs::path(manifest).parent_path();
  std::vector<PointCloud> raw(set.index.size());
  parallel_for(raw.size(), [&](std::size_t i) {
    const auto& row = set.index.rows[i];
    try {
      raw[i] = load_pcd_file(root / row.path);
    } catch (const Error& e) {
      throw Error(e.code(), row.path + ": " + e.what(), e.row(), e.column());
    }
    raw[i].label = row.label;
  });
  set.clouds = preprocess_all(raw, model, normals, seed);
  return set;
}

void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << text;
  } else {
    write_file(out_path, text);
  }
}

int cmd_synth(const Options& o, std::ostream& out) {
  const SynthDataset data = generate_dataset(o.synth);
  write_dataset(data, o.out);
  out << "wrote " << data.clouds.size() << " clouds and manifest.csv to " << o.out << "\n";
  return 0;
}

int cmd_normals(const Options& o, std::ostream& out) {
  const PointCloud cloud = load_pcd_file(o.input);
  write_file(o.out, write_pcd(estimate_normals(cloud, normal_params(o))));
  out << "wrote " << o.out << "\n";
  return 0;
}

int cmd_preprocess(const Options& o, std::ostream& out) {
  const PointCloud cloud = load_pcd_file(o.input);
  Rng rng = derive_rng(o.seed, 0);
  write_file(o.out, write_pcd(preprocess(cloud, model_config(o), normal_params(o), rng)));
  out << "wrote " << o.out << "\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  const TrainConfig config = train_config(o);
  const LoadedSet set = load_set(o.manifest, config.model, config.normals, config.seed);
  const SingleRun run = train_and_test(set.index, set.clouds, config);
  write_file(o.out, save_checkpoint(run.model));
  Metrics test = run.test;
  test.loss_history = run.training.loss_history;
  test.accuracy_history = run.training.accuracy_history;
  test.val_loss_history = run.training.val_loss_history;
  test.val_accuracy_history = run.training.val_accuracy_history;
  out << report(test, parse_format(o.format));
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const PointNet<float> model = load_checkpoint(read_file(o.checkpoint));
  const LoadedSet set = load_set(o.manifest, model.config(), normal_params(o), o.seed);
  emit(report(evaluate(model, set.clouds), parse_format(o.format)), o.out, out);
  return 0;
}

int cmd_cv(const Options& o, std::ostream& out) {
  const TrainConfig config = train_config(o);
  const LoadedSet set = load_set(o.manifest, config.model, config.normals, config.seed);
  const CrossValidation cv = cross_validate(set.index, set.clouds, o.folds, config);
  emit(report(cv, parse_format(o.format)), o.out, out);
  return 0;
}

int cmd_predict(const Options& o, std::ostream& out) {
  const PointNet<float> model = load_checkpoint(read_file(o.checkpoint));
  const PointCloud cloud = load_pcd_file(o.input);
  Rng rng = derive_rng(o.seed, 0);
  const Prediction p = predict(model, preprocess(cloud, model.config(), normal_params(o), rng));
  out << label_token(p.label);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    char buf[64];
    std::snprintf(buf, sizeof buf, " %s=%.6f", std::string(label_token(kAllLabels[c])).c_str(),
                  p.probabilities[c]);
    out << buf;
  }
  out << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Grasp-type classification for single-view point clouds", "grasp-cloud");
  app.require_subcommand(1);
  Options o;

  const auto model_check = CLI::IsMember({"basic", "extended"});
  const auto format_check = CLI::IsMember({"text", "json", "csv"});

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Random seed"); };
  auto add_normals = [&](CLI::App* c) {
    c->add_option("--k", o.k, "Neighbors for normal estimation")->check(CLI::Range(3, 1 << 20));
    c->add_option("--viewpoint", o.viewpoint, "Normals face this point (x,y,z)")
        ->expected(3)
        ->delimiter(',');
  };
  auto add_training = [&](CLI::App* c) {
    c->add_option("--manifest", o.manifest, "Manifest CSV")->required();
    c->add_option("--model", o.model, "basic or extended")->check(model_check);
    c->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
    c->add_option("--epochs", o.epochs, "Training epochs")->check(CLI::PositiveNumber);
    c->add_option("--batch-size", o.batch_size, "Mini-batch size")->check(CLI::Range(2, 1 << 20));
    c->add_option("--points", o.points, "Points per cloud")->check(CLI::PositiveNumber);
    c->add_option("--jitter", o.jitter, "Augmentation jitter std")->check(CLI::NonNegativeNumber);
    c->add_flag("--no-augment", o.no_augment, "Disable rotation and jitter augmentation");
    c->add_option("--granularity", o.granularity, "Split unit: cloud or object")
        ->check(CLI::IsMember({"cloud", "object"}));
    c->add_option("--format", o.format, "Report format: text, json or csv")->check(format_check);
    add_seed(c);
    add_normals(c);
  };

  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic dataset");
  synth->add_option("--per-class", o.synth.per_class, "Clouds per class")
      ->required()
      ->check(CLI::PositiveNumber);
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--seed", o.synth.seed, "Random seed");
  synth->add_option("--noise", o.synth.noise_sigma, "Surface noise std (m)")
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--camera-distance", o.synth.camera_distance, "Camera distance (m)")
      ->check(CLI::PositiveNumber);
  synth->add_option("--grid", o.synth.grid_resolution, "Visibility grid resolution")
      ->check(CLI::Range(16, 1 << 14));
  synth->add_option("--max-points", o.synth.max_points, "Points kept per view")
      ->check(CLI::PositiveNumber);
  synth->add_option("--overlap", o.synth.overlap, "Class overlap in [0, 1]")
      ->check(CLI::Range(0.0, 1.0));

  auto* normals = app.add_subcommand("normals", "Estimate normals of one PCD file");
  normals->add_option("--input", o.input, "Input PCD")->required();
  normals->add_option("--out", o.out, "Output PCD")->required();
  add_normals(normals);

  auto* prep = app.add_subcommand("preprocess", "Prepare one PCD file for the classifier");
  prep->add_option("--input", o.input, "Input PCD")->required();
  prep->add_option("--out", o.out, "Output PCD")->required();
  prep->add_option("--model", o.model, "basic or extended")->check(model_check);
  prep->add_option("--points", o.points, "Points per cloud")->check(CLI::PositiveNumber);
  add_seed(prep);
  add_normals(prep);

  auto* train = app.add_subcommand("train", "Split, train and test; writes a checkpoint");
  add_training(train);
  train->add_option("--out", o.out, "Checkpoint path")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on every manifest row");
  eval->add_option("--manifest", o.manifest, "Manifest CSV")->required();
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  eval->add_option("--format", o.format, "Report format")->check(format_check);
  eval->add_option("--out", o.out, "Write the report here instead of stdout");
  add_seed(eval);
  add_normals(eval);

  auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
  add_training(cv);
  cv->add_option("--folds", o.folds, "Number of folds")->check(CLI::Range(2, 1000));
  cv->add_option("--out", o.out, "Write the report here instead of stdout");

  auto* pred = app.add_subcommand("predict", "Classify one PCD file");
  pred->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  pred->add_option("--input", o.input, "Input PCD")->required();
  add_seed(pred);
  add_normals(pred);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(o, out);
    if (normals->parsed()) return cmd_normals(o, out);
    if (prep->parsed()) return cmd_preprocess(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (cv->parsed()) return cmd_cv(o, out);
    if (pred->parsed()) return cmd_predict(o, out);
  } catch (const Error& e) {
    err << "error [" << errc_name(e.code()) << "]";
    if (e.row() >= 0) err << " row " << e.row();
    if (e.column() >= 0) err << " column " << e.column();
    err << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace grasp::cli
