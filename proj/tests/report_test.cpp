#include <sstream>

#include "grasp/report.hpp"
#include "support.hpp"

namespace grasp {
namespace {

Metrics sample_metrics(Rng& rng) {
  std::uniform_int_distribution<int> pick(0, 3);
  std::vector<GraspLabel> truth;
  std::vector<GraspLabel> predicted;
  for (int i = 0; i < 57; ++i) {
    truth.push_back(*label_from_code(pick(rng)));
    predicted.push_back(*label_from_code(pick(rng)));
  }
  Metrics m = score(truth, predicted);
  std::uniform_real_distribution<double> u(0, 2);
  for (int e = 0; e < 5; ++e) {
    m.loss_history.push_back(u(rng));
    m.accuracy_history.push_back(u(rng) / 2);
    m.val_loss_history.push_back(u(rng));
    m.val_accuracy_history.push_back(u(rng) / 3);
  }
  return m;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

bool starts_with_class_name(const std::string& line) {
  for (GraspLabel l : kAllLabels) {
    if (line.rfind(std::string(label_display_name(l)), 0) == 0) return true;
  }
  return false;
}

TEST(Report, MetricsJsonRoundTrips) {
  Rng rng(1);
  const Metrics m = sample_metrics(rng);
  EXPECT_TRUE(metrics_from_json(report(m, ReportFormat::Json)) == m);
}

TEST(Report, CrossValidationJsonRoundTrips) {
  Rng rng(2);
  std::vector<Metrics> folds;
  for (int f = 0; f < 5; ++f) folds.push_back(sample_metrics(rng));
  const CrossValidation cv = summarize(folds);
  EXPECT_TRUE(cross_validation_from_json(report(cv, ReportFormat::Json)) == cv);
}

TEST(Report, MalformedJsonIsStructured) {
  EXPECT_GRASP_ERROR(metrics_from_json("{"), Errc::MalformedBody);
  EXPECT_GRASP_ERROR(metrics_from_json("{\"overall_accuracy\": 1}"), Errc::MalformedBody);
  EXPECT_GRASP_ERROR(cross_validation_from_json("[]"), Errc::MalformedBody);
}

TEST(Report, PerfectMetricsRenderDiagonalConfusion) {
  const std::vector<GraspLabel> truth = {GraspLabel::Pinch, GraspLabel::PalmarWristNeutral,
                                         GraspLabel::Tripod, GraspLabel::Tripod,
                                         GraspLabel::PalmarWristPronated};
  const std::string csv = report(score(truth, truth), ReportFormat::Csv);
  EXPECT_EQ(csv,
            "true\\predicted,pinch,palmar_wn,tripod,palmar_wp\n"
            "pinch,1,0,0,0\n"
            "palmar_wn,0,1,0,0\n"
            "tripod,0,0,2,0\n"
            "palmar_wp,0,0,0,1\n");
  const std::string text = report(score(truth, truth), ReportFormat::Text);
  EXPECT_NE(text.find("OVERALL"), std::string::npos);
  EXPECT_NE(text.find("1.000"), std::string::npos);
}

TEST(Report, CrossValidationTextHasFourClassRowsAndOverall) {
  Rng rng(3);
  std::vector<Metrics> folds;
  for (int f = 0; f < 5; ++f) folds.push_back(sample_metrics(rng));
  const auto lines = lines_of(report(summarize(folds), ReportFormat::Text));
  // The summary table ends at the first blank line; the confusion grid follows.
  std::size_t class_rows = 0;
  std::size_t overall_rows = 0;
  for (const auto& line : lines) {
    if (line.empty()) break;
    if (starts_with_class_name(line)) {
      ++class_rows;
      EXPECT_NE(line.find(" +- "), std::string::npos) << line;
    }
    if (line.rfind("OVERALL", 0) == 0) ++overall_rows;
  }
  EXPECT_EQ(class_rows, 4u);
  EXPECT_EQ(overall_rows, 1u);
}

TEST(Report, CrossValidationCsvHasOneRowPerFold) {
  Rng rng(4);
  std::vector<Metrics> folds;
  for (int f = 0; f < 5; ++f) folds.push_back(sample_metrics(rng));
  const auto lines = lines_of(report(summarize(folds), ReportFormat::Csv));
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0], "fold,pinch,palmar_wn,tripod,palmar_wp,overall");
}

}  // namespace
}  // namespace grasp
