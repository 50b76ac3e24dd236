#include "grasp/report.hpp"

#include <cstdio>
#include <string>

#include <json.hpp>

#include "grasp/error.hpp"

namespace grasp {
namespace {

using nlohmann::json;

json to_json(const Metrics& m) {
  json j;
  j["per_class_accuracy"] = m.per_class_accuracy;
  j["overall_accuracy"] = m.overall_accuracy;
  j["confusion"] = m.confusion;
  j["classes"] = json::array();
  for (GraspLabel label : kAllLabels) j["classes"].push_back(std::string(label_token(label)));
  j["loss_history"] = m.loss_history;
  j["accuracy_history"] = m.accuracy_history;
  j["val_loss_history"] = m.val_loss_history;
  j["val_accuracy_history"] = m.val_accuracy_history;
  return j;
}

Metrics metrics_from(const json& j) {
  Metrics m;
  m.per_class_accuracy = j.at("per_class_accuracy").get<decltype(m.per_class_accuracy)>();
  m.overall_accuracy = j.at("overall_accuracy").get<double>();
  m.confusion = j.at("confusion").get<ConfusionMatrix>();
  m.loss_history = j.at("loss_history").get<std::vector<double>>();
  m.accuracy_history = j.at("accuracy_history").get<std::vector<double>>();
  m.val_loss_history = j.at("val_loss_history").get<std::vector<double>>();
  m.val_accuracy_history = j.at("val_accuracy_history").get<std::vector<double>>();
  return m;
}

template <typename F>
auto parse_or_throw(std::string_view text, F&& read) {
  try {
    return read(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedBody, std::string("bad metrics JSON: ") + e.what());
  }
}

std::string fixed(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string pad_left(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

constexpr std::size_t kNameWidth = 24;
constexpr std::size_t kCellWidth = 10;

std::string confusion_grid(const ConfusionMatrix& confusion) {
  std::string out = "Confusion (rows true, columns predicted)\n";
  out += pad("", kNameWidth);
  for (GraspLabel label : kAllLabels) out += pad_left(std::string(label_token(label)), kCellWidth);
  out += '\n';
  for (std::size_t r = 0; r < kNumClasses; ++r) {
    out += pad(std::string(label_display_name(kAllLabels[r])), kNameWidth);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      out += pad_left(std::to_string(confusion[r][c]), kCellWidth);
    }
    out += '\n';
  }
  return out;
}

std::string rule() { return std::string(kNameWidth + 2 * kCellWidth, '-') + '\n'; }

std::string confusion_csv(const ConfusionMatrix& confusion) {
  std::string out = "true\\predicted";
  for (GraspLabel label : kAllLabels) out += "," + std::string(label_token(label));
  out += '\n';
  for (std::size_t r = 0; r < kNumClasses; ++r) {
    out += std::string(label_token(kAllLabels[r]));
    for (std::size_t c = 0; c < kNumClasses; ++c) out += "," + std::to_string(confusion[r][c]);
    out += '\n';
  }
  return out;
}

}  // namespace

std::string report(const Metrics& m, ReportFormat format) {
  switch (format) {
    case ReportFormat::Json:
      return to_json(m).dump(2) + "\n";
    case ReportFormat::Csv:
      return confusion_csv(m.confusion);
    case ReportFormat::Text:
      break;
  }
  std::string out = pad("Grasp type", kNameWidth) + pad_left("Accuracy", kCellWidth) +
                    pad_left("Support", kCellWidth) + "\n" + rule();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t support = 0;
    for (std::size_t v : m.confusion[c]) support += v;
    out += pad(std::string(label_display_name(kAllLabels[c])), kNameWidth) +
           pad_left(fixed(m.per_class_accuracy[c]), kCellWidth) +
           pad_left(std::to_string(support), kCellWidth) + "\n";
  }
  out += rule();
  out += pad("OVERALL", kNameWidth) + pad_left(fixed(m.overall_accuracy), kCellWidth) +
         pad_left(std::to_string(m.total()), kCellWidth) + "\n\n";
  out += confusion_grid(m.confusion);
  return out;
}

std::string report(const CrossValidation& cv, ReportFormat format) {
  switch (format) {
    case ReportFormat::Json: {
      json j;
      j["class_mean"] = cv.class_mean;
      j["class_std"] = cv.class_std;
      j["overall_mean"] = cv.overall_mean;
      j["overall_std"] = cv.overall_std;
      j["folds"] = json::array();
      for (const auto& f : cv.folds) j["folds"].push_back(to_json(f));
      return j.dump(2) + "\n";
    }
    case ReportFormat::Csv: {
      std::string out = "fold";
      for (GraspLabel label : kAllLabels) out += "," + std::string(label_token(label));
      out += ",overall\n";
      for (std::size_t f = 0; f < cv.folds.size(); ++f) {
        out += std::to_string(f);
        for (double a : cv.folds[f].per_class_accuracy) out += "," + fixed(a, 6);
        out += "," + fixed(cv.folds[f].overall_accuracy, 6) + "\n";
      }
      return out;
    }
    case ReportFormat::Text:
      break;
  }
  std::string out = pad("Grasp type", kNameWidth) + "Accuracy (mean +- std, " +
                    std::to_string(cv.folds.size()) + " folds)\n" + rule();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    out += pad(std::string(label_display_name(kAllLabels[c])), kNameWidth) +
           fixed(cv.class_mean[c]) + " +- " + fixed(cv.class_std[c]) + "\n";
  }
  out += rule();
  out += pad("OVERALL", kNameWidth) + fixed(cv.overall_mean) + " +- " + fixed(cv.overall_std) +
         "\n\n";
  ConfusionMatrix total{};
  for (const auto& f : cv.folds) {
    for (std::size_t r = 0; r < kNumClasses; ++r) {
      for (std::size_t c = 0; c < kNumClasses; ++c) total[r][c] += f.confusion[r][c];
    }
  }
  out += confusion_grid(total);
  return out;
}

Metrics metrics_from_json(std::string_view text) {
  return parse_or_throw(text, [](const json& j) { return metrics_from(j); });
}

CrossValidation cross_validation_from_json(std::string_view text) {
  return parse_or_throw(text, [](const json& j) {
    CrossValidation cv;
    cv.class_mean = j.at("class_mean").get<decltype(cv.class_mean)>();
    cv.class_std = j.at("class_std").get<decltype(cv.class_std)>();
    cv.overall_mean = j.at("overall_mean").get<double>();
    cv.overall_std = j.at("overall_std").get<double>();
    for (const auto& f : j.at("folds")) cv.folds.push_back(metrics_from(f));
    return cv;
  });
}

}  // namespace grasp
