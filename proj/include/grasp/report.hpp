#pragma once

#include <string>
#include <string_view>

#include "grasp/pipeline.hpp"

namespace grasp {

enum class ReportFormat { Text, Json, Csv };

/// Text: per-class accuracy rows, an overall row and the confusion grid.
/// Json: every Metrics field. Csv: the confusion matrix, one row per true
/// class under a header of predicted classes.
std::string report(const Metrics& metrics, ReportFormat format);

/// Text: per-class mean +- sample std rows, an overall row, then the summed
/// confusion grid. Json: summary plus every fold. Csv: one row per fold.
std::string report(const CrossValidation& cv, ReportFormat format);

Metrics metrics_from_json(std::string_view text);
CrossValidation cross_validation_from_json(std::string_view text);

}  // namespace grasp
