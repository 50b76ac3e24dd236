#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace grasp {

// Integer codes are part of the checkpoint and manifest contract.
enum class GraspLabel : std::uint8_t {
  Pinch = 0,
  PalmarWristNeutral = 1,
  Tripod = 2,
  PalmarWristPronated = 3,
};

inline constexpr std::size_t kNumClasses = 4;

inline constexpr std::array<GraspLabel, kNumClasses> kAllLabels = {
    GraspLabel::Pinch, GraspLabel::PalmarWristNeutral, GraspLabel::Tripod,
    GraspLabel::PalmarWristPronated};

constexpr int label_code(GraspLabel label) { return static_cast<int>(label); }

std::optional<GraspLabel> label_from_code(int code);

// Manifest token: pinch, palmar_wn, tripod, palmar_wp.
std::string_view label_token(GraspLabel label);
std::optional<GraspLabel> label_from_token(std::string_view token);

// Human-readable name used in reports.
std::string_view label_display_name(GraspLabel label);

}  // namespace grasp
