#include <array>

#include "grasp/error.hpp"
#include "grasp/label.hpp"

namespace grasp {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::EmptyCloud: return "EmptyCloud";
    case Errc::DegenerateCloud: return "DegenerateCloud";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::KTooLarge: return "KTooLarge";
    case Errc::TooFewNeighbors: return "TooFewNeighbors";
    case Errc::DegenerateNeighborhood: return "DegenerateNeighborhood";
    case Errc::MalformedHeader: return "MalformedHeader";
    case Errc::MalformedBody: return "MalformedBody";
    case Errc::UnsupportedFields: return "UnsupportedFields";
    case Errc::UnsupportedEncoding: return "UnsupportedEncoding";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::InvalidNormal: return "InvalidNormal";
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::DuplicatePath: return "DuplicatePath";
    case Errc::EmptyManifest: return "EmptyManifest";
    case Errc::ViewpointInsideObject: return "ViewpointInsideObject";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::InsufficientBatch: return "InsufficientBatch";
    case Errc::InvalidLabel: return "InvalidLabel";
    case Errc::NonFinite: return "NonFinite";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::MissingNormals: return "MissingNormals";
    case Errc::WrongPointCount: return "WrongPointCount";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::Truncated: return "Truncated";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::ClassTooSmall: return "ClassTooSmall";
    case Errc::BatchTooSmall: return "BatchTooSmall";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message, std::int64_t row,
             std::int64_t column)
    : std::runtime_error(std::string(errc_name(code)) + ": " + message),
      code_(code),
      row_(row),
      column_(column) {}

namespace {

constexpr std::array<std::string_view, kNumClasses> kTokens = {
    "pinch", "palmar_wn", "tripod", "palmar_wp"};
constexpr std::array<std::string_view, kNumClasses> kDisplay = {
    "Pinch", "Palmar wrist neutral", "Tripod", "Palmar wrist pronated"};

}  // namespace

std::optional<GraspLabel> label_from_code(int code) {
  if (code < 0 || code >= static_cast<int>(kNumClasses)) return std::nullopt;
  return static_cast<GraspLabel>(code);
}

std::string_view label_token(GraspLabel label) {
  return kTokens[static_cast<std::size_t>(label)];
}

std::optional<GraspLabel> label_from_token(std::string_view token) {
  for (std::size_t i = 0; i < kTokens.size(); ++i) {
    if (kTokens[i] == token) return static_cast<GraspLabel>(i);
  }
  return std::nullopt;
}

std::string_view label_display_name(GraspLabel label) {
  return kDisplay[static_cast<std::size_t>(label)];
}

}  // namespace grasp
