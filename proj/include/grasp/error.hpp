#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace grasp {

enum class Errc {
  InvalidArgument,
  EmptyCloud,
  DegenerateCloud,
  IndexOutOfRange,
  KTooLarge,
  TooFewNeighbors,
  DegenerateNeighborhood,
  MalformedHeader,
  MalformedBody,
  UnsupportedFields,
  UnsupportedEncoding,
  NonFiniteValue,
  InvalidNormal,
  MalformedRow,
  UnknownLabel,
  DuplicatePath,
  EmptyManifest,
  ViewpointInsideObject,
  ShapeMismatch,
  InsufficientBatch,
  InvalidLabel,
  NonFinite,
  InvalidConfig,
  MissingNormals,
  WrongPointCount,
  BadMagic,
  VersionMismatch,
  Truncated,
  ChecksumMismatch,
  ClassTooSmall,
  BatchTooSmall,
  Io,
};

std::string_view errc_name(Errc code) noexcept;

/// Structured failure raised by every module. `row` and `column` are
/// populated where the error refers to a position in an input (a PCD body
/// line, a manifest row, a point index); -1 otherwise.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::int64_t row = -1,
        std::int64_t column = -1);

  Errc code() const noexcept { return code_; }
  std::int64_t row() const noexcept { return row_; }
  std::int64_t column() const noexcept { return column_; }

 private:
  Errc code_;
  std::int64_t row_;
  std::int64_t column_;
};

}  // namespace grasp
