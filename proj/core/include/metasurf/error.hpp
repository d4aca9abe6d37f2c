#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace metasurf {

/// Failure categories raised by the library. The CLI maps every one of these
/// to exit status 2; the message always names the kind.
enum class ErrorKind {
  InvalidArgument,
  GenerationRetryExhausted,
  PlacementExhausted,
  InvalidConfig,
  Nonconvergence,
  CorruptHeader,
  TruncatedRecords,
  VersionMismatch,
  EmptySide,
  ShapeMismatch,
  NotScalar,
  MissingGrad,
  InvalidSpec,
  Divergence,
  FingerprintMismatch,
  GridMismatch,
  EmptyInput,
  FrozenModified,
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace metasurf
