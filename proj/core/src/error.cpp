#include "metasurf/error.hpp"

namespace metasurf {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::GenerationRetryExhausted: return "generation-retry-exhausted";
    case ErrorKind::PlacementExhausted: return "placement-exhausted";
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::Nonconvergence: return "nonconvergence";
    case ErrorKind::CorruptHeader: return "corrupt-header";
    case ErrorKind::TruncatedRecords: return "truncated-records";
    case ErrorKind::VersionMismatch: return "version-mismatch";
    case ErrorKind::EmptySide: return "empty-side";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::NotScalar: return "not-scalar";
    case ErrorKind::MissingGrad: return "missing-grad";
    case ErrorKind::InvalidSpec: return "invalid-spec";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::FingerprintMismatch: return "fingerprint-mismatch";
    case ErrorKind::GridMismatch: return "grid-mismatch";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::FrozenModified: return "frozen-evaluator-modified";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace metasurf
