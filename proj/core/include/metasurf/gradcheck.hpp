#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace metasurf::ad {

struct GradCheckEntry {
  std::string op;
  /// "fd": max |analytic - numeric| / max |numeric| over all inputs.
  /// "adjoint": |<y, conv(x)> - <conv_t(y), x>|.
  std::string kind;
  double error = 0;
  double tol = 0;
  bool pass() const { return error <= tol; }
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  bool all_pass() const;
  std::string to_json() const;
  std::string to_text() const;
};

/// Central finite differences (eps 1e-5, float64) for every differentiable op
/// plus the conv / conv-transpose adjoint identity on random inputs.
GradCheckReport run_gradcheck(std::uint64_t seed, double fd_tol = 1e-4, double adjoint_tol = 1e-10);

}  // namespace metasurf::ad
