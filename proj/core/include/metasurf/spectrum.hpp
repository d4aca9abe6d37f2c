#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace metasurf {

inline constexpr int kSpectrumBins = 32;

/// Co-polarized reflectance sampled on a uniform frequency grid.
struct Spectrum {
  std::vector<double> freqs;   // Hz, strictly increasing, uniform, inclusive endpoints
  std::vector<double> values;  // power reflectance

  std::size_t size() const { return values.size(); }
};

/// Uniform grid of n points on [lo, hi], endpoints included.
std::vector<double> uniform_freqs(double lo, double hi, int n);

/// Throws InvalidArgument unless the grid is uniform and increasing and
/// every value lies in [0, 1 + tol].
void validate(const Spectrum& s, double tol = 0.02);

/// Mean over bins of (a - b)^2. Throws GridMismatch on length mismatch.
double mean_square_deviation(const Spectrum& a, const Spectrum& b);
double mean_square_deviation(const std::vector<double>& a, const std::vector<double>& b);

bool same_grid(const Spectrum& a, const Spectrum& b, double rel_tol = 1e-9);

/// CSV with header `freq_hz,copr`, one row per bin, shortest round-trip decimals.
std::string to_csv(const Spectrum& s);
Spectrum spectrum_from_csv(std::string_view text);

}  // namespace metasurf
