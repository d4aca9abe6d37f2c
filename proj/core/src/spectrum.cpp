#include "metasurf/spectrum.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "metasurf/error.hpp"

namespace metasurf {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorKind::InvalidArgument, "bad number '" + std::string(s) + "' in spectrum CSV");
  return v;
}

}  // namespace

std::vector<double> uniform_freqs(double lo, double hi, int n) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "frequency count must be >= 1");
  std::vector<double> f(n);
  if (n == 1) {
    f[0] = lo;
    return f;
  }
  for (int i = 0; i < n; ++i) f[i] = lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  return f;
}

void validate(const Spectrum& s, double tol) {
  if (s.freqs.size() != s.values.size())
    throw Error(ErrorKind::InvalidArgument, "spectrum has mismatched freq/value lengths");
  for (std::size_t i = 1; i < s.freqs.size(); ++i) {
    if (!(s.freqs[i] > s.freqs[i - 1]))
      throw Error(ErrorKind::InvalidArgument, "spectrum frequencies not strictly increasing");
    const double step = s.freqs[1] - s.freqs[0];
    if (std::abs((s.freqs[i] - s.freqs[i - 1]) - step) > 1e-6 * step)
      throw Error(ErrorKind::InvalidArgument, "spectrum frequencies not uniformly spaced");
  }
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double v = s.values[i];
    if (!(v >= 0.0 && v <= 1.0 + tol))
      throw Error(ErrorKind::InvalidArgument,
                  "spectrum value " + format_double(v) + " at bin " + std::to_string(i) +
                      " outside [0, 1+" + format_double(tol) + "]");
  }
}

double mean_square_deviation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw Error(ErrorKind::GridMismatch, "spectra have " + std::to_string(a.size()) + " and " +
                                             std::to_string(b.size()) + " bins");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

double mean_square_deviation(const Spectrum& a, const Spectrum& b) {
  return mean_square_deviation(a.values, b.values);
}

bool same_grid(const Spectrum& a, const Spectrum& b, double rel_tol) {
  if (a.freqs.size() != b.freqs.size()) return false;
  for (std::size_t i = 0; i < a.freqs.size(); ++i)
    if (std::abs(a.freqs[i] - b.freqs[i]) > rel_tol * std::abs(a.freqs[i])) return false;
  return true;
}

std::string to_csv(const Spectrum& s) {
  std::string out = "freq_hz,copr\n";
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    out += format_double(s.freqs[i]);
    out += ',';
    out += format_double(s.values[i]);
    out += '\n';
  }
  return out;
}

Spectrum spectrum_from_csv(std::string_view text) {
  Spectrum s;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "freq_hz,copr")
        throw Error(ErrorKind::InvalidArgument, "spectrum CSV must start with 'freq_hz,copr'");
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw Error(ErrorKind::InvalidArgument, "spectrum CSV row without comma: " + line);
    s.freqs.push_back(parse_double(std::string_view(line).substr(0, comma)));
    s.values.push_back(parse_double(std::string_view(line).substr(comma + 1)));
  }
  if (!header) throw Error(ErrorKind::InvalidArgument, "empty spectrum CSV");
  return s;
}

}  // namespace metasurf
