#include "metasurf/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "metasurf/error.hpp"

namespace metasurf::svg {

namespace {

constexpr double kW = 640, kH = 420;
constexpr double kLeft = 80, kRight = 20, kTop = 40, kBottom = 60;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Scale {
  double lo, hi;
  bool log;
  double a, b;  // pixel range

  double operator()(double v) const {
    const double t = log ? (std::log10(v) - std::log10(lo)) / (std::log10(hi) - std::log10(lo)) : (v - lo) / (hi - lo);
    return a + t * (b - a);
  }
};

Scale make_scale(double lo, double hi, bool log, double a, double b) {
  if (log) {
    if (!(lo > 0)) throw Error(ErrorKind::InvalidArgument, "log axis needs positive values");
    if (hi <= lo) {
      lo /= 10;
      hi *= 10;
    }
  } else if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  return {lo, hi, log, a, b};
}

std::string frame(const Axes& axes, const Scale& sx, const Scale& sy) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kW) + "\" height=\"" + fmt(kH) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(kW / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" + escape(axes.title) + "</text>\n";
  s += "<rect x=\"" + fmt(kLeft) + "\" y=\"" + fmt(kTop) + "\" width=\"" + fmt(kW - kLeft - kRight) + "\" height=\"" +
       fmt(kH - kTop - kBottom) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = sx.log ? std::pow(10.0, std::log10(sx.lo) + (std::log10(sx.hi) - std::log10(sx.lo)) * i / 4)
                             : sx.lo + (sx.hi - sx.lo) * i / 4;
    const double fy = sy.log ? std::pow(10.0, std::log10(sy.lo) + (std::log10(sy.hi) - std::log10(sy.lo)) * i / 4)
                             : sy.lo + (sy.hi - sy.lo) * i / 4;
    s += "<text x=\"" + fmt(sx(fx)) + "\" y=\"" + fmt(kH - kBottom + 18) + "\" text-anchor=\"middle\">" + fmt(fx) + "</text>\n";
    s += "<text x=\"" + fmt(kLeft - 6) + "\" y=\"" + fmt(sy(fy) + 4) + "\" text-anchor=\"end\">" + fmt(fy) + "</text>\n";
  }
  s += "<text x=\"" + fmt(kW / 2) + "\" y=\"" + fmt(kH - 16) + "\" text-anchor=\"middle\">" + escape(axes.xlabel) + "</text>\n";
  s += "<text transform=\"translate(18," + fmt(kH / 2) + ") rotate(-90)\" text-anchor=\"middle\">" + escape(axes.ylabel) +
       "</text>\n";
  return s;
}

}  // namespace

std::string line_plot(const std::vector<Series>& series, const Axes& axes) {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw Error(ErrorKind::ShapeMismatch, "series " + s.label + " has unequal x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || (axes.log_y && s.y[i] <= 0)) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  if (!std::isfinite(xlo)) xlo = xhi = ylo = yhi = 1;
  const Scale sx = make_scale(xlo, xhi, axes.log_x, kLeft, kW - kRight);
  const Scale sy = make_scale(ylo, yhi, axes.log_y, kH - kBottom, kTop);
  std::string out = frame(axes, sx, sy);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % std::size(kColors)];
    std::string pts;
    for (std::size_t i = 0; i < series[k].x.size(); ++i) {
      const double y = series[k].y[i];
      if (!std::isfinite(y) || (axes.log_y && y <= 0)) continue;
      pts += fmt(sx(series[k].x[i])) + ',' + fmt(sy(y)) + ' ';
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = kTop + 16 + 16 * static_cast<double>(k);
    out += "<line x1=\"" + fmt(kW - kRight - 150) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(kW - kRight - 130) +
           "\" y2=\"" + fmt(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt(kW - kRight - 125) + "\" y=\"" + fmt(ly + 4) + "\">" + escape(series[k].label) + "</text>\n";
  }
  return out + "</svg>\n";
}

std::string bar_plot(const std::vector<double>& edges, const std::vector<double>& heights, const Axes& axes) {
  if (edges.size() != heights.size() + 1 || heights.empty())
    throw Error(ErrorKind::ShapeMismatch, "bar plot needs one more edge than bars");
  const double yhi = std::max(1e-300, *std::max_element(heights.begin(), heights.end()));
  const Scale sx = make_scale(edges.front(), edges.back(), axes.log_x, kLeft, kW - kRight);
  const Scale sy = make_scale(0.0, yhi, false, kH - kBottom, kTop);
  std::string out = frame(axes, sx, sy);
  for (std::size_t i = 0; i < heights.size(); ++i) {
    const double x0 = sx(edges[i]), x1 = sx(edges[i + 1]);
    const double y = sy(heights[i]);
    out += "<rect x=\"" + fmt(x0) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(std::max(0.0, x1 - x0 - 1)) +
           "\" height=\"" + fmt(kH - kBottom - y) + "\" fill=\"" + kColors[0] + "\"/>\n";
  }
  return out + "</svg>\n";
}

}  // namespace metasurf::svg
