#pragma once

#include <string>
#include <vector>

namespace metasurf::svg {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct Axes {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  bool log_x = false;
  bool log_y = false;
};

/// Static line chart with one polyline per series and a legend.
std::string line_plot(const std::vector<Series>& series, const Axes& axes);

/// Bar chart; bar i spans [edges[i], edges[i+1]] with height heights[i].
std::string bar_plot(const std::vector<double>& edges, const std::vector<double>& heights, const Axes& axes);

}  // namespace metasurf::svg
