#pragma once

#include <string>
#include <utility>
#include <vector>

namespace ctp {

/// One labelled polyline of a chart.
struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  int width = 860;
  int height = 480;
};

/// Renders a deterministic SVG line chart: fixed palette, fixed number
/// formatting, legend entry per series, a circle marker for single-point
/// series. Identical input yields byte-identical output.
std::string line_chart_svg(const ChartSpec& spec);

}  // namespace ctp
