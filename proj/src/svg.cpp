#include "ctp/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace ctp {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
constexpr int kPaletteSize = 10;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::string line_chart_svg(const ChartSpec& spec) {
  if (spec.series.empty()) throw std::invalid_argument("line_chart_svg: no series");

  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool first = true;
  for (const auto& s : spec.series) {
    for (const auto& [x, y] : s.points) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      } else {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
  }
  if (first) throw std::invalid_argument("line_chart_svg: series have no points");
  if (xmax == xmin) {
    xmin -= 1.0;
    xmax += 1.0;
  }
  if (ymax == ymin) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  // 5% padding on the value range.
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const double left = 72, right = 24, top = 40, bottom = 48;
  const double pw = spec.width - left - right;
  const double ph = spec.height - top - bottom;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(spec.width) +
         "\" height=\"" + std::to_string(spec.height) + "\" viewBox=\"0 0 " +
         std::to_string(spec.width) + " " + std::to_string(spec.height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(spec.width / 2.0) +
         "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
         spec.title + "</text>\n";

  // Axes and ticks.
  out += "<g stroke=\"#333333\" stroke-width=\"1\" fill=\"none\">\n";
  out += "<path d=\"M " + fmt(left) + " " + fmt(top) + " L " + fmt(left) + " " +
         fmt(top + ph) + " L " + fmt(left + pw) + " " + fmt(top + ph) + "\"/>\n";
  out += "</g>\n";
  out += "<g font-family=\"sans-serif\" font-size=\"10\" fill=\"#333333\">\n";
  const int ticks = 5;
  for (int i = 0; i <= ticks; ++i) {
    const double tx = xmin + (xmax - xmin) * i / ticks;
    const double ty = ymin + (ymax - ymin) * i / ticks;
    out += "<text x=\"" + fmt(px(tx)) + "\" y=\"" + fmt(top + ph + 16) +
           "\" text-anchor=\"middle\">" + fmt(tx) + "</text>\n";
    out += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(py(ty) + 3) +
           "\" text-anchor=\"end\">" + fmt(ty) + "</text>\n";
  }
  out += "<text x=\"" + fmt(left + pw / 2) + "\" y=\"" + fmt(top + ph + 36) +
         "\" text-anchor=\"middle\" font-size=\"12\">" + spec.x_label + "</text>\n";
  out += "<text x=\"16\" y=\"" + fmt(top + ph / 2) +
         "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
         fmt(top + ph / 2) + ")\">" + spec.y_label + "</text>\n";
  out += "</g>\n";

  for (size_t si = 0; si < spec.series.size(); ++si) {
    const auto& s = spec.series[si];
    const char* color = kPalette[si % kPaletteSize];
    if (s.points.size() == 1) {
      out += "<circle cx=\"" + fmt(px(s.points[0].first)) + "\" cy=\"" +
             fmt(py(s.points[0].second)) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    } else if (!s.points.empty()) {
      out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
             "\" stroke-width=\"1.5\" points=\"";
      for (size_t i = 0; i < s.points.size(); ++i) {
        if (i) out += " ";
        out += fmt(px(s.points[i].first)) + "," + fmt(py(s.points[i].second));
      }
      out += "\"/>\n";
    }
    // Legend entry.
    const double ly = top + 8 + 16 * static_cast<double>(si);
    out += "<rect x=\"" + fmt(left + pw - 150) + "\" y=\"" + fmt(ly - 8) +
           "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
    out += "<text x=\"" + fmt(left + pw - 136) + "\" y=\"" + fmt(ly + 1) +
           "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#333333\">" + s.label +
           "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace ctp
