#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pslab/csv.hpp"

namespace pslab::cli {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

namespace detail {

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                           "#9467bd", "#8c564b"};

}  // namespace detail

// Self-contained SVG with panels side by side. Every marker carries its
// source values in data-x/data-y, formatted exactly as in the CSV output.
inline std::string render_svg(const std::vector<Panel>& panels) {
  using detail::num;
  constexpr double kW = 420, kH = 300, kLeft = 55, kRight = 15, kTop = 30, kBottom = 45;
  const double total_w = kW * static_cast<double>(std::max<std::size_t>(panels.size(), 1));
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(total_w) +
                  "\" height=\"" + num(kH) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    const double ox = kW * static_cast<double>(p);
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& se : panel.series)
      for (std::size_t i = 0; i < se.x.size(); ++i) {
        if (first) {
          xmin = xmax = se.x[i];
          ymin = ymax = se.y[i];
          first = false;
        }
        xmin = std::min(xmin, se.x[i]);
        xmax = std::max(xmax, se.x[i]);
        ymin = std::min(ymin, se.y[i]);
        ymax = std::max(ymax, se.y[i]);
      }
    ymin = std::min(ymin, 0.0);
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    auto px = [&](double x) { return ox + kLeft + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return kTop + ph - (y - ymin) / (ymax - ymin) * ph; };

    s += "<g>\n<text x=\"" + num(ox + kW / 2) + "\" y=\"18\" text-anchor=\"middle\">" +
         detail::escape_xml(panel.title) + "</text>\n";
    s += "<rect x=\"" + num(ox + kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) +
         "\" height=\"" + num(ph) + "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double xv = xmin + (xmax - xmin) * t / 4.0, yv = ymin + (ymax - ymin) * t / 4.0;
      s += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(kTop + ph + 14) +
           "\" text-anchor=\"middle\">" + csv::format_real(std::round(xv * 1000) / 1000) +
           "</text>\n";
      s += "<text x=\"" + num(ox + kLeft - 4) + "\" y=\"" + num(py(yv) + 4) +
           "\" text-anchor=\"end\">" + csv::format_real(std::round(yv * 1000) / 1000) +
           "</text>\n";
    }
    s += "<text x=\"" + num(ox + kLeft + pw / 2) + "\" y=\"" + num(kH - 8) +
         "\" text-anchor=\"middle\">" + detail::escape_xml(panel.x_label) + "</text>\n";
    s += "<text transform=\"translate(" + num(ox + 12) + "," + num(kTop + ph / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" + detail::escape_xml(panel.y_label) +
         "</text>\n";
    for (std::size_t k = 0; k < panel.series.size(); ++k) {
      const auto& se = panel.series[k];
      const char* color = detail::kPalette[k % std::size(detail::kPalette)];
      std::string pts;
      for (std::size_t i = 0; i < se.x.size(); ++i)
        pts += num(px(se.x[i])) + "," + num(py(se.y[i])) + " ";
      s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" +
           pts + "\"/>\n";
      for (std::size_t i = 0; i < se.x.size(); ++i)
        s += "<circle cx=\"" + num(px(se.x[i])) + "\" cy=\"" + num(py(se.y[i])) +
             "\" r=\"2\" fill=\"" + color + "\" data-series=\"" + detail::escape_xml(se.name) +
             "\" data-x=\"" + csv::format_real(se.x[i]) + "\" data-y=\"" +
             csv::format_real(se.y[i]) + "\"/>\n";
      s += "<text x=\"" + num(ox + kLeft + 8) + "\" y=\"" + num(kTop + 14 + 13.0 * k) +
           "\" fill=\"" + color + "\">" + detail::escape_xml(se.name) + "</text>\n";
    }
    s += "</g>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace pslab::cli
