// Copyright 2026 The norm-forge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Static SVG figures: scatter with marginal densities, grouped bars and
// line panels. Output is a pure function of the inputs (fixed-precision
// coordinates, no timestamps).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "normforge/error.hpp"
#include "normforge/numeric.hpp"

namespace normforge::plot {

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> colors = {"#d62728", "#17becf", "#ff7f0e", "#1f77b4",
                                                  "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};
  return colors;
}

inline std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

class Svg {
 public:
  Svg(double width, double height) : width_(width), height_(height) {}

  static std::string f(double v) { return numeric::format_fixed(v, 2); }

  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none") {
    body_ += "<rect x=\"" + f(x) + "\" y=\"" + f(y) + "\" width=\"" + f(w) + "\" height=\"" + f(h) + "\" fill=\"" +
             fill + "\" stroke=\"" + stroke + "\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1,
            const std::string& dash = {}) {
    body_ += "<line x1=\"" + f(x1) + "\" y1=\"" + f(y1) + "\" x2=\"" + f(x2) + "\" y2=\"" + f(y2) +
             "\" stroke=\"" + stroke + "\" stroke-width=\"" + f(width) + "\"" +
             (dash.empty() ? std::string() : " stroke-dasharray=\"" + dash + "\"") + "/>\n";
  }
  void circle(double cx, double cy, double r, const std::string& fill, double opacity = 1) {
    body_ += "<circle cx=\"" + f(cx) + "\" cy=\"" + f(cy) + "\" r=\"" + f(r) + "\" fill=\"" + fill +
             "\" fill-opacity=\"" + f(opacity) + "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double width = 1.5,
                const std::string& fill = "none", double fill_opacity = 0) {
    if (pts.empty()) return;
    body_ += "<polyline points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) body_ += (i ? " " : "") + f(pts[i].first) + "," + f(pts[i].second);
    body_ += "\" fill=\"" + fill + "\" fill-opacity=\"" + f(fill_opacity) + "\" stroke=\"" + stroke +
             "\" stroke-width=\"" + f(width) + "\"/>\n";
  }
  void text(double x, double y, const std::string& s, double size = 12, const std::string& anchor = "start",
            double rotate = 0) {
    body_ += "<text x=\"" + f(x) + "\" y=\"" + f(y) + "\" font-family=\"sans-serif\" font-size=\"" + f(size) +
             "\" text-anchor=\"" + anchor + "\"" +
             (rotate != 0 ? " transform=\"rotate(" + f(rotate) + " " + f(x) + " " + f(y) + ")\"" : std::string()) +
             ">" + escape(s) + "</text>\n";
  }

  std::string str() const {
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           f(width_) + "\" height=\"" + f(height_) + "\" viewBox=\"0 0 " + f(width_) + " " + f(height_) + "\">\n" +
           "<rect x=\"0\" y=\"0\" width=\"" + f(width_) + "\" height=\"" + f(height_) + "\" fill=\"white\"/>\n" +
           body_ + "</svg>\n";
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Config, "cannot write plot '" + path + "'");
    out << str();
  }

 private:
  double width_, height_;
  std::string body_;
};

/// Linear map from data to pixels.
struct Axis {
  double lo, hi, px_lo, px_hi;
  double operator()(double v) const { return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo); }
};

/// Gaussian KDE on a grid over [lo, hi] with Silverman's bandwidth.
inline std::vector<std::pair<double, double>> density(const std::vector<double>& values, double lo, double hi,
                                                      int grid = 80) {
  std::vector<std::pair<double, double>> out;
  if (values.size() < 2) return out;
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  double sd = std::sqrt(var / static_cast<double>(values.size() - 1));
  double bw = 1.06 * std::max(sd, 1e-3) * std::pow(static_cast<double>(values.size()), -0.2);
  for (int g = 0; g <= grid; ++g) {
    double x = lo + (hi - lo) * g / grid;
    double d = 0;
    for (double v : values) {
      double z = (x - v) / bw;
      d += std::exp(-0.5 * z * z);
    }
    out.emplace_back(x, d / (static_cast<double>(values.size()) * bw * std::sqrt(2 * std::numbers::pi)));
  }
  return out;
}

struct ScatterSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Human (x) vs model (y) ratings with per-series regression lines, the
/// identity diagonal and marginal densities on the top and right.
inline Svg scatter_with_marginals(const std::string& title, const std::string& x_label, const std::string& y_label,
                                  double lo, double hi, const std::vector<ScatterSeries>& series) {
  const double W = 800, H = 560, left = 70, right_margin = 310, top = 120, bottom = 60, margin_h = 70;
  Svg svg(W, H);
  Axis ax{lo, hi, left, W - right_margin};
  Axis ay{lo, hi, H - bottom, top};
  svg.text(W / 2, 24, title, 15, "middle");
  svg.rect(left, top, W - right_margin - left, H - bottom - top, "none", "#444444");
  for (int t = static_cast<int>(std::ceil(lo)); t <= static_cast<int>(std::floor(hi)); ++t) {
    svg.line(ax(t), H - bottom, ax(t), H - bottom + 5, "#444444");
    svg.text(ax(t), H - bottom + 18, std::to_string(t), 11, "middle");
    svg.line(left - 5, ay(t), left, ay(t), "#444444");
    svg.text(left - 8, ay(t) + 4, std::to_string(t), 11, "end");
  }
  svg.text((left + W - right_margin) / 2, H - 18, x_label, 12, "middle");
  svg.text(20, (top + H - bottom) / 2, y_label, 12, "middle", -90);
  svg.line(ax(lo), ay(lo), ax(hi), ay(hi), "#999999", 1, "4 3");

  // Top margin: human distribution (shared by all series, take the first).
  if (!series.empty()) {
    auto d = density(series.front().x, lo, hi);
    double peak = 0;
    for (auto& [x, v] : d) peak = std::max(peak, v);
    std::vector<std::pair<double, double>> pts;
    for (auto& [x, v] : d) pts.emplace_back(ax(x), top - 8 - (peak > 0 ? v / peak : 0) * (margin_h - 20));
    svg.polyline(pts, "#555555");
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& color = palette()[s % palette().size()];
    const auto& sr = series[s];
    for (std::size_t i = 0; i < sr.x.size(); ++i) svg.circle(ax(sr.x[i]), ay(sr.y[i]), 2.2, color, 0.55);
    // Least-squares line.
    if (sr.x.size() >= 2) {
      double mx = 0, my = 0;
      for (std::size_t i = 0; i < sr.x.size(); ++i) {
        mx += sr.x[i];
        my += sr.y[i];
      }
      mx /= static_cast<double>(sr.x.size());
      my /= static_cast<double>(sr.y.size());
      double sxy = 0, sxx = 0;
      for (std::size_t i = 0; i < sr.x.size(); ++i) {
        sxy += (sr.x[i] - mx) * (sr.y[i] - my);
        sxx += (sr.x[i] - mx) * (sr.x[i] - mx);
      }
      if (sxx > 0) {
        double b = sxy / sxx, a = my - b * mx;
        svg.line(ax(lo), ay(std::clamp(a + b * lo, lo, hi)), ax(hi), ay(std::clamp(a + b * hi, lo, hi)), color, 2);
      }
    }
    // Right margin: model distribution.
    auto d = density(sr.y, lo, hi);
    double peak = 0;
    for (auto& [y, v] : d) peak = std::max(peak, v);
    std::vector<std::pair<double, double>> pts;
    for (auto& [y, v] : d) pts.emplace_back(W - right_margin + 8 + (peak > 0 ? v / peak : 0) * (margin_h - 20), ay(y));
    svg.polyline(pts, color);
    svg.rect(W - right_margin + margin_h + 20, top + 10 + 18.0 * static_cast<double>(s), 10, 10, color);
    svg.text(W - right_margin + margin_h + 35, top + 19 + 18.0 * static_cast<double>(s),
             sr.label + " (n = " + std::to_string(sr.x.size()) + ")", 10);
  }
  return svg;
}

struct BarGroup {
  std::string label;
  std::vector<std::pair<std::string, double>> bars;  // series label, value
};

inline Svg grouped_bars(const std::string& title, const std::string& y_label, double lo, double hi,
                        const std::vector<BarGroup>& groups) {
  std::vector<std::string> series;
  for (const auto& g : groups)
    for (const auto& [s, v] : g.bars)
      if (std::find(series.begin(), series.end(), s) == series.end()) series.push_back(s);
  const double left = 70, top = 50, bottom = 70, right_margin = 170;
  const double group_w = std::max(90.0, 30.0 * static_cast<double>(series.size()) + 30);
  const double W = left + right_margin + group_w * static_cast<double>(std::max<std::size_t>(groups.size(), 1));
  const double H = 420;
  Svg svg(W, H);
  Axis ay{lo, hi, H - bottom, top};
  svg.text(W / 2, 26, title, 15, "middle");
  svg.rect(left, top, W - right_margin - left, H - bottom - top, "none", "#444444");
  for (double t = lo; t <= hi + 1e-9; t += 0.25) {
    svg.line(left - 5, ay(t), left, ay(t), "#444444");
    svg.text(left - 8, ay(t) + 4, numeric::format_fixed(t, 2), 10, "end");
  }
  if (lo < 0 && hi > 0) svg.line(left, ay(0), W - right_margin, ay(0), "#888888");
  svg.text(20, (top + H - bottom) / 2, y_label, 12, "middle", -90);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double gx = left + group_w * static_cast<double>(g);
    svg.text(gx + group_w / 2, H - bottom + 18, groups[g].label, 11, "middle");
    for (const auto& [s, v] : groups[g].bars) {
      auto idx = static_cast<std::size_t>(std::find(series.begin(), series.end(), s) - series.begin());
      double x = gx + 15 + 30.0 * static_cast<double>(idx);
      double y0 = ay(std::clamp(0.0, lo, hi)), y1 = ay(std::clamp(v, lo, hi));
      svg.rect(x, std::min(y0, y1), 24, std::fabs(y1 - y0), palette()[idx % palette().size()]);
      svg.text(x + 12, std::min(y0, y1) - 4, numeric::format_fixed(v, 2), 9, "middle");
    }
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    svg.rect(W - right_margin + 15, top + 10 + 18.0 * static_cast<double>(s), 10, 10, palette()[s % palette().size()]);
    svg.text(W - right_margin + 30, top + 19 + 18.0 * static_cast<double>(s), series[s], 11);
  }
  return svg;
}

struct LineSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct LinePanel {
  std::string title;
  std::vector<LineSeries> series;
};

/// Side-by-side panels sharing axes.
inline Svg line_panels(const std::string& title, const std::string& x_label, const std::string& y_label,
                       double x_lo, double x_hi, double y_lo, double y_hi, const std::vector<LinePanel>& panels) {
  const double panel_w = 240, left = 70, top = 60, bottom = 60, gap = 30, right_margin = 160, H = 380;
  const double W = left + right_margin + (panel_w + gap) * static_cast<double>(std::max<std::size_t>(panels.size(), 1));
  Svg svg(W, H);
  svg.text(W / 2, 26, title, 15, "middle");
  std::vector<std::string> labels;
  for (std::size_t p = 0; p < panels.size(); ++p) {
    double px = left + (panel_w + gap) * static_cast<double>(p);
    Axis ax{x_lo, x_hi, px, px + panel_w};
    Axis ay{y_lo, y_hi, H - bottom, top};
    svg.rect(px, top, panel_w, H - bottom - top, "none", "#444444");
    svg.text(px + panel_w / 2, top - 8, panels[p].title, 12, "middle");
    for (int t = static_cast<int>(std::ceil(x_lo)); t <= static_cast<int>(std::floor(x_hi)); ++t) {
      svg.line(ax(t), H - bottom, ax(t), H - bottom + 5, "#444444");
      svg.text(ax(t), H - bottom + 18, std::to_string(t), 10, "middle");
    }
    if (p == 0) {
      for (int i = 0; i <= 4; ++i) {
        double t = y_lo + (y_hi - y_lo) * i / 4;
        svg.line(px - 5, ay(t), px, ay(t), "#444444");
        svg.text(px - 8, ay(t) + 4, numeric::format_fixed(t, 2), 10, "end");
      }
    }
    for (const auto& s : panels[p].series) {
      auto it = std::find(labels.begin(), labels.end(), s.label);
      std::size_t idx = static_cast<std::size_t>(it - labels.begin());
      if (it == labels.end()) labels.push_back(s.label);
      std::vector<std::pair<double, double>> pts;
      for (const auto& [x, y] : s.points) pts.emplace_back(ax(x), ay(std::clamp(y, y_lo, y_hi)));
      svg.polyline(pts, palette()[idx % palette().size()], 2);
    }
  }
  svg.text(left + ((panel_w + gap) * static_cast<double>(panels.size()) - gap) / 2, H - 18, x_label, 12, "middle");
  svg.text(20, (top + H - bottom) / 2, y_label, 12, "middle", -90);
  double lx = W - right_margin + 15;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    svg.rect(lx, top + 10 + 18.0 * static_cast<double>(s), 10, 10, palette()[s % palette().size()]);
    svg.text(lx + 15, top + 19 + 18.0 * static_cast<double>(s), labels[s], 11);
  }
  return svg;
}

}  // namespace normforge::plot
