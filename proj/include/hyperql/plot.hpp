#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hyperql/io.hpp"

namespace hyperql {

struct PlotSpec {
  std::string x = "step";
  std::string y;
  int window = 1;        // trailing moving average width
  bool iqr = false;      // median line with Q1/Q3 band across inputs
  int width = 720;
  int height = 440;
};

namespace plot_detail {

inline std::vector<double> moving_average(const std::vector<double>& v, int window) {
  if (window <= 1) return v;
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= static_cast<size_t>(window)) acc -= v[i - static_cast<size_t>(window)];
    const size_t n = std::min(i + 1, static_cast<size_t>(window));
    out[i] = acc / static_cast<double>(n);
  }
  return out;
}

// Linear-interpolation quantile of a sorted copy.
inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (static_cast<double>(v.size()) - 1.0);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

struct Frame {
  double x0, x1, y0, y1;
  int width, height;
  static constexpr int kMargin = 50;

  double px(double x) const {
    const double span = x1 > x0 ? x1 - x0 : 1.0;
    return kMargin + (x - x0) / span * (width - 2 * kMargin);
  }
  double py(double y) const {
    const double span = y1 > y0 ? y1 - y0 : 1.0;
    return height - kMargin - (y - y0) / span * (height - 2 * kMargin);
  }
};

inline std::string polyline(const Frame& f, const std::vector<double>& xs,
                            const std::vector<double>& ys, const std::string& color) {
  std::string out = "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"";
  for (size_t i = 0; i < xs.size(); ++i) {
    out += fmt_g17(f.px(xs[i])) + "," + fmt_g17(f.py(ys[i])) + " ";
  }
  out += "\"/>\n";
  return out;
}

}  // namespace plot_detail

// Polyline chart of one column across one or more CSV tables. With iqr set,
// the tables are treated as repeated runs over the same x grid and the chart
// shows median, Q1 and Q3 lines plus a shaded band.
inline std::string render_svg(const std::vector<CsvTable>& tables, const PlotSpec& spec) {
  using namespace plot_detail;
  if (tables.empty()) throw IoError("plot: no input tables");
  std::vector<std::vector<double>> xs, ys;
  for (const CsvTable& t : tables) {
    xs.push_back(t.column(spec.x));
    ys.push_back(moving_average(t.column(spec.y), spec.window));
  }
  if (spec.iqr) {
    for (size_t k = 1; k < tables.size(); ++k) {
      if (xs[k] != xs[0]) throw IoError("plot: iqr inputs must share the x grid");
    }
  }

  double xmin = xs[0][0], xmax = xs[0][0], ymin = ys[0][0], ymax = ys[0][0];
  for (size_t k = 0; k < xs.size(); ++k) {
    for (double v : xs[k]) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : ys[k]) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (ymax == ymin) {
    ymax += 1.0;
    ymin -= 1.0;
  }
  Frame f{xmin, xmax, ymin, ymax, spec.width, spec.height};

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(spec.width) + "\" height=\"" + std::to_string(spec.height) +
                    "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  // Axes with min/max tick labels.
  svg += "<line x1=\"" + fmt_g17(f.px(xmin)) + "\" y1=\"" + fmt_g17(f.py(ymin)) + "\" x2=\"" +
         fmt_g17(f.px(xmax)) + "\" y2=\"" + fmt_g17(f.py(ymin)) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + fmt_g17(f.px(xmin)) + "\" y1=\"" + fmt_g17(f.py(ymin)) + "\" x2=\"" +
         fmt_g17(f.px(xmin)) + "\" y2=\"" + fmt_g17(f.py(ymax)) + "\" stroke=\"black\"/>\n";
  auto label = [&](double x, double y, const std::string& text, const std::string& anchor) {
    return "<text x=\"" + fmt_g17(x) + "\" y=\"" + fmt_g17(y) + "\" font-size=\"11\" text-anchor=\"" +
           anchor + "\">" + text + "</text>\n";
  };
  svg += label(f.px(xmin), f.py(ymin) + 16, fmt_g17(xmin), "middle");
  svg += label(f.px(xmax), f.py(ymin) + 16, fmt_g17(xmax), "middle");
  svg += label(f.px(xmin) - 6, f.py(ymin), fmt_g17(ymin), "end");
  svg += label(f.px(xmin) - 6, f.py(ymax), fmt_g17(ymax), "end");
  svg += label((f.px(xmin) + f.px(xmax)) / 2, static_cast<double>(spec.height) - 12, spec.x,
               "middle");
  svg += label(f.px(xmin), f.py(ymax) - 8, spec.y + (spec.window > 1 ? " (W=" +
               std::to_string(spec.window) + ")" : ""), "start");

  if (spec.iqr && tables.size() > 1) {
    const size_t n = xs[0].size();
    std::vector<double> med(n), q1(n), q3(n);
    for (size_t i = 0; i < n; ++i) {
      std::vector<double> col;
      col.reserve(tables.size());
      for (size_t k = 0; k < tables.size(); ++k) col.push_back(ys[k][i]);
      med[i] = quantile(col, 0.5);
      q1[i] = quantile(col, 0.25);
      q3[i] = quantile(col, 0.75);
    }
    std::string poly = "<polygon fill=\"#4d79ff\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
    for (size_t i = 0; i < n; ++i) poly += fmt_g17(f.px(xs[0][i])) + "," + fmt_g17(f.py(q3[i])) + " ";
    for (size_t i = n; i-- > 0;) poly += fmt_g17(f.px(xs[0][i])) + "," + fmt_g17(f.py(q1[i])) + " ";
    poly += "\"/>\n";
    svg += poly;
    svg += polyline(f, xs[0], q1, "#8caaff");
    svg += polyline(f, xs[0], q3, "#8caaff");
    svg += polyline(f, xs[0], med, "#1f3bbf");
  } else {
    const std::vector<std::string> palette{"#1f3bbf", "#bf3b1f", "#1f9f3b", "#9f1f9f", "#bf8a1f"};
    for (size_t k = 0; k < tables.size(); ++k) {
      svg += polyline(f, xs[k], ys[k], palette[k % palette.size()]);
    }
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace hyperql
