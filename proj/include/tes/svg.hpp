#pragma once

// Minimal SVG charts: scatter plots and line charts with axes.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "tes/tensor.hpp"

namespace tes::svg {

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::string color = "#1f77b4";
};

struct Frame {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  int width = 480, height = 360, margin = 48;

  double px(double x) const { return margin + (x - x0) / (x1 - x0) * (width - 2 * margin); }
  double py(double y) const { return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin); }
};

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

/// Frame covering every point of every series, padded by 5%.
inline Frame fit(const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  Frame f;
  if (x0 > x1) return f;
  auto pad = [](double& lo, double& hi) {
    const double d = hi > lo ? 0.05 * (hi - lo) : 0.5;
    lo -= d;
    hi += d;
  };
  pad(x0, x1);
  pad(y0, y1);
  f.x0 = x0, f.x1 = x1, f.y0 = y0, f.y1 = y1;
  return f;
}

inline void axes(std::ostream& os, const Frame& f, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel) {
  const double l = f.margin, r = f.width - f.margin, t = f.margin, b = f.height - f.margin;
  os << "<rect x=\"" << l << "\" y=\"" << t << "\" width=\"" << r - l << "\" height=\"" << b - t
     << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    os << "<text x=\"" << f.px(xv) << "\" y=\"" << b + 14 << "\" font-size=\"10\" text-anchor=\"middle\">" << fmt(xv)
       << "</text>\n";
    os << "<text x=\"" << l - 4 << "\" y=\"" << f.py(yv) + 3 << "\" font-size=\"10\" text-anchor=\"end\">" << fmt(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << f.width / 2 << "\" y=\"" << t - 16 << "\" font-size=\"13\" text-anchor=\"middle\">" << title
     << "</text>\n";
  os << "<text x=\"" << f.width / 2 << "\" y=\"" << f.height - 10 << "\" font-size=\"11\" text-anchor=\"middle\">"
     << xlabel << "</text>\n";
  os << "<text x=\"12\" y=\"" << f.height / 2 << "\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 12 "
     << f.height / 2 << ")\">" << ylabel << "</text>\n";
}

inline void legend(std::ostream& os, const Frame& f, const std::vector<Series>& series) {
  double y = f.margin + 12;
  for (const auto& s : series) {
    if (s.name.empty()) continue;
    const double x = f.width - f.margin - 110;
    os << "<rect x=\"" << x << "\" y=\"" << y - 8 << "\" width=\"10\" height=\"10\" fill=\"" << s.color << "\"/>\n";
    os << "<text x=\"" << x + 14 << "\" y=\"" << y + 1 << "\" font-size=\"10\">" << s.name << "</text>\n";
    y += 14;
  }
}

inline std::string scatter(const std::vector<Series>& series, const std::string& title, const std::string& xlabel = "x0",
                           const std::string& ylabel = "x1", const Frame* frame = nullptr) {
  const Frame f = frame ? *frame : fit(series);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height << "\">\n";
  axes(os, f, title, xlabel, ylabel);
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i)
      os << "<circle cx=\"" << fmt(f.px(s.x[i])) << "\" cy=\"" << fmt(f.py(s.y[i])) << "\" r=\"1.6\" fill=\"" << s.color
         << "\"/>\n";
  legend(os, f, series);
  os << "</svg>\n";
  return os.str();
}

inline std::string lines(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                         const std::string& ylabel) {
  const Frame f = fit(series);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height << "\">\n";
  axes(os, f, title, xlabel, ylabel);
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << fmt(f.px(s.x[i])) << ',' << fmt(f.py(s.y[i])) << ' ';
    os << "\"/>\n";
  }
  legend(os, f, series);
  os << "</svg>\n";
  return os.str();
}

inline void write(const std::string& path, const std::string& doc) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "cannot open '" + path + "' for writing");
  os << doc;
}

/// Columns 0 and 1 of a point set as one series.
inline Series points(const Tensor& x, std::string name, std::string color) {
  Series s{std::move(name), {}, {}, std::move(color)};
  for (std::size_t r = 0; r < x.rows(); ++r) {
    s.x.push_back(x.at(r, 0));
    s.y.push_back(x.cols() > 1 ? x.at(r, 1) : 0.0);
  }
  return s;
}

}  // namespace tes::svg
