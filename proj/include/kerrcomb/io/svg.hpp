#pragma once

// Deterministic SVG output: fixed numeric precision, fixed element order, no
// timestamps. Two calls with equal inputs produce byte-identical documents.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "kerrcomb/error.hpp"

namespace kerrcomb::io::svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

struct Frame {
  double width = 640, height = 420;
  double left = 70, right = 20, top = 36, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

namespace detail {

inline void range(const std::vector<double>& v, double& lo, double& hi) {
  for (double x : v)
    if (std::isfinite(x)) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
}

inline void pad(double& lo, double& hi) {
  if (!(lo <= hi)) {
    lo = 0.0;
    hi = 1.0;
  } else if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
}

inline void axes(std::ostringstream& os, const Frame& f, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel) {
  os << "<rect x=\"0\" y=\"0\" width=\"" << num(f.width) << "\" height=\"" << num(f.height)
     << "\" fill=\"white\"/>\n";
  os << "<rect x=\"" << num(f.left) << "\" y=\"" << num(f.top) << "\" width=\"" << num(f.width - f.left - f.right)
     << "\" height=\"" << num(f.height - f.top - f.bottom) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    char bx[32], by[32];
    std::snprintf(bx, sizeof bx, "%.4g", xv);
    std::snprintf(by, sizeof by, "%.4g", yv);
    os << "<text x=\"" << num(f.px(xv)) << "\" y=\"" << num(f.height - f.bottom + 16)
       << "\" font-size=\"11\" text-anchor=\"middle\">" << bx << "</text>\n";
    os << "<text x=\"" << num(f.left - 6) << "\" y=\"" << num(f.py(yv) + 4)
       << "\" font-size=\"11\" text-anchor=\"end\">" << by << "</text>\n";
  }
  os << "<text x=\"" << num(f.width / 2) << "\" y=\"22\" font-size=\"14\" text-anchor=\"middle\">" << escape(title)
     << "</text>\n";
  os << "<text x=\"" << num((f.left + f.width - f.right) / 2) << "\" y=\"" << num(f.height - 12)
     << "\" font-size=\"12\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n";
  os << "<text x=\"16\" y=\"" << num((f.top + f.height - f.bottom) / 2)
     << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << num((f.top + f.height - f.bottom) / 2) << ")\">" << escape(ylabel) << "</text>\n";
}

inline std::string header(const Frame& f) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         num(f.width) + "\" height=\"" + num(f.height) + "\" viewBox=\"0 0 " + num(f.width) + " " + num(f.height) +
         "\">\n";
}

/// Viridis-like ramp sampled at five anchors, t in [0, 1].
inline std::string ramp(double t) {
  static const double c[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double u = t - i;
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(c[i][0] + u * (c[i + 1][0] - c[i][0]))),
                static_cast<int>(std::lround(c[i][1] + u * (c[i + 1][1] - c[i][1]))),
                static_cast<int>(std::lround(c[i][2] + u * (c[i + 1][2] - c[i][2]))));
  return buf;
}

}  // namespace detail

struct Series {
  std::string name;
  std::vector<double> x, y;
};

/// Line plot; an empty series list yields empty axes.
inline std::string line_plot(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                             const std::string& ylabel) {
  Frame f;
  double xl = std::numeric_limits<double>::infinity(), xh = -xl, yl = xl, yh = -xl;
  for (const auto& s : series) {
    detail::range(s.x, xl, xh);
    detail::range(s.y, yl, yh);
  }
  detail::pad(xl, xh);
  detail::pad(yl, yh);
  f.x0 = xl;
  f.x1 = xh;
  f.y0 = yl;
  f.y1 = yh;
  std::ostringstream os;
  os << detail::header(f);
  detail::axes(os, f, title, xlabel, ylabel);
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    os << "<polyline fill=\"none\" stroke-width=\"1.2\" stroke=\"" << colors[k % 6] << "\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << (first ? "" : " ") << num(f.px(s.x[i])) << "," << num(f.py(s.y[i]));
      first = false;
    }
    os << "\"/>\n";
    os << "<text x=\"" << num(f.width - f.right - 4) << "\" y=\"" << num(f.top + 14 + 14 * static_cast<double>(k))
       << "\" font-size=\"11\" text-anchor=\"end\" fill=\"" << colors[k % 6] << "\">" << escape(s.name)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Heatmap on a rectangular grid: value(i, j) at (x[i], y[j]), stored row-major in i.
/// Non-finite cells are drawn with their category colour (or light grey).
struct Heatmap {
  std::vector<double> x, y;
  std::vector<double> value;
  std::vector<std::string> category;  // optional, same layout as value
  std::string colorbar_label;
};

inline std::string heatmap(const Heatmap& h, const std::string& title, const std::string& xlabel,
                           const std::string& ylabel) {
  Frame f;
  f.right = 90;
  double xl = std::numeric_limits<double>::infinity(), xh = -xl, yl = xl, yh = -xl, vl = xl, vh = -xl;
  detail::range(h.x, xl, xh);
  detail::range(h.y, yl, yh);
  detail::range(h.value, vl, vh);
  detail::pad(xl, xh);
  detail::pad(yl, yh);
  detail::pad(vl, vh);
  const double dx = h.x.size() > 1 ? (xh - xl) / static_cast<double>(h.x.size() - 1) : 1.0;
  const double dy = h.y.size() > 1 ? (yh - yl) / static_cast<double>(h.y.size() - 1) : 1.0;
  f.x0 = xl - dx / 2;
  f.x1 = xh + dx / 2;
  f.y0 = yl - dy / 2;
  f.y1 = yh + dy / 2;
  std::ostringstream os;
  os << detail::header(f);
  detail::axes(os, f, title, xlabel, ylabel);
  auto cat_color = [](const std::string& c) -> std::string {
    if (c == "ONE_SFP") return "#e8e8e8";
    if (c == "MULTI_FP") return "#9ecae1";
    if (c == "NO_SFP_SUBSET") return "#fdae6b";
    return "#d0d0d0";
  };
  const std::size_t ny = h.y.size();
  for (std::size_t i = 0; i < h.x.size(); ++i)
    for (std::size_t j = 0; j < ny; ++j) {
      const std::size_t idx = i * ny + j;
      if (idx >= h.value.size()) continue;
      const double v = h.value[idx];
      const std::string fill = std::isfinite(v) ? detail::ramp((v - vl) / (vh - vl))
                               : idx < h.category.size() ? cat_color(h.category[idx])
                                                         : std::string("#d0d0d0");
      const double x0 = f.px(h.x[i] - dx / 2), x1 = f.px(h.x[i] + dx / 2);
      const double y0 = f.py(h.y[j] + dy / 2), y1 = f.py(h.y[j] - dy / 2);
      os << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(x1 - x0) << "\" height=\""
         << num(y1 - y0) << "\" fill=\"" << fill << "\"/>\n";
    }
  // colour bar
  const double bx = f.width - f.right + 16, top = f.top, bottom = f.height - f.bottom;
  for (int k = 0; k < 32; ++k) {
    const double t0 = k / 32.0;
    os << "<rect x=\"" << num(bx) << "\" y=\"" << num(bottom - (t0 + 1.0 / 32.0) * (bottom - top)) << "\" width=\"14\" height=\""
       << num((bottom - top) / 32.0) << "\" fill=\"" << detail::ramp(t0 + 0.5 / 32.0) << "\"/>\n";
  }
  char lo[32], hi[32];
  std::snprintf(lo, sizeof lo, "%.4g", vl);
  std::snprintf(hi, sizeof hi, "%.4g", vh);
  os << "<text x=\"" << num(bx + 18) << "\" y=\"" << num(bottom) << "\" font-size=\"10\">" << lo << "</text>\n";
  os << "<text x=\"" << num(bx + 18) << "\" y=\"" << num(top + 8) << "\" font-size=\"10\">" << hi << "</text>\n";
  os << "<text x=\"" << num(bx + 7) << "\" y=\"" << num(top - 6) << "\" font-size=\"10\" text-anchor=\"middle\">"
     << escape(h.colorbar_label) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path);
  out << content;
}

}  // namespace kerrcomb::io::svg
