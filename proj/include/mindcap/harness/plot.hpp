#pragma once

// Minimal raster charts written as PNG: line charts for sweeps and grouped
// bar charts for metric tables. Labels use a built-in 5x7 glyph set
// (lowercase letters, digits and a little punctuation).

#include "mindcap/core/png.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

namespace mindcap::harness {

using Rgb = std::array<double, 3>;

namespace detail {

inline const std::array<std::uint8_t, 7>* glyph(char ch) {
  static const std::map<char, std::array<std::uint8_t, 7>> g{
      {'0', {14, 17, 19, 21, 25, 17, 14}}, {'1', {4, 12, 4, 4, 4, 4, 14}},     {'2', {14, 17, 1, 2, 4, 8, 31}},
      {'3', {30, 1, 1, 14, 1, 1, 30}},     {'4', {2, 6, 10, 18, 31, 2, 2}},    {'5', {31, 16, 30, 1, 1, 17, 14}},
      {'6', {6, 8, 16, 30, 17, 17, 14}},   {'7', {31, 1, 2, 4, 8, 8, 8}},      {'8', {14, 17, 17, 14, 17, 17, 14}},
      {'9', {14, 17, 17, 15, 1, 2, 12}},   {'a', {14, 17, 17, 31, 17, 17, 17}}, {'b', {30, 17, 17, 30, 17, 17, 30}},
      {'c', {14, 17, 16, 16, 16, 17, 14}}, {'d', {30, 17, 17, 17, 17, 17, 30}}, {'e', {31, 16, 16, 30, 16, 16, 31}},
      {'f', {31, 16, 16, 30, 16, 16, 16}}, {'g', {14, 17, 16, 23, 17, 17, 15}}, {'h', {17, 17, 17, 31, 17, 17, 17}},
      {'i', {14, 4, 4, 4, 4, 4, 14}},      {'j', {7, 2, 2, 2, 2, 18, 12}},     {'k', {17, 18, 20, 24, 20, 18, 17}},
      {'l', {16, 16, 16, 16, 16, 16, 31}}, {'m', {17, 27, 21, 21, 17, 17, 17}}, {'n', {17, 17, 25, 21, 19, 17, 17}},
      {'o', {14, 17, 17, 17, 17, 17, 14}}, {'p', {30, 17, 17, 30, 16, 16, 16}}, {'q', {14, 17, 17, 17, 21, 18, 13}},
      {'r', {30, 17, 17, 30, 20, 18, 17}}, {'s', {15, 16, 16, 14, 1, 1, 30}},   {'t', {31, 4, 4, 4, 4, 4, 4}},
      {'u', {17, 17, 17, 17, 17, 17, 14}}, {'v', {17, 17, 17, 17, 17, 10, 4}},  {'w', {17, 17, 17, 21, 21, 21, 10}},
      {'x', {17, 17, 10, 4, 10, 17, 17}},  {'y', {17, 17, 10, 4, 4, 4, 4}},     {'z', {31, 1, 2, 4, 8, 16, 31}},
      {'.', {0, 0, 0, 0, 0, 12, 12}},      {'-', {0, 0, 0, 31, 0, 0, 0}},      {'_', {0, 0, 0, 0, 0, 0, 31}},
      {':', {0, 12, 12, 0, 12, 12, 0}},    {'/', {1, 2, 2, 4, 8, 8, 16}},      {'=', {0, 0, 31, 0, 31, 0, 0}},
      {'+', {0, 4, 4, 31, 4, 4, 0}},       {'(', {2, 4, 8, 8, 8, 4, 2}},       {')', {8, 4, 2, 2, 2, 4, 8}},
      {' ', {0, 0, 0, 0, 0, 0, 0}}};
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  auto it = g.find(c);
  return it == g.end() ? nullptr : &it->second;
}

inline std::string format_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, std::abs(v) >= 100 ? "%.0f" : "%.2f", v);
  return buf;
}

}  // namespace detail

inline const std::vector<Rgb>& palette() {
  static const std::vector<Rgb> p{{0.12, 0.47, 0.71}, {1.00, 0.50, 0.05}, {0.17, 0.63, 0.17}, {0.84, 0.15, 0.16},
                                  {0.58, 0.40, 0.74}, {0.55, 0.34, 0.29}, {0.89, 0.47, 0.76}, {0.50, 0.50, 0.50}};
  return p;
}

class Canvas {
 public:
  Canvas(int width, int height) : w_(width), h_(height), px_(static_cast<size_t>(width) * height * 3, 1.0) {}

  int width() const { return w_; }
  int height() const { return h_; }

  void set(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    const size_t i = (static_cast<size_t>(y) * w_ + x) * 3;
    px_[i] = c[0];
    px_[i + 1] = c[1];
    px_[i + 2] = c[2];
  }

  void fill_rect(int x0, int y0, int x1, int y1, const Rgb& c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
  }

  // Bresenham segment, optionally thickened by one pixel on each side.
  void line(int x0, int y0, int x1, int y1, const Rgb& c, bool thick = false) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (thick) {
        set(x0 + 1, y0, c);
        set(x0, y0 + 1, c);
      }
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  // Text with its top-left corner at (x, y); unknown characters are skipped.
  void text(int x, int y, const std::string& s, const Rgb& c = {0, 0, 0}) {
    for (char ch : s) {
      if (const auto* g = detail::glyph(ch))
        for (int r = 0; r < 7; ++r)
          for (int b = 0; b < 5; ++b)
            if ((*g)[static_cast<size_t>(r)] & (1 << (4 - b))) set(x + b, y + r, c);
      x += 6;
    }
  }

  static int text_width(const std::string& s) { return static_cast<int>(s.size()) * 6; }

  void save(const std::filesystem::path& path) const { write_png_rgb(path, px_, w_, h_); }

 private:
  int w_, h_;
  std::vector<double> px_;
};

struct Series {
  std::string name;
  std::vector<double> x, y;
};

namespace detail {

struct Frame {
  int left = 60, right = 160, top = 30, bottom = 40;
  double x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  int w = 0, h = 0;

  int px(double x) const { return left + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (w - left - right))); }
  int py(double y) const { return h - bottom - static_cast<int>(std::lround((y - y_lo) / (y_hi - y_lo) * (h - top - bottom))); }
};

inline void pad_range(double& lo, double& hi) {
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

inline void draw_axes(Canvas& c, const Frame& f, const std::string& title, const std::string& xlabel) {
  const Rgb black{0, 0, 0}, grid{0.88, 0.88, 0.88};
  for (int i = 0; i <= 4; ++i) {
    const double v = f.y_lo + (f.y_hi - f.y_lo) * i / 4.0;
    const int y = f.py(v);
    c.line(f.left, y, c.width() - f.right, y, grid);
    const std::string t = format_tick(v);
    c.text(f.left - 6 - Canvas::text_width(t), y - 3, t);
  }
  c.line(f.left, f.top, f.left, c.height() - f.bottom, black);
  c.line(f.left, c.height() - f.bottom, c.width() - f.right, c.height() - f.bottom, black);
  c.text(f.left, 10, title);
  c.text((f.left + c.width() - f.right - Canvas::text_width(xlabel)) / 2, c.height() - 14, xlabel);
}

inline void legend(Canvas& c, const Frame& f, const std::vector<std::string>& names) {
  for (size_t i = 0; i < names.size(); ++i) {
    const int y = f.top + 4 + static_cast<int>(i) * 12;
    const int x = c.width() - f.right + 12;
    c.fill_rect(x, y, x + 8, y + 6, palette()[i % palette().size()]);
    c.text(x + 12, y, names[i]);
  }
}

}  // namespace detail

inline void line_chart(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                       const std::vector<Series>& series, int width = 640, int height = 400) {
  Canvas c(width, height);
  detail::Frame f;
  f.w = width;
  f.h = height;
  f.x_lo = f.y_lo = 1e300;
  f.x_hi = f.y_hi = -1e300;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("line_chart: x and y lengths differ");
    for (double v : s.x) f.x_lo = std::min(f.x_lo, v), f.x_hi = std::max(f.x_hi, v);
    for (double v : s.y) f.y_lo = std::min(f.y_lo, v), f.y_hi = std::max(f.y_hi, v);
  }
  if (f.x_lo > f.x_hi) f.x_lo = 0, f.x_hi = 1, f.y_lo = 0, f.y_hi = 1;
  if (f.x_hi - f.x_lo < 1e-12) f.x_hi = f.x_lo + 1;
  detail::pad_range(f.y_lo, f.y_hi);
  detail::draw_axes(c, f, title, xlabel);
  for (int i = 0; i <= 4; ++i) {
    const double v = f.x_lo + (f.x_hi - f.x_lo) * i / 4.0;
    const std::string t = detail::format_tick(v);
    c.text(f.px(v) - Canvas::text_width(t) / 2, height - f.bottom + 6, t);
  }
  std::vector<std::string> names;
  for (size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const Rgb col = palette()[k % palette().size()];
    for (size_t i = 0; i + 1 < s.x.size(); ++i)
      c.line(f.px(s.x[i]), f.py(s.y[i]), f.px(s.x[i + 1]), f.py(s.y[i + 1]), col, true);
    for (size_t i = 0; i < s.x.size(); ++i) c.fill_rect(f.px(s.x[i]) - 2, f.py(s.y[i]) - 2, f.px(s.x[i]) + 2, f.py(s.y[i]) + 2, col);
    names.push_back(s.name);
  }
  detail::legend(c, f, names);
  c.save(path);
}

// values[g][k] is the bar of group g (legend entry) at category k.
inline void bar_chart(const std::filesystem::path& path, const std::string& title,
                      const std::vector<std::string>& categories, const std::vector<std::string>& groups,
                      const std::vector<std::vector<double>>& values, int width = 720, int height = 400) {
  if (values.size() != groups.size()) throw std::invalid_argument("bar_chart: one value row per group");
  Canvas c(width, height);
  detail::Frame f;
  f.w = width;
  f.h = height;
  f.bottom = 60;
  f.x_lo = 0;
  f.x_hi = static_cast<double>(std::max<size_t>(1, categories.size()));
  f.y_lo = 0;
  f.y_hi = 1e-12;
  for (const auto& row : values) {
    if (row.size() != categories.size()) throw std::invalid_argument("bar_chart: one value per category");
    for (double v : row) f.y_lo = std::min(f.y_lo, v), f.y_hi = std::max(f.y_hi, v);
  }
  f.y_hi *= 1.05;
  detail::draw_axes(c, f, title, "");
  const double slot = 1.0 / static_cast<double>(groups.size() + 1);
  for (size_t k = 0; k < categories.size(); ++k) {
    for (size_t g = 0; g < groups.size(); ++g) {
      const double x0 = static_cast<double>(k) + slot * (static_cast<double>(g) + 0.5);
      c.fill_rect(f.px(x0), f.py(0.0), f.px(x0 + slot) - 1, f.py(values[g][k]), palette()[g % palette().size()]);
    }
    const std::string& name = categories[k];
    c.text(f.px(static_cast<double>(k) + 0.5) - Canvas::text_width(name) / 2, height - f.bottom + 6 + 10 * static_cast<int>(k % 2), name);
  }
  detail::legend(c, f, groups);
  c.save(path);
}

}  // namespace mindcap::harness
