#pragma once

#include <algorithm>
#include <cstdio>
#include <string>

#include "flexcast/envelope_types.hpp"

// Minimal self-contained SVG heatmap for flexibility envelopes: power level
// on the y axis, start time on the x axis, color mapped to sustainable
// duration. No external assets or scripts.
namespace flexcast::svg {

namespace detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

// Six-stop viridis approximation, t in [0, 1].
inline std::string color(double t) {
  static constexpr double stops[6][3] = {
      {68, 1, 84},   {59, 82, 139},   {33, 145, 140},
      {94, 201, 98}, {170, 220, 50},  {253, 231, 37}};
  t = std::clamp(t, 0.0, 1.0) * 5.0;
  int k = std::min(4, static_cast<int>(t));
  double u = t - k;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                static_cast<int>(stops[k][0] + u * (stops[k + 1][0] - stops[k][0])),
                static_cast<int>(stops[k][1] + u * (stops[k + 1][1] - stops[k][1])),
                static_cast<int>(stops[k][2] + u * (stops[k + 1][2] - stops[k][2])));
  return buf;
}

inline std::string text(double x, double y, const std::string& s, int size,
                        const char* anchor = "middle") {
  return "<text x=\"" + fmt("%.1f", x) + "\" y=\"" + fmt("%.1f", y) +
         "\" font-family=\"sans-serif\" font-size=\"" + std::to_string(size) +
         "\" text-anchor=\"" + anchor + "\">" + s + "</text>\n";
}

}  // namespace detail

// Renders the envelope with rows ordered by descending power (positive
// requests on top, matching the usual flexibility-envelope orientation).
inline std::string heatmap(const envelope::FlexibilityEnvelope& env,
                           const std::string& title, double hours_per_step) {
  const double cell_w = 26.0, cell_h = 14.0;
  const double left = 70.0, top = 50.0, right = 90.0, bottom = 50.0;
  std::size_t n_p = env.power_grid.size(), n_t = env.time_grid.size();
  double grid_w = cell_w * static_cast<double>(n_t);
  double grid_h = cell_h * static_cast<double>(n_p);
  double width = left + grid_w + right, height = top + grid_h + bottom;

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                  detail::fmt("%.0f", width) + "\" height=\"" +
                  detail::fmt("%.0f", height) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += detail::text(left + grid_w / 2, 24, title, 14);

  // Rows sorted by power descending; power_grid itself is ascending.
  for (std::size_t row = 0; row < n_p; ++row) {
    std::size_t i = n_p - 1 - row;
    for (std::size_t j = 0; j < n_t; ++j) {
      double t = env.cap_steps > 0
                     ? static_cast<double>(env.at(i, j)) / env.cap_steps
                     : 0.0;
      s += "<rect x=\"" + detail::fmt("%.1f", left + cell_w * static_cast<double>(j)) +
           "\" y=\"" + detail::fmt("%.1f", top + cell_h * static_cast<double>(row)) +
           "\" width=\"" + detail::fmt("%.1f", cell_w) + "\" height=\"" +
           detail::fmt("%.1f", cell_h) + "\" fill=\"" + detail::color(t) + "\"/>\n";
    }
  }

  // Y labels: a handful of power levels.
  std::size_t y_stride = std::max<std::size_t>(1, n_p / 6);
  for (std::size_t row = 0; row < n_p; row += y_stride) {
    std::size_t i = n_p - 1 - row;
    s += detail::text(left - 8, top + cell_h * (static_cast<double>(row) + 0.75),
                      detail::fmt("%.2f", env.power_grid[i]), 10, "end");
  }
  s += detail::text(16, top + grid_h / 2, "power fraction", 11);

  // X labels: start hours.
  std::size_t x_stride = std::max<std::size_t>(1, n_t / 8);
  for (std::size_t j = 0; j < n_t; j += x_stride) {
    double hour = static_cast<double>(env.time_grid[j]) * hours_per_step;
    s += detail::text(left + cell_w * (static_cast<double>(j) + 0.5),
                      top + grid_h + 16, detail::fmt("%.0fh", hour), 10);
  }
  s += detail::text(left + grid_w / 2, top + grid_h + 34, "start time", 11);

  // Color bar.
  double bar_x = left + grid_w + 20, bar_w = 16;
  int bands = 24;
  for (int b = 0; b < bands; ++b) {
    double t0 = static_cast<double>(b) / bands;
    s += "<rect x=\"" + detail::fmt("%.1f", bar_x) + "\" y=\"" +
         detail::fmt("%.1f", top + grid_h * (1.0 - t0 - 1.0 / bands)) +
         "\" width=\"" + detail::fmt("%.1f", bar_w) + "\" height=\"" +
         detail::fmt("%.2f", grid_h / bands + 0.5) + "\" fill=\"" +
         detail::color(t0 + 0.5 / bands) + "\"/>\n";
  }
  s += detail::text(bar_x + bar_w + 6, top + 10, std::to_string(env.cap_steps), 10,
                    "start");
  s += detail::text(bar_x + bar_w + 6, top + grid_h, "0", 10, "start");
  s += detail::text(bar_x + bar_w / 2, top - 8, "steps", 10);

  s += "</svg>\n";
  return s;
}

}  // namespace flexcast::svg
