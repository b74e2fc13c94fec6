// Copyright 2026 The compt2i Authors.
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

// Image composition for figures: grids, colorized maps and bar charts.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "compt2i/error.hpp"
#include "compt2i/image.hpp"

namespace compt2i {

inline void Blit(Image& dst, const Image& src, int top, int left) {
  for (int r = 0; r < src.height; ++r)
    for (int c = 0; c < src.width; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const int rr = top + r, cc = left + c;
        if (rr >= 0 && rr < dst.height && cc >= 0 && cc < dst.width)
          dst.at(rr, cc, ch) = src.at(r, c, ch);
      }
}

// cells[row][col]; all cells share one shape.
inline Image MakeGrid(const std::vector<std::vector<Image>>& cells, int pad = 2,
                      double background = 1.0) {
  if (cells.empty() || cells[0].empty()) throw InvalidArgument("empty grid");
  const int h = cells[0][0].height, w = cells[0][0].width;
  std::size_t cols = 0;
  for (const auto& row : cells) {
    cols = std::max(cols, row.size());
    for (const auto& img : row)
      if (img.height != h || img.width != w) throw InvalidArgument("grid cells differ in shape");
  }
  const int rows = static_cast<int>(cells.size());
  Image out(rows * h + (rows + 1) * pad, static_cast<int>(cols) * w + (static_cast<int>(cols) + 1) * pad,
            background);
  for (int r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cells[r].size(); ++c)
      Blit(out, cells[r][c], pad + r * (h + pad), pad + static_cast<int>(c) * (w + pad));
  return out;
}

// Piecewise-linear dark-blue -> teal -> yellow ramp for values in [0, 1].
inline std::array<double, 3> ColorRamp(double v) {
  static constexpr double kStops[3][3] = {{0.07, 0.04, 0.33}, {0.13, 0.57, 0.55}, {0.99, 0.91, 0.14}};
  v = std::clamp(v, 0.0, 1.0) * 2.0;
  const int i = std::min(static_cast<int>(v), 1);
  const double t = v - i;
  std::array<double, 3> out{};
  for (int ch = 0; ch < 3; ++ch) out[ch] = kStops[i][ch] * (1.0 - t) + kStops[i + 1][ch] * t;
  return out;
}

// Map in [0, 1] rendered with the ramp plus a vertical colorbar on the right.
inline Image Colorize(const ScalarMap& m, int bar_width = 6) {
  Image out(m.height, m.width + 2 + bar_width, 1.0);
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      const auto col = ColorRamp(m.at(r, c));
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = col[ch];
    }
    const double v = m.height > 1 ? 1.0 - static_cast<double>(r) / (m.height - 1) : 1.0;
    const auto col = ColorRamp(v);
    for (int c = m.width + 2; c < out.width; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = col[ch];
  }
  return out;
}

// Grouped bars: values[group][series], each in [0, max_value].
inline Image BarChart(const std::vector<std::vector<double>>& values, double max_value,
                      int height = 160, int bar_width = 14) {
  if (values.empty()) throw InvalidArgument("bar chart needs data");
  static constexpr double kPalette[6][3] = {{0.20, 0.40, 0.75}, {0.85, 0.45, 0.15},
                                            {0.25, 0.65, 0.30}, {0.75, 0.20, 0.25},
                                            {0.50, 0.35, 0.70}, {0.45, 0.45, 0.45}};
  std::size_t series = 0;
  for (const auto& g : values) series = std::max(series, g.size());
  const int gap = bar_width;
  const int group_w = static_cast<int>(series) * bar_width + gap;
  Image out(height, static_cast<int>(values.size()) * group_w + gap, 1.0);
  const double scale = max_value > 0.0 ? max_value : 1.0;
  for (std::size_t gi = 0; gi < values.size(); ++gi)
    for (std::size_t s = 0; s < values[gi].size(); ++s) {
      const double frac = std::clamp(values[gi][s] / scale, 0.0, 1.0);
      const int bar_h = static_cast<int>(std::lround(frac * (height - 4)));
      const int left = gap + static_cast<int>(gi) * group_w + static_cast<int>(s) * bar_width;
      for (int r = height - 1 - bar_h; r < height - 1; ++r)
        for (int c = left; c < left + bar_width - 2; ++c)
          for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = kPalette[s % 6][ch];
    }
  for (int c = 0; c < out.width; ++c)
    for (int ch = 0; ch < 3; ++ch) out.at(height - 1, c, ch) = 0.0;
  return out;
}

}  // namespace compt2i
