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

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "compt2i/error.hpp"

namespace compt2i {

// H x W x 3 image, row-major with interleaved channels, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  double& at(int r, int c, int ch) {
    return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
  }
  double at(int r, int c, int ch) const {
    return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
  }
  std::size_t pixels() const {
    return static_cast<std::size_t>(height) * width;
  }
  bool SameShape(const Image& o) const {
    return height == o.height && width == o.width;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

// Binary H x W region.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int r, int c) {
    return data[static_cast<std::size_t>(r) * width + c];
  }
  std::uint8_t at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * width + c];
  }
  std::size_t Count() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }
  friend bool operator==(const Mask&, const Mask&) = default;
};

// Single-channel H x W map of reals.
struct ScalarMap {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  ScalarMap() = default;
  ScalarMap(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}
  double& at(int r, int c) {
    return data[static_cast<std::size_t>(r) * width + c];
  }
  double at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * width + c];
  }
};

}  // namespace compt2i
