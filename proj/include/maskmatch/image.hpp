#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "maskmatch/errors.hpp"

namespace maskmatch {

/// Height x width x channels image with interleaved (HWC) float pixels in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {
    if (h <= 0 || w <= 0 || c <= 0) throw ShapeError("image dimensions must be positive");
  }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float& at(int y, int x, int c) { return pixels[index(y, x, c)]; }
  float at(int y, int x, int c) const { return pixels[index(y, x, c)]; }

  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  void clamp() {
    for (auto& p : pixels) p = std::clamp(p, 0.0f, 1.0f);
  }

  bool operator==(const Image&) const = default;
};

}  // namespace maskmatch
