#pragma once

// Attention heatmaps: one frame per decoding step, the step's attention map
// upsampled to the input size and drawn in red over the page.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kzr/image.hpp"

namespace kzr {

struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triplets

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * 3, 0) {}

  std::uint8_t* at(std::size_t y, std::size_t x) { return &pixels[(y * width + x) * 3]; }
  const std::uint8_t* at(std::size_t y, std::size_t x) const { return &pixels[(y * width + x) * 3]; }
  bool operator==(const RgbImage&) const = default;
};

struct HeatmapFrame {
  GrayImage base;
  std::vector<double> alpha;  // base.height x base.width, min-max normalized to [0, 1]
  std::size_t step = 0;       // 1-based
  std::string token;
};

/// Nearest-neighbour upsampling of an h x w map by `factor`, cropped or
/// edge-extended to out_h x out_w, then min-max normalized. A constant map
/// normalizes to all zeros.
inline std::vector<double> upsample_alpha(const std::vector<double>& alpha, std::size_t h,
                                          std::size_t w, std::size_t factor, std::size_t out_h,
                                          std::size_t out_w) {
  if (alpha.size() != h * w || h == 0 || w == 0 || factor == 0) {
    throw std::invalid_argument("upsample_alpha: map is " + std::to_string(alpha.size()) +
                                " values, expected " + std::to_string(h) + "x" + std::to_string(w));
  }
  const auto [lo_it, hi_it] = std::minmax_element(alpha.begin(), alpha.end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  std::vector<double> out(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(y / factor, h - 1);
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(x / factor, w - 1);
      out[y * out_w + x] = range > 0.0 ? (alpha[sy * w + sx] - lo) / range : 0.0;
    }
  }
  return out;
}

/// Page drawn dark-on-white; red channel carries attention.
inline RgbImage render_frame(const HeatmapFrame& f) {
  if (f.alpha.size() != f.base.pixels.size()) {
    throw std::invalid_argument("render_frame: alpha map does not match the base image");
  }
  RgbImage out(f.base.height, f.base.width);
  for (std::size_t i = 0; i < f.alpha.size(); ++i) {
    const double page = 255.0 - f.base.pixels[i];
    const double a = std::clamp(f.alpha[i], 0.0, 1.0);
    std::uint8_t* px = &out.pixels[i * 3];
    px[0] = static_cast<std::uint8_t>(page * (1.0 - a) + 255.0 * a + 0.5);
    px[1] = static_cast<std::uint8_t>(page * (1.0 - a) + 0.5);
    px[2] = px[1];
  }
  return out;
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("failed writing image " + path);
}

}  // namespace kzr
