#pragma once

// 8-bit grayscale images and binary portable graymap (P5) I/O.
// Pixel value 255 is ink; tensors see value / 255, so ink is high.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kzr/tensor.hpp"

namespace kzr {

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

template <typename T>
Tensor<T> image_tensor(const GrayImage& img) {
  std::vector<T> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.pixels[i]) / T(255);
  return Tensor<T>(Shape{img.height, img.width, 1}, std::move(v));
}

/// Pads bottom and right edges with `background` up to multiples of `factor`.
inline GrayImage pad_to_multiple(const GrayImage& img, std::size_t factor,
                                 std::uint8_t background = 0) {
  const std::size_t h = (img.height + factor - 1) / factor * factor;
  const std::size_t w = (img.width + factor - 1) / factor * factor;
  if (h == img.height && w == img.width) return img;
  GrayImage out(h, w, background);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) out.at(y, x) = img.at(y, x);
  return out;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image " + path);
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("failed writing image " + path);
}

namespace detail {

inline std::string pnm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace detail

/// Reads a binary 8-bit graymap. Maxval other than 255 is rescaled.
inline GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read image " + path);
  if (detail::pnm_token(in) != "P5") throw std::runtime_error(path + ": not a binary PGM (P5)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(detail::pnm_token(in));
    h = std::stoul(detail::pnm_token(in));
    maxval = std::stoul(detail::pnm_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error(path + ": malformed PGM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw std::runtime_error(path + ": unsupported PGM dimensions or maxval");
  }
  GrayImage img(h, w);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(w * h));
  if (static_cast<std::size_t>(in.gcount()) != w * h) {
    throw std::runtime_error(path + ": truncated PGM payload");
  }
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>((p * 255 + maxval / 2) / maxval);
  }
  return img;
}

}  // namespace kzr
