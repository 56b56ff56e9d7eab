#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relpose/tensor.hpp"

namespace relpose {

// Planar float image in [0, 1], (channels, height, width) row-major.
// channels is 1 (grayscale) or 3 (RGB).
struct Image {
  int channels = 1;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, 0.f) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  ad::Tensor<float> to_tensor() const {
    return ad::Tensor<float>({channels, height, width},
                             std::vector<float>(data.begin(), data.end()));
  }
  static Image from_tensor(const ad::Tensor<float>& t);
};

// Minimal PNG support: 8-bit grayscale and RGB, non-interlaced. Values are
// quantized to bytes on save and mapped back to [0,1] on load.
Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& img);

// In-memory variants (used by the tests against fixed byte fixtures).
Image decode_png(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_png(const Image& img);

// Dispatch by extension: .png or .rptn.
Image load_image(const std::string& path);
void save_image(const std::string& path, const Image& img);

}  // namespace relpose
