#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "g2s/tensor.hpp"

namespace g2s {

/// H x W x 3 RGB image with values nominally in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), data(w * h * 3, fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t c) {
    return data[(y * width + x) * 3 + c];
  }
  double at(std::size_t x, std::size_t y, std::size_t c) const {
    return data[(y * width + x) * 3 + c];
  }

  Tensor to_tensor(bool requires_grad = false) const;
  static Image from_tensor(const Tensor& t);
};

/// Per-pixel depth in meters; 0 marks an invalid pixel.
struct DepthMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> meters;
};

void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);
/// Dispatches on the extension (.ppm or .png).
Image read_image(const std::string& path);

/// 16-bit grayscale PNG in millimeters.
void write_depth_png(const std::string& path, const DepthMap& depth);
DepthMap read_depth_png(const std::string& path);
/// Headerless little-endian uint16 millimeters, extents from the caller.
DepthMap read_depth_raw(const std::string& path, std::size_t width,
                        std::size_t height);

}  // namespace g2s
