#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fidlab/tensor.hpp"

namespace fidlab {

// Interleaved H x W x 3 image with channel values in [0, 1].
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // row-major, r g b per pixel

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), data(std::size_t(h) * w * 3, 0.0) {
    if (h < 1 || w < 1) throw std::invalid_argument("RgbImage: dims must be >= 1");
  }

  std::size_t pixels() const { return std::size_t(height) * width; }

  double& at(int y, int x, int c) { return data[(std::size_t(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data[(std::size_t(y) * width + x) * 3 + c]; }

  bool in_range() const {
    for (double v : data)
      if (!(v >= 0.0 && v <= 1.0)) return false;
    return true;
  }

  void clamp() {
    for (double& v : data) v = std::clamp(v, 0.0, 1.0);
  }

  num::Tensor to_tensor() const {
    return num::Tensor({std::size_t(height), std::size_t(width), 3}, data);
  }

  static RgbImage from_tensor_clamped(const num::Tensor& t) {
    if (t.ndim() != 3 || t.shape()[2] != 3)
      throw std::invalid_argument("RgbImage: tensor must be H x W x 3");
    RgbImage img(int(t.shape()[0]), int(t.shape()[1]));
    img.data = t.data();
    img.clamp();
    return img;
  }

  std::vector<std::uint8_t> to_bytes() const {
    std::vector<std::uint8_t> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out[i] = std::uint8_t(std::lround(std::clamp(data[i], 0.0, 1.0) * 255.0));
    return out;
  }

  static RgbImage from_bytes(int h, int w, const std::vector<std::uint8_t>& bytes) {
    RgbImage img(h, w);
    if (bytes.size() != img.data.size()) throw std::invalid_argument("RgbImage: byte size mismatch");
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
    return img;
  }
};

}  // namespace fidlab
