#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>

#include "fidlab/image.hpp"

namespace fidlab::color {

inline constexpr double kRealSaturationReference = 0.33;
inline constexpr int kSaturationHistogramBins = 32;

struct Hsv {
  double h;  // degrees in [0, 360)
  double s;  // [0, 1]
  double v;  // [0, 1]
};

// Hexcone HSV; s = (max-min)/max with s = 0 at black.
inline Hsv rgb_to_hsv(double r, double g, double b) {
  if (!(r >= 0.0 && r <= 1.0 && g >= 0.0 && g <= 1.0 && b >= 0.0 && b <= 1.0))
    throw std::invalid_argument("rgb_to_hsv: inputs must be in [0,1]");
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double c = mx - mn;
  Hsv out{0.0, 0.0, mx};
  if (mx > 0.0) out.s = c / mx;
  if (c > 0.0) {
    double h;
    if (mx == r) h = std::fmod((g - b) / c, 6.0);
    else if (mx == g) h = (b - r) / c + 2.0;
    else h = (r - g) / c + 4.0;
    h *= 60.0;
    if (h < 0.0) h += 360.0;
    if (h >= 360.0) h -= 360.0;
    out.h = h;
  }
  return out;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double c = v * s;
  const double hp = std::fmod(h, 360.0) / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  if (hp < 1)      { r1 = c; g1 = x; }
  else if (hp < 2) { r1 = x; g1 = c; }
  else if (hp < 3) { g1 = c; b1 = x; }
  else if (hp < 4) { g1 = x; b1 = c; }
  else if (hp < 5) { r1 = x; b1 = c; }
  else             { r1 = c; b1 = x; }
  const double m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

inline double pixel_saturation(double r, double g, double b) { return rgb_to_hsv(r, g, b).s; }

inline double luminance(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;  // Rec. 601
}

struct ColorStats {
  double mean_saturation = 0.0;
  double rms_contrast = 0.0;  // population std of luminance
  std::array<std::uint64_t, kSaturationHistogramBins> saturation_histogram{};
};

inline ColorStats compute_stats(const RgbImage& img) {
  ColorStats st;
  double sat_sum = 0.0, lum_sum = 0.0, lum_sq = 0.0;
  const std::size_t n = img.pixels();
  for (std::size_t p = 0; p < n; ++p) {
    const double r = img.data[p * 3], g = img.data[p * 3 + 1], b = img.data[p * 3 + 2];
    const double s = pixel_saturation(r, g, b);
    sat_sum += s;
    const double l = luminance(r, g, b);
    lum_sum += l;
    lum_sq += l * l;
    int bin = std::min(kSaturationHistogramBins - 1, int(s * kSaturationHistogramBins));
    st.saturation_histogram[bin]++;
  }
  st.mean_saturation = sat_sum / double(n);
  const double mean_l = lum_sum / double(n);
  st.rms_contrast = std::sqrt(std::max(0.0, lum_sq / double(n) - mean_l * mean_l));
  return st;
}

// Mean saturation over all pixels of all images, pixel-weighted.
inline double mean_saturation(std::span<const RgbImage> images) {
  if (images.empty()) throw std::invalid_argument("mean_saturation: empty image set");
  double sum = 0.0;
  std::size_t n = 0;
  for (const RgbImage& img : images) {
    for (std::size_t p = 0; p < img.pixels(); ++p)
      sum += pixel_saturation(img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]);
    n += img.pixels();
  }
  return sum / double(n);
}

inline double delta_sat(std::span<const RgbImage> images, double reference = kRealSaturationReference) {
  return std::abs(mean_saturation(images) - reference);
}

inline double delta_sat(const RgbImage& image, double reference = kRealSaturationReference) {
  return std::abs(compute_stats(image).mean_saturation - reference);
}

}  // namespace fidlab::color
