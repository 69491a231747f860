#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fidlab/color_stats.hpp"
#include "fidlab/image.hpp"

namespace fidlab::palette {

inline constexpr int kNumPalettes = 8;

struct Anchor {
  double hue;  // degrees
  double sat;
  double val;
};

// Hue-concentrated palettes; each class leans on a narrow chromatic band so
// that class-conditional structure is strongly colored.
inline const std::array<std::array<Anchor, 3>, kNumPalettes>& anchors() {
  static const std::array<std::array<Anchor, 3>, kNumPalettes> table = {{
      {{{0, 0.95, 0.85}, {20, 0.9, 0.8}, {40, 0.85, 0.9}}},     // warm reds
      {{{200, 0.9, 0.8}, {220, 0.95, 0.7}, {240, 0.85, 0.75}}}, // blues
      {{{95, 0.85, 0.75}, {120, 0.9, 0.7}, {145, 0.8, 0.8}}},   // greens
      {{{275, 0.85, 0.8}, {295, 0.9, 0.75}, {315, 0.85, 0.85}}},// purples
      {{{45, 0.9, 0.9}, {58, 0.95, 0.85}, {72, 0.85, 0.8}}},    // yellows
      {{{160, 0.85, 0.8}, {178, 0.9, 0.75}, {195, 0.85, 0.85}}},// teals
      {{{330, 0.9, 0.85}, {345, 0.85, 0.8}, {358, 0.9, 0.75}}}, // pinks
      {{{25, 0.9, 0.85}, {205, 0.9, 0.75}, {115, 0.85, 0.8}}},  // mixed
  }};
  return table;
}

inline std::array<double, 3> anchor_rgb(const Anchor& a) {
  double r, g, b;
  color::hsv_to_rgb(a.hue, a.sat, a.val, r, g, b);
  return {r, g, b};
}

inline std::vector<std::array<double, 3>> palette_colors(int palette_id) {
  if (palette_id < 0 || palette_id >= kNumPalettes)
    throw std::invalid_argument("palette_colors: id out of range");
  std::vector<std::array<double, 3>> out;
  for (const Anchor& a : anchors()[std::size_t(palette_id)]) out.push_back(anchor_rgb(a));
  return out;
}

// Condition-fidelity proxy: mean distance from each pixel to the nearest
// palette anchor color. Lower means closer adherence to the palette.
inline double palette_distance(const RgbImage& img, int palette_id) {
  const auto colors = palette_colors(palette_id);
  double total = 0.0;
  for (std::size_t p = 0; p < img.pixels(); ++p) {
    double best = std::numeric_limits<double>::max();
    for (const auto& c : colors) {
      const double dr = img.data[p * 3] - c[0];
      const double dg = img.data[p * 3 + 1] - c[1];
      const double db = img.data[p * 3 + 2] - c[2];
      best = std::min(best, std::sqrt(dr * dr + dg * dg + db * db));
    }
    total += best;
  }
  return total / double(img.pixels());
}

inline const std::vector<std::string>& default_categories() {
  static const std::vector<std::string> cats = {
      "Human",       "Animals",      "Plants",       "Food",
      "Vehicles",    "Sports",       "Architecture", "Natural Scene",
      "Street Scene", "Indoor Scene", "Night Scene",  "Others"};
  return cats;
}

inline int palette_for_category(std::size_t category_index) {
  return int(category_index % kNumPalettes);
}

}  // namespace fidlab::palette
