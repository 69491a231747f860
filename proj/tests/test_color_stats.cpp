#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "fidlab/color_stats.hpp"
#include "fidlab/rng.hpp"

using namespace fidlab;
using namespace fidlab::color;

TEST_CASE("rgb_to_hsv hand cases", "[color_stats]") {
  Hsv red = rgb_to_hsv(1, 0, 0);
  CHECK(red.h == 0.0);
  CHECK(red.s == 1.0);
  CHECK(red.v == 1.0);

  Hsv gray = rgb_to_hsv(0.5, 0.5, 0.5);
  CHECK(gray.h == 0.0);
  CHECK(gray.s == 0.0);
  CHECK(gray.v == 0.5);

  Hsv black = rgb_to_hsv(0, 0, 0);
  CHECK(black.s == 0.0);

  Hsv c = rgb_to_hsv(0.2, 0.4, 0.6);
  CHECK(c.h == Catch::Approx(210.0).margin(1e-9));
  CHECK(c.s == Catch::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(c.v == Catch::Approx(0.6).epsilon(1e-12));

  CHECK_THROWS_AS(rgb_to_hsv(1.2, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(rgb_to_hsv(0, -0.1, 0), std::invalid_argument);
}

TEST_CASE("hsv round trip", "[color_stats]") {
  Rng rng(31);
  for (int i = 0; i < 500; ++i) {
    const double r = rng.uniform01(), g = rng.uniform01(), b = rng.uniform01();
    Hsv hsv = rgb_to_hsv(r, g, b);
    if (hsv.s <= 0.0 || hsv.v <= 0.0) continue;
    double r2, g2, b2;
    hsv_to_rgb(hsv.h, hsv.s, hsv.v, r2, g2, b2);
    REQUIRE(std::abs(r - r2) < 1e-9);
    REQUIRE(std::abs(g - g2) < 1e-9);
    REQUIRE(std::abs(b - b2) < 1e-9);
  }
}

TEST_CASE("compute_stats examples", "[color_stats]") {
  SECTION("uniform gray") {
    RgbImage img(4, 4);
    for (double& v : img.data) v = 0.5;
    ColorStats st = compute_stats(img);
    CHECK(st.mean_saturation == 0.0);
    CHECK(st.rms_contrast == 0.0);
    std::uint64_t total = 0;
    for (auto c : st.saturation_histogram) total += c;
    CHECK(total == img.pixels());
  }
  SECTION("half pure red, half pure blue") {
    RgbImage img(2, 2);
    img.at(0, 0, 0) = 1;
    img.at(0, 1, 0) = 1;
    img.at(1, 0, 2) = 1;
    img.at(1, 1, 2) = 1;
    CHECK(compute_stats(img).mean_saturation == 1.0);
  }
  SECTION("2x1 red + gray") {
    RgbImage img(1, 2);
    img.at(0, 0, 0) = 1.0;
    img.at(0, 1, 0) = img.at(0, 1, 1) = img.at(0, 1, 2) = 0.5;
    CHECK(compute_stats(img).mean_saturation == Catch::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("mean saturation is permutation invariant", "[color_stats]") {
  Rng rng(77);
  RgbImage img(8, 8);
  for (double& v : img.data) v = rng.uniform01();
  const double before = compute_stats(img).mean_saturation;

  // shuffle whole pixels
  std::vector<std::array<double, 3>> px(img.pixels());
  for (std::size_t p = 0; p < px.size(); ++p)
    px[p] = {img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]};
  rng.shuffle(px);
  for (std::size_t p = 0; p < px.size(); ++p)
    for (int c = 0; c < 3; ++c) img.data[p * 3 + c] = px[p][c];
  CHECK(compute_stats(img).mean_saturation == Catch::Approx(before).epsilon(1e-12));
}

TEST_CASE("delta_sat identities", "[color_stats]") {
  // image of 100 pixels: k fully saturated, rest gray -> mean saturation k/100
  auto image_with_sat = [](int k) {
    RgbImage img(10, 10);
    for (int p = 0; p < 100; ++p) {
      if (p < k) {
        img.data[p * 3] = 1.0;
      } else {
        img.data[p * 3] = img.data[p * 3 + 1] = img.data[p * 3 + 2] = 0.5;
      }
    }
    return img;
  };

  std::vector<RgbImage> at_ref{image_with_sat(33)};
  CHECK(delta_sat(at_ref) == Catch::Approx(0.0).margin(1e-12));

  std::vector<RgbImage> sd35{image_with_sat(48)};
  CHECK(delta_sat(sd35) == Catch::Approx(0.15).margin(1e-12));

  std::vector<RgbImage> refined{image_with_sat(40)};
  CHECK(delta_sat(refined) == Catch::Approx(0.07).margin(1e-12));

  std::vector<RgbImage> empty;
  CHECK_THROWS_AS(delta_sat(empty), std::invalid_argument);

  // zero iff overall mean equals the reference
  CHECK(delta_sat(sd35, 0.48) == Catch::Approx(0.0).margin(1e-12));
  CHECK(delta_sat(sd35, 0.40) > 0.0);
}
