#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "fidlab/checkpoint.hpp"
#include "fidlab/config.hpp"
#include "fidlab/png_io.hpp"
#include "fidlab/report.hpp"
#include "fidlab/rng.hpp"

using namespace fidlab;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("fidlab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("png round trip and byte stability", "[io]") {
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const int w = 5 + int(rng.index(40)), h = 5 + int(rng.index(40));
    std::vector<std::uint8_t> rgb(std::size_t(w) * h * 3);
    for (auto& v : rgb) v = std::uint8_t(rng.index(256));

    auto bytes = png::encode_rgb8(rgb, w, h);
    auto bytes2 = png::encode_rgb8(rgb, w, h);
    REQUIRE(bytes == bytes2);

    auto decoded = png::decode_rgb8(bytes);
    REQUIRE(decoded.width == w);
    REQUIRE(decoded.height == h);
    REQUIRE(decoded.rgb == rgb);
  }
}

TEST_CASE("png rejects garbage", "[io]") {
  std::vector<std::uint8_t> junk{1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK_THROWS(png::decode_rgb8(junk));
  std::vector<std::uint8_t> sig_only{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  CHECK_THROWS(png::decode_rgb8(sig_only));
}

TEST_CASE("png image save and load", "[io]") {
  auto dir = temp_dir("png");
  RgbImage img(9, 13);
  Rng rng(8);
  for (double& v : img.data) v = rng.uniform01();
  const std::string path = (dir / "img.png").string();
  png::save_image(path, img);
  RgbImage back = png::load_image(path);
  REQUIRE(back.height == img.height);
  REQUIRE(back.width == img.width);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    REQUIRE(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("checkpoint round trip", "[io]") {
  auto dir = temp_dir("ckpt");
  ckpt::Checkpoint c;
  c.magic = "TSTM";
  c.meta = {{"alpha", 42}, {"beta", -7}};
  c.tensors.emplace_back("w", num::Tensor({2, 3}, {1, 2, 3, 4, 5, 6.5}));
  c.tensors.emplace_back("b", num::Tensor({1, 2}, {-0.25, 1e-17}));

  const std::string path = (dir / "model.bin").string();
  ckpt::save(path, c);
  ckpt::Checkpoint back = ckpt::load(path, "TSTM");
  CHECK(back.meta_value("alpha") == 42);
  CHECK(back.meta_value("beta") == -7);
  CHECK(back.tensor("w").data() == c.tensors[0].second.data());
  CHECK(back.tensor("b").data() == c.tensors[1].second.data());
  CHECK(back.tensor("w").shape() == c.tensors[0].second.shape());

  CHECK_THROWS(ckpt::load(path, "WRNG"));

  // identical params -> identical bytes
  ckpt::save((dir / "model2.bin").string(), c);
  std::ifstream a(path, std::ios::binary), b((dir / "model2.bin").string(), std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("csv write and read back", "[io]") {
  auto dir = temp_dir("csv");
  report::Csv csv;
  csv.header = {"name", "value"};
  csv.add_row({"a", report::fmt(0.15)});
  csv.add_row({"b", report::fmt(1.0 / 3.0)});
  CHECK_THROWS(csv.add_row({"only-one-cell"}));

  const std::string path = (dir / "t.csv").string();
  report::save_csv(path, csv);
  report::Csv back = report::load_csv(path);
  REQUIRE(back.header == csv.header);
  REQUIRE(back.rows == csv.rows);

  CHECK_THROWS(report::load_csv((dir / "missing.csv").string()));
}

TEST_CASE("config parsing", "[io]") {
  auto dir = temp_dir("cfg");
  const std::string path = (dir / "run.cfg").string();
  {
    std::ofstream f(path);
    f << "# comment line\n";
    f << "groups = 120\n";
    f << "mode=analytic\n";
    f << "gains = 1.15,1.3,1.5\n";
    f << "split = 0.842   # inline comment\n";
  }
  auto kv = config::parse_file(path);
  CHECK(kv.get_int("groups", 0) == 120);
  CHECK(kv.get("mode", "?") == "analytic");
  CHECK(kv.get_double("split", 0) == Catch::Approx(0.842));
  auto gains = kv.get_doubles("gains", {});
  REQUIRE(gains.size() == 3);
  CHECK(gains[1] == Catch::Approx(1.3));

  CHECK_THROWS(kv.reject_unknown({"groups", "mode", "gains"}));  // split unknown
  CHECK_NOTHROW(kv.reject_unknown({"groups", "mode", "gains", "split"}));

  {
    std::ofstream f(path, std::ios::app);
    f << "broken line without equals\n";
  }
  CHECK_THROWS(config::parse_file(path));
}

TEST_CASE("svg output is deterministic", "[io]") {
  auto make = [] {
    report::Svg svg(200, 100);
    svg.polyline({{10, 90}, {60, 40}, {110, 55}, {190, 10}}, "#c0392b");
    svg.rect(20, 20, 30, 60, "#2980b9");
    svg.text(100, 95, "label", 10, "middle");
    return svg.finish();
  };
  const std::string a = make(), b = make();
  CHECK(a == b);
  CHECK(a.find("<svg") == 0);
  CHECK(a.find("</svg>") != std::string::npos);
  CHECK(a.find("polyline") != std::string::npos);
}
