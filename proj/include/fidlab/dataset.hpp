#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fidlab/color_stats.hpp"
#include "fidlab/diffusion.hpp"
#include "fidlab/image.hpp"
#include "fidlab/palette.hpp"
#include "fidlab/png_io.hpp"
#include "fidlab/rng.hpp"

namespace fidlab::dataset {

inline constexpr int kDefaultGroupSize = 7;                    // K
inline const std::vector<double> kDefaultGains = {1.15, 1.3, 1.5, 1.75, 2.0, 2.3};
inline const std::vector<double> kDefaultScales = {7.5, 10, 15, 20, 25, 30};
inline constexpr double kDefaultSplitFraction = 0.842;         // ~160/190
inline constexpr double kNaturalSatLow = 0.25;
inline constexpr double kNaturalSatHigh = 0.41;

// One reference plus ordered distorted variants; rank 1 is the reference.
struct FidelityGroup {
  std::string group_id;
  std::string category;
  diffusion::Condition condition;
  RgbImage reference;
  std::vector<RgbImage> variants;  // rank 2..K in level order
  std::vector<double> levels;      // strictly increasing distortion levels
};

// Procedural reference: smooth multi-blob color field from the palette,
// saturation calibrated into the natural band around 0.33.
inline RgbImage make_reference(int palette_id, int image_size, std::uint64_t seed) {
  Rng rng(seed);
  const auto& pal = palette::anchors()[std::size_t(palette_id)];
  auto pick_color = [&]() {
    const palette::Anchor& a = pal[rng.index(pal.size())];
    double hue = std::fmod(a.hue + rng.uniform(-15.0, 15.0) + 360.0, 360.0);
    double sat = std::clamp(a.sat * rng.uniform(0.75, 1.05), 0.0, 1.0);
    double val = std::clamp(a.val * rng.uniform(0.7, 1.1), 0.05, 1.0);
    double r, g, b;
    color::hsv_to_rgb(hue, sat, val, r, g, b);
    return std::array<double, 3>{r, g, b};
  };

  struct Blob {
    double cx, cy, radius, amp;
    std::array<double, 3> color;
  };
  const std::size_t n_blobs = 3 + rng.index(4);
  std::vector<Blob> blobs(n_blobs);
  for (Blob& bl : blobs) {
    bl.cx = rng.uniform(0.0, double(image_size));
    bl.cy = rng.uniform(0.0, double(image_size));
    bl.radius = rng.uniform(image_size / 7.0, image_size / 2.5);
    bl.amp = rng.uniform(0.6, 1.2);
    bl.color = pick_color();
  }
  const std::array<double, 3> background = pick_color();
  const double bg_weight = 0.3;

  RgbImage img(image_size, image_size);
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) {
      double w_sum = bg_weight;
      double acc[3] = {background[0] * bg_weight, background[1] * bg_weight,
                       background[2] * bg_weight};
      for (const Blob& bl : blobs) {
        const double dx = x - bl.cx, dy = y - bl.cy;
        const double w = bl.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * bl.radius * bl.radius));
        w_sum += w;
        for (int c = 0; c < 3; ++c) acc[c] += bl.color[c] * w;
      }
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(acc[c] / w_sum, 0.0, 1.0);
    }

  // Rescale per-pixel HSV saturation so the image mean lands on a target
  // drawn from the natural band.
  const double target = rng.uniform(kNaturalSatLow + 0.02, kNaturalSatHigh - 0.02);
  for (int pass = 0; pass < 3; ++pass) {
    const double mean = color::compute_stats(img).mean_saturation;
    if (std::abs(mean - target) < 0.004 || mean <= 0.0) break;
    const double factor = target / mean;
    for (std::size_t p = 0; p < img.pixels(); ++p) {
      color::Hsv hsv = color::rgb_to_hsv(img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]);
      color::hsv_to_rgb(hsv.h, std::clamp(hsv.s * factor, 0.0, 1.0), hsv.v,
                        img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]);
    }
  }
  return img;
}

// Deterministic distortion: saturation multiplied by the gain, value spread
// stretched by sqrt(gain), both in HSV so results stay in gamut.
inline RgbImage apply_analytic_distortion(const RgbImage& ref, double gain) {
  if (gain == 1.0) return ref;
  RgbImage out(ref.height, ref.width);
  double v_mean = 0.0;
  std::vector<color::Hsv> hsv(ref.pixels());
  for (std::size_t p = 0; p < ref.pixels(); ++p) {
    hsv[p] = color::rgb_to_hsv(ref.data[p * 3], ref.data[p * 3 + 1], ref.data[p * 3 + 2]);
    v_mean += hsv[p].v;
  }
  v_mean /= double(ref.pixels());
  const double contrast = std::sqrt(gain);
  for (std::size_t p = 0; p < ref.pixels(); ++p) {
    const double s = std::clamp(hsv[p].s * gain, 0.0, 1.0);
    const double v = std::clamp(v_mean + contrast * (hsv[p].v - v_mean), 0.0, 1.0);
    color::hsv_to_rgb(hsv[p].h, s, v, out.data[p * 3], out.data[p * 3 + 1], out.data[p * 3 + 2]);
  }
  return out;
}

inline std::vector<RgbImage> synth_variants_analytic(const RgbImage& ref,
                                                     const std::vector<double>& gains) {
  for (std::size_t i = 0; i < gains.size(); ++i) {
    if (gains[i] < 1.0) throw std::invalid_argument("synth_variants_analytic: gains must be >= 1");
    if (i > 0 && gains[i] <= gains[i - 1])
      throw std::invalid_argument("synth_variants_analytic: gains must be strictly increasing");
  }
  std::vector<RgbImage> out;
  out.reserve(gains.size());
  for (double g : gains) out.push_back(apply_analytic_distortion(ref, g));
  return out;
}

// One sample per guidance scale with a shared seed, so every variant starts
// from the same initial noise.
inline std::vector<RgbImage> synth_variants_diffusion(const diffusion::DenoiserParams& params,
                                                      const diffusion::NoiseSchedule& sched,
                                                      diffusion::Condition cond,
                                                      const std::vector<double>& scales,
                                                      std::uint64_t seed) {
  for (std::size_t i = 1; i < scales.size(); ++i)
    if (scales[i] <= scales[i - 1])
      throw std::invalid_argument("synth_variants_diffusion: scales must be strictly increasing");
  std::vector<RgbImage> out;
  out.reserve(scales.size());
  for (double s : scales)
    out.push_back(diffusion::sample(params, sched, cond, diffusion::Guidance::constant(s), seed));
  return out;
}

struct GroupRecord {
  std::string group_id;
  std::string category;
  int palette_id = 0;
  std::string split;               // "train" or "test"
  std::vector<std::string> images; // relative paths, rank 1..K
};

struct DatasetManifest {
  int version = 1;
  std::string mode;  // "analytic" or "diffusion"
  int image_size = 32;
  int group_size = kDefaultGroupSize;
  std::uint64_t seed = 0;
  double split_fraction = kDefaultSplitFraction;
  std::vector<double> levels;  // gains or guidance scales, K-1 of them
  std::vector<std::string> categories;
  std::vector<GroupRecord> groups;

  bool operator==(const DatasetManifest&) const = default;
};

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["mode"] = m.mode;
  j["image_size"] = m.image_size;
  j["group_size"] = m.group_size;
  j["seed"] = m.seed;
  j["split_fraction"] = m.split_fraction;
  j["levels"] = m.levels;
  j["categories"] = m.categories;
  j["groups"] = nlohmann::ordered_json::array();
  for (const GroupRecord& g : m.groups) {
    nlohmann::ordered_json gj;
    gj["group_id"] = g.group_id;
    gj["category"] = g.category;
    gj["palette_id"] = g.palette_id;
    gj["split"] = g.split;
    gj["images"] = g.images;
    j["groups"].push_back(std::move(gj));
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  m.mode = j.at("mode").get<std::string>();
  m.image_size = j.at("image_size").get<int>();
  m.group_size = j.at("group_size").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.split_fraction = j.at("split_fraction").get<double>();
  m.levels = j.at("levels").get<std::vector<double>>();
  m.categories = j.at("categories").get<std::vector<std::string>>();
  for (const auto& gj : j.at("groups")) {
    GroupRecord g;
    g.group_id = gj.at("group_id").get<std::string>();
    g.category = gj.at("category").get<std::string>();
    g.palette_id = gj.at("palette_id").get<int>();
    g.split = gj.at("split").get<std::string>();
    g.images = gj.at("images").get<std::vector<std::string>>();
    m.groups.push_back(std::move(g));
  }
  return m;
}

inline void atomic_write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + tmp);
    f << text;
    if (!f) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
  atomic_write_text(path, manifest_to_json(m).dump(2) + "\n");
}

inline DatasetManifest load_manifest(const std::string& path, bool verify_files = true) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path);
  nlohmann::json j;
  f >> j;
  DatasetManifest m = manifest_from_json(j);
  if (verify_files) {
    const auto base = std::filesystem::path(path).parent_path();
    for (const GroupRecord& g : m.groups)
      for (const std::string& rel : g.images)
        if (!std::filesystem::exists(base / rel))
          throw std::runtime_error("manifest references missing file: " + rel);
  }
  return m;
}

struct BuildConfig {
  std::string out_dir;
  std::string mode = "analytic";
  int groups = 120;
  int image_size = 32;
  std::uint64_t seed = 42;
  double split_fraction = kDefaultSplitFraction;
  std::vector<double> gains = kDefaultGains;
  std::vector<double> scales = kDefaultScales;
  std::vector<std::string> categories = palette::default_categories();
  const diffusion::DenoiserParams* denoiser = nullptr;  // diffusion mode only
};

inline FidelityGroup make_group(const BuildConfig& cfg, const diffusion::NoiseSchedule* sched,
                                std::size_t index) {
  FidelityGroup g;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "g%05zu", index);
  g.group_id = buf;
  const std::size_t cat_index = index % cfg.categories.size();
  g.category = cfg.categories[cat_index];
  g.condition.palette_id = palette::palette_for_category(cat_index);
  const std::uint64_t ref_seed = Rng::fork(cfg.seed, index * 2).next_u64();
  const std::uint64_t var_seed = Rng::fork(cfg.seed, index * 2 + 1).next_u64();
  g.reference = make_reference(g.condition.palette_id, cfg.image_size, ref_seed);
  if (cfg.mode == "analytic") {
    g.levels = cfg.gains;
    g.variants = synth_variants_analytic(g.reference, cfg.gains);
  } else if (cfg.mode == "diffusion") {
    if (!cfg.denoiser) throw std::runtime_error("build_dataset: diffusion mode needs a denoiser");
    g.levels = cfg.scales;
    g.variants = synth_variants_diffusion(*cfg.denoiser, *sched, g.condition, cfg.scales, var_seed);
  } else {
    throw std::invalid_argument("build_dataset: unknown mode " + cfg.mode);
  }
  return g;
}

// Writes groups/<id>/rank<k>.png plus manifest.json; ranks follow level
// order, never measured statistics.
inline DatasetManifest build_dataset(const BuildConfig& cfg) {
  if (cfg.groups < 1) throw std::invalid_argument("build_dataset: need at least one group");
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  diffusion::NoiseSchedule sched;
  if (cfg.mode == "diffusion") {
    if (!cfg.denoiser) throw std::runtime_error("build_dataset: diffusion mode needs a denoiser");
    sched = diffusion::NoiseSchedule::linear(cfg.denoiser->config.steps);
  }

  DatasetManifest m;
  m.mode = cfg.mode;
  m.image_size = cfg.image_size;
  m.seed = cfg.seed;
  m.split_fraction = cfg.split_fraction;
  m.levels = cfg.mode == "analytic" ? cfg.gains : cfg.scales;
  m.group_size = int(m.levels.size()) + 1;
  m.categories = cfg.categories;

  // Seeded shuffle decides the split assignment.
  std::vector<std::size_t> order(std::size_t(cfg.groups));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(Rng::fork(cfg.seed, 0xfeed).next_u64());
  split_rng.shuffle(order);
  const std::size_t n_train = std::size_t(std::lround(cfg.split_fraction * cfg.groups));
  std::vector<bool> is_train(std::size_t(cfg.groups), false);
  for (std::size_t i = 0; i < std::min(n_train, order.size()); ++i) is_train[order[i]] = true;

  for (std::size_t index = 0; index < std::size_t(cfg.groups); ++index) {
    FidelityGroup g = make_group(cfg, &sched, index);
    GroupRecord rec;
    rec.group_id = g.group_id;
    rec.category = g.category;
    rec.palette_id = g.condition.palette_id;
    rec.split = is_train[index] ? "train" : "test";
    const fs::path group_dir = fs::path(cfg.out_dir) / "groups" / g.group_id;
    fs::create_directories(group_dir);
    for (int k = 1; k <= int(g.variants.size()) + 1; ++k) {
      const std::string rel = "groups/" + g.group_id + "/rank" + std::to_string(k) + ".png";
      const RgbImage& img = k == 1 ? g.reference : g.variants[std::size_t(k) - 2];
      png::save_image((fs::path(cfg.out_dir) / rel).string(), img);
      rec.images.push_back(rel);
    }
    m.groups.push_back(std::move(rec));
  }

  save_manifest((fs::path(cfg.out_dir) / "manifest.json").string(), m);
  return m;
}

// In-memory group for training/evaluation; images in rank order.
struct LoadedGroup {
  GroupRecord record;
  std::vector<RgbImage> images;
};

inline std::vector<LoadedGroup> load_groups(const DatasetManifest& m, const std::string& base_dir,
                                            const std::string& split_filter = "") {
  namespace fs = std::filesystem;
  std::vector<LoadedGroup> out;
  for (const GroupRecord& g : m.groups) {
    if (!split_filter.empty() && g.split != split_filter) continue;
    LoadedGroup lg;
    lg.record = g;
    for (const std::string& rel : g.images)
      lg.images.push_back(png::load_image((fs::path(base_dir) / rel).string()));
    out.push_back(std::move(lg));
  }
  return out;
}

}  // namespace fidlab::dataset
