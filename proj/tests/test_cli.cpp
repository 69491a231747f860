#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "fidlab/dataset.hpp"
#include "fidlab/png_io.hpp"
#include "fidlab/report.hpp"

using namespace fidlab;
namespace fs = std::filesystem;

namespace {

const std::string kTool = FIDLAB_TOOL_PATH;

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("fidlab_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = kTool + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// Small end-to-end fixture: dataset, denoiser, scorer, built once on demand.
struct Pipeline {
  fs::path root;
  std::string manifest;
  std::string denoiser;
  std::string scorer;

  static const Pipeline& instance() {
    static Pipeline p = build();
    return p;
  }

  static Pipeline build() {
    Pipeline p;
    p.root = temp_dir("pipeline");
    const std::string data = (p.root / "data").string();
    REQUIRE(run("build --out " + data +
                " --mode analytic --groups 16 --image-size 16 --seed 5") == 0);
    p.manifest = data + "/manifest.json";
    p.denoiser = (p.root / "toy.tdif").string();
    REQUIRE(run("train denoiser --manifest " + p.manifest + " --out " + p.denoiser +
                " --epochs 2 --batch 8 --hidden 16 --embed 8 --steps 6 --seed 5") == 0);
    p.scorer = (p.root / "cfm.cfms").string();
    REQUIRE(run("train scorer --manifest " + p.manifest + " --out " + p.scorer +
                " --epochs 1 --batch-groups 4 --seed 5") == 0);
    return p;
  }
};

}  // namespace

TEST_CASE("build command writes a balanced dataset and summary", "[cli]") {
  auto dir = temp_dir("build");
  const std::string data = (dir / "data").string();
  REQUIRE(run("build --out " + data + " --mode analytic --groups 12 --image-size 12 --seed 9") == 0);
  auto m = dataset::load_manifest(data + "/manifest.json");
  CHECK(m.groups.size() == 12);
  CHECK(fs::exists(data + "/resolved_config.txt"));

  // rebuild elsewhere with the same seed: byte-identical manifest
  const std::string data2 = (dir / "data2").string();
  REQUIRE(run("build --out " + data2 + " --mode analytic --groups 12 --image-size 12 --seed 9") == 0);
  CHECK(slurp(data + "/manifest.json") == slurp(data2 + "/manifest.json"));
}

TEST_CASE("build rejects bad flags", "[cli]") {
  auto dir = temp_dir("badbuild");
  CHECK(run("build --mode analytic --groups 4") != 0);  // no --out
  CHECK(run("build --out " + (dir / "x").string() + " --mode bogus --groups 4") != 0);
  CHECK(run("build --out " + (dir / "y").string() +
            " --mode diffusion --groups 4") != 0);  // no denoiser
}

TEST_CASE("config file drives build and unknown keys are rejected", "[cli]") {
  auto dir = temp_dir("cfgbuild");
  const std::string cfg_path = (dir / "run.cfg").string();
  {
    std::ofstream f(cfg_path);
    f << "mode = analytic\ngroups = 12\nimage_size = 12\nseed = 33\n";
  }
  const std::string data = (dir / "data").string();
  REQUIRE(run("build --config " + cfg_path + " --out " + data) == 0);
  auto m = dataset::load_manifest(data + "/manifest.json");
  CHECK(m.seed == 33);
  CHECK(m.image_size == 12);

  {
    std::ofstream f(cfg_path, std::ios::app);
    f << "bogus_key = 1\n";
  }
  CHECK(run("build --config " + cfg_path + " --out " + (dir / "data2").string()) != 0);
}

TEST_CASE("seed falls back to the environment variable", "[cli]") {
  auto dir = temp_dir("envseed");
  const std::string data = (dir / "data").string();
  const std::string cmd = "FIDELITY_LAB_SEED=77 " + kTool + " build --out " + data +
                          " --mode analytic --groups 4 --image-size 8 >/dev/null 2>&1";
  REQUIRE(std::system(cmd.c_str()) == 0);
  CHECK(dataset::load_manifest(data + "/manifest.json").seed == 77);
}

TEST_CASE("train commands produce checkpoints and loss curves", "[cli]") {
  const Pipeline& p = Pipeline::instance();
  CHECK(fs::exists(p.denoiser));
  CHECK(fs::exists(p.denoiser + ".loss.csv"));
  CHECK(fs::exists(p.scorer));
  CHECK(fs::exists(p.scorer + ".loss.csv"));

  // deterministic re-run: identical loss curve bytes
  auto dir = temp_dir("retrain");
  const std::string ck = (dir / "again.cfms").string();
  REQUIRE(run("train scorer --manifest " + p.manifest + " --out " + ck +
              " --epochs 1 --batch-groups 4 --seed 5") == 0);
  CHECK(slurp(ck + ".loss.csv") == slurp(p.scorer + ".loss.csv"));
  CHECK(slurp(ck) == slurp(p.scorer));

  // missing manifest errors out
  CHECK(run("train scorer --manifest /nonexistent/m.json --out " + ck) != 0);
  CHECK(run("train denoiser --out " + ck) != 0);
}

TEST_CASE("eval writes metrics and per-image scores", "[cli]") {
  const Pipeline& p = Pipeline::instance();
  auto dir = temp_dir("eval");
  const std::string metrics = (dir / "metrics.csv").string();
  const std::string scores = (dir / "scores.csv").string();
  REQUIRE(run("eval --manifest " + p.manifest + " --scorer " + p.scorer + " --out " + metrics +
              " --scores-csv " + scores) == 0);

  auto csv = report::load_csv(metrics);
  REQUIRE(csv.header == std::vector<std::string>{"metric", "value"});
  bool has_acc = false;
  for (const auto& row : csv.rows)
    if (row[0] == "syn_pairs_accuracy") has_acc = true;
  CHECK(has_acc);

  auto sc = report::load_csv(scores);
  CHECK(sc.header ==
        std::vector<std::string>{"group_id", "category", "palette_id", "rank", "score"});
  CHECK(!sc.rows.empty());

  CHECK(run("eval --manifest " + p.manifest + " --out " + metrics) != 0);  // no scorer
  CHECK(run("eval --scorer " + p.scorer + " --out " + metrics) != 0);      // nothing to do
}

TEST_CASE("sweep and report figures", "[cli]") {
  const Pipeline& p = Pipeline::instance();
  auto dir = temp_dir("figures");
  const std::string sweep = (dir / "sweep.csv").string();
  REQUIRE(run("eval --denoiser " + p.denoiser + " --sweep-csv " + sweep +
              " --sweep-scales 1,7.5,15,20,25,30 --sweep-seeds 1 --seed 4") == 0);
  auto csv = report::load_csv(sweep);
  CHECK(csv.header ==
        std::vector<std::string>{"palette_id", "seed", "scale", "mean_saturation"});
  CHECK(csv.rows.size() == 6 * 8);  // scales x palettes x 1 seed

  const std::string figs = (dir / "figs").string();
  REQUIRE(run("report --sweep-csv " + sweep + " --out " + figs) == 0);
  const std::string svg = slurp(fs::path(figs) / "saturation_vs_scale.svg");
  CHECK(svg.find("<polyline") != std::string::npos);
  // one polyline point per distinct scale
  std::size_t count = 0, pos = 0;
  const std::string svg_points = svg.substr(svg.find("points=\""));
  while ((pos = svg_points.find(',', pos)) != std::string::npos && pos < svg_points.find("\"/>")) {
    ++count;
    ++pos;
  }
  CHECK(count == 6);

  // byte-stable regeneration
  const std::string figs2 = (dir / "figs2").string();
  REQUIRE(run("report --sweep-csv " + sweep + " --out " + figs2) == 0);
  CHECK(slurp(fs::path(figs2) / "saturation_vs_scale.svg") == svg);

  // empty CSV errors and writes nothing
  const std::string empty_csv = (dir / "empty.csv").string();
  {
    std::ofstream f(empty_csv);
    f << "scale,mean_saturation\n";
  }
  CHECK(run("report --sweep-csv " + empty_csv + " --out " + (dir / "figs3").string()) != 0);
  CHECK_FALSE(fs::exists(fs::path(dir / "figs3") / "saturation_vs_scale.svg"));

  // category bars from per-image scores
  const std::string scores = (dir / "scores.csv").string();
  REQUIRE(run("eval --manifest " + p.manifest + " --scorer " + p.scorer + " --out " +
              (dir / "m.csv").string() + " --scores-csv " + scores) == 0);
  REQUIRE(run("report --scores-csv " + scores + " --out " + figs) == 0);
  CHECK(slurp(fs::path(figs) / "category_scores.svg").find("<rect") != std::string::npos);
}

TEST_CASE("refine grid emits per-run and summary tables", "[cli]") {
  const Pipeline& p = Pipeline::instance();
  auto dir = temp_dir("refine");
  const std::string out = (dir / "ref").string();
  REQUIRE(run("refine --denoiser " + p.denoiser + " --scorer " + p.scorer + " --out " + out +
              " --modes baseline,temporal,spatial,full --s0 9 --lambda 0.8 --seeds 1"
              " --palettes 0,1 --seed 8") == 0);

  auto runs = report::load_csv(out + "/refine_runs.csv");
  REQUIRE(runs.header[0] == "mode");
  CHECK(runs.rows.size() == 4 * 2);  // modes x palettes x 1 seed
  auto summary = report::load_csv(out + "/refine_summary.csv");
  CHECK(summary.rows.size() == 4);

  // baseline row: before == after by construction
  for (const auto& row : runs.rows)
    if (row[0] == "baseline") CHECK(row[5] == row[6]);

  // deterministic re-run
  const std::string out2 = (dir / "ref2").string();
  REQUIRE(run("refine --denoiser " + p.denoiser + " --scorer " + p.scorer + " --out " + out2 +
              " --modes baseline,temporal,spatial,full --s0 9 --lambda 0.8 --seeds 1"
              " --palettes 0,1 --seed 8") == 0);
  CHECK(slurp(out + "/refine_runs.csv") == slurp(out2 + "/refine_runs.csv"));

  CHECK(run("refine --denoiser " + p.denoiser + " --scorer " + p.scorer + " --out " +
            (dir / "bad").string() + " --modes bogus") != 0);
}

TEST_CASE("score prints a float for a PNG and palette id", "[cli]") {
  const Pipeline& p = Pipeline::instance();
  auto dir = temp_dir("score");
  auto m = dataset::load_manifest(p.manifest);
  const fs::path img = fs::path(p.manifest).parent_path() / m.groups[0].images[0];
  const std::string out_file = (dir / "score.txt").string();
  const std::string cmd = kTool + " score --scorer " + p.scorer + " --image " + img.string() +
                          " --palette " + std::to_string(m.groups[0].palette_id) + " > " +
                          out_file + " 2>/dev/null";
  REQUIRE(std::system(cmd.c_str()) == 0);
  const std::string text = slurp(out_file);
  REQUIRE(!text.empty());
  CHECK(std::isfinite(std::stod(text)));
}
