// Batch front-end for the color-fidelity lab: build datasets, train the toy
// denoiser and the fidelity scorer, evaluate, run guidance refinement, and
// emit CSV tables plus SVG figures.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "fidlab/cfr.hpp"
#include "fidlab/config.hpp"
#include "fidlab/dataset.hpp"
#include "fidlab/diffusion.hpp"
#include "fidlab/eval.hpp"
#include "fidlab/parallel.hpp"
#include "fidlab/report.hpp"
#include "fidlab/scorer.hpp"

namespace fs = std::filesystem;
using namespace fidlab;

namespace {

// Effective settings for one run, logged next to the primary output so every
// run can be reproduced from its config + seed.
void log_resolved(const std::string& path, const std::map<std::string, std::string>& effective) {
  std::string text;
  for (const auto& [k, v] : effective) text += k + "=" + v + "\n";
  report::atomic_write(path, text);
  std::cout << "resolved config -> " << path << "\n";
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + report::fmt(v[i]);
  return s;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stoi(cell));
  return out;
}

config::KeyValues load_config_opt(const std::string& path) {
  return path.empty() ? config::KeyValues{} : config::parse_file(path);
}

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 42;
  bool seed_set = false;
  int jobs = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat key=value config file");
  cmd->add_option("--seed", args.seed, "global seed")->each([&](const std::string&) {
    args.seed_set = true;
  });
  cmd->add_option("--jobs", args.jobs, "worker threads for independent jobs");
}

std::uint64_t effective_seed(const CommonArgs& args, const config::KeyValues& kv) {
  if (args.seed_set) return args.seed;
  return config::resolve_seed(kv, args.seed);
}

// ---------------------------------------------------------------- build ----

int cmd_build(const CommonArgs& common, const std::string& out_dir, std::string mode, int groups,
              int image_size, double split, std::string gains_str, std::string scales_str,
              std::string denoiser_path, const std::set<std::string>& cli_set) {
  config::KeyValues kv = load_config_opt(common.config_path);
  kv.reject_unknown({"out", "mode", "groups", "image_size", "seed", "split", "gains", "scales",
                     "denoiser", "jobs"});

  dataset::BuildConfig cfg;
  cfg.out_dir = !out_dir.empty() ? out_dir : kv.get("out", "");
  if (cfg.out_dir.empty()) throw std::runtime_error("build: --out is required");
  cfg.mode = cli_set.count("mode") ? mode : kv.get("mode", mode);
  cfg.groups = cli_set.count("groups") ? groups : int(kv.get_int("groups", groups));
  cfg.image_size = cli_set.count("image_size") ? image_size : int(kv.get_int("image_size", image_size));
  cfg.split_fraction = cli_set.count("split") ? split : kv.get_double("split", split);
  cfg.seed = effective_seed(common, kv);
  cfg.gains = kv.get_doubles("gains", cfg.gains);
  if (!gains_str.empty()) {
    config::KeyValues tmp;
    tmp.set("gains", gains_str);
    cfg.gains = tmp.get_doubles("gains", cfg.gains);
  }
  cfg.scales = kv.get_doubles("scales", cfg.scales);
  if (!scales_str.empty()) {
    config::KeyValues tmp;
    tmp.set("scales", scales_str);
    cfg.scales = tmp.get_doubles("scales", cfg.scales);
  }
  if (denoiser_path.empty()) denoiser_path = kv.get("denoiser", "");

  diffusion::DenoiserParams denoiser;
  if (cfg.mode == "diffusion") {
    if (denoiser_path.empty()) throw std::runtime_error("build: diffusion mode needs --denoiser");
    denoiser = diffusion::load_denoiser(denoiser_path);
    cfg.denoiser = &denoiser;
  }

  const dataset::DatasetManifest m = dataset::build_dataset(cfg);

  log_resolved((fs::path(cfg.out_dir) / "resolved_config.txt").string(),
               {{"command", "build"},
                {"out", cfg.out_dir},
                {"mode", cfg.mode},
                {"groups", std::to_string(cfg.groups)},
                {"image_size", std::to_string(cfg.image_size)},
                {"split", report::fmt(cfg.split_fraction)},
                {"seed", std::to_string(cfg.seed)},
                {"gains", join_doubles(cfg.gains)},
                {"scales", join_doubles(cfg.scales)},
                {"denoiser", denoiser_path}});

  // summary table: groups per category and split
  std::map<std::string, std::pair<int, int>> per_category;
  for (const auto& g : m.groups) {
    auto& [train, test] = per_category[g.category];
    (g.split == "train" ? train : test)++;
  }
  std::cout << "category                 train  test\n";
  for (const auto& [cat, counts] : per_category) {
    std::cout << cat;
    for (std::size_t i = cat.size(); i < 25; ++i) std::cout << ' ';
    std::cout << counts.first << "      " << counts.second << "\n";
  }
  std::cout << "manifest -> " << (fs::path(cfg.out_dir) / "manifest.json").string() << " ("
            << m.groups.size() << " groups, K=" << m.group_size << ", mode=" << m.mode << ")\n";
  return 0;
}

// ---------------------------------------------------------------- train ----

int cmd_train_denoiser(const CommonArgs& common, const std::string& manifest_path,
                       const std::string& out_path, int epochs, int batch, double lr,
                       double cond_drop, int hidden, int embed, int steps,
                       const std::string& loss_csv) {
  config::KeyValues kv = load_config_opt(common.config_path);
  kv.reject_unknown({"manifest", "out", "epochs", "batch", "lr", "cond_drop", "hidden", "embed",
                     "steps", "seed", "loss_csv", "jobs"});
  if (manifest_path.empty()) throw std::runtime_error("train denoiser: --manifest is required");

  const dataset::DatasetManifest m = dataset::load_manifest(manifest_path);
  const auto groups =
      dataset::load_groups(m, fs::path(manifest_path).parent_path().string(), "train");
  if (groups.empty()) throw std::runtime_error("train denoiser: manifest has no train groups");

  // the denoiser learns the reference distribution, conditioned on palette
  std::vector<diffusion::LabeledImage> data;
  for (const auto& g : groups) data.push_back({g.images.front(), g.record.palette_id});

  diffusion::DenoiserConfig cfg;
  cfg.image_size = m.image_size;
  cfg.hidden = hidden;
  cfg.embed = embed;
  cfg.steps = steps;

  diffusion::TrainDenoiserOptions opt;
  opt.epochs = epochs;
  opt.batch = batch;
  opt.lr = lr;
  opt.cond_drop_prob = cond_drop;
  opt.seed = effective_seed(common, kv);

  std::vector<double> losses;
  const diffusion::DenoiserParams params = diffusion::train_denoiser(data, cfg, opt, &losses);
  diffusion::save_denoiser(out_path, params);

  report::Csv curve;
  curve.header = {"epoch", "mean_loss"};
  for (std::size_t e = 0; e < losses.size(); ++e)
    curve.add_row({std::to_string(e + 1), report::fmt(losses[e])});
  const std::string csv_path = loss_csv.empty() ? out_path + ".loss.csv" : loss_csv;
  report::save_csv(csv_path, curve);

  log_resolved(out_path + ".config.txt",
               {{"command", "train denoiser"},
                {"manifest", manifest_path},
                {"out", out_path},
                {"epochs", std::to_string(epochs)},
                {"batch", std::to_string(batch)},
                {"lr", report::fmt(lr)},
                {"cond_drop", report::fmt(cond_drop)},
                {"hidden", std::to_string(hidden)},
                {"embed", std::to_string(embed)},
                {"steps", std::to_string(steps)},
                {"seed", std::to_string(opt.seed)}});
  std::cout << "denoiser -> " << out_path << " (final loss " << report::fmt(losses.back())
            << ", curve " << csv_path << ")\n";
  return 0;
}

int cmd_train_scorer(const CommonArgs& common, const std::string& manifest_path,
                     const std::string& out_path, int epochs, int batch_groups, double lr,
                     double tau, const std::string& loss_name, bool visual_only,
                     const std::string& loss_csv) {
  config::KeyValues kv = load_config_opt(common.config_path);
  kv.reject_unknown({"manifest", "out", "epochs", "batch_groups", "lr", "tau", "loss",
                     "visual_only", "seed", "loss_csv", "jobs"});
  if (manifest_path.empty()) throw std::runtime_error("train scorer: --manifest is required");

  const dataset::DatasetManifest m = dataset::load_manifest(manifest_path);
  const auto loaded =
      dataset::load_groups(m, fs::path(manifest_path).parent_path().string(), "train");
  if (loaded.empty()) throw std::runtime_error("train scorer: manifest has no train groups");

  std::vector<scorer::GroupSample> groups;
  for (const auto& g : loaded) groups.push_back({g.images, g.record.palette_id});

  scorer::ScorerConfig cfg;
  cfg.image_size = m.image_size;
  cfg.visual_only = visual_only || kv.get_bool("visual_only", false);

  scorer::TrainScorerOptions opt;
  opt.epochs = int(kv.get_int("epochs", epochs));
  opt.batch_groups = int(kv.get_int("batch_groups", batch_groups));
  opt.lr = kv.get_double("lr", lr);
  opt.tau = kv.get_double("tau", tau);
  opt.loss = scorer::parse_loss(kv.get("loss", loss_name));
  opt.seed = effective_seed(common, kv);

  std::vector<double> losses;
  const scorer::ScorerParams params = scorer::train_scorer(cfg, groups, opt, &losses);
  scorer::save_scorer(out_path, params);

  report::Csv curve;
  curve.header = {"epoch", "mean_loss"};
  for (std::size_t e = 0; e < losses.size(); ++e)
    curve.add_row({std::to_string(e + 1), report::fmt(losses[e])});
  const std::string csv_path = loss_csv.empty() ? out_path + ".loss.csv" : loss_csv;
  report::save_csv(csv_path, curve);

  log_resolved(out_path + ".config.txt",
               {{"command", "train scorer"},
                {"manifest", manifest_path},
                {"out", out_path},
                {"epochs", std::to_string(opt.epochs)},
                {"batch_groups", std::to_string(opt.batch_groups)},
                {"lr", report::fmt(opt.lr)},
                {"tau", report::fmt(opt.tau)},
                {"loss", opt.loss == scorer::LossKind::Softrank ? "softrank" : "pairwise"},
                {"visual_only", cfg.visual_only ? "true" : "false"},
                {"seed", std::to_string(opt.seed)}});
  std::cout << "scorer -> " << out_path << " (final loss " << report::fmt(losses.back())
            << ", curve " << csv_path << ")\n";
  return 0;
}

// ----------------------------------------------------------------- eval ----

int cmd_eval(const CommonArgs& common, const std::string& manifest_path,
             const std::string& scorer_path, const std::string& out_csv,
             const std::string& split, const std::string& scores_csv,
             const std::string& denoiser_path, const std::string& sweep_csv,
             std::string sweep_scales_str, int sweep_seeds) {
  config::KeyValues kv = load_config_opt(common.config_path);
  kv.reject_unknown({"manifest", "scorer", "out", "split", "scores_csv", "denoiser", "sweep_csv",
                     "sweep_scales", "sweep_seeds", "seed", "jobs"});

  const std::uint64_t seed = effective_seed(common, kv);

  if (!manifest_path.empty()) {
    if (scorer_path.empty()) throw std::runtime_error("eval: --scorer is required");
    const scorer::ScorerParams params = scorer::load_scorer(scorer_path);
    const dataset::DatasetManifest m = dataset::load_manifest(manifest_path);
    const auto loaded =
        dataset::load_groups(m, fs::path(manifest_path).parent_path().string(), split);
    if (loaded.empty()) throw std::runtime_error("eval: no groups in split '" + split + "'");

    std::vector<eval::EvalGroup> groups;
    for (const auto& g : loaded) groups.push_back({g.images, g.record.palette_id});
    eval::EvalResult r = eval::evaluate_groups(groups, [&](const RgbImage& img, int palette) {
      return scorer::score_image(params, img, {palette});
    });

    report::Csv csv;
    csv.header = {"metric", "value"};
    csv.add_row({"syn_pairs_accuracy", report::fmt(r.syn_pairs_accuracy)});
    csv.add_row({"real_syn_accuracy", report::fmt(r.real_syn_accuracy)});
    csv.add_row({"spearman", report::fmt(r.spearman)});
    csv.add_row({"pearson", report::fmt(r.pearson)});
    csv.add_row({"kendall", report::fmt(r.kendall)});
    csv.add_row({"n_syn_pairs", std::to_string(r.n_syn_pairs)});
    csv.add_row({"n_real_pairs", std::to_string(r.n_real_pairs)});
    csv.add_row({"n_images", std::to_string(r.n_images)});
    report::save_csv(out_csv, csv);
    std::cout << "metrics -> " << out_csv << " (syn " << report::fmt(r.syn_pairs_accuracy)
              << ", real " << report::fmt(r.real_syn_accuracy) << ", rho "
              << report::fmt(r.spearman) << ")\n";

    if (!scores_csv.empty()) {
      report::Csv sc;
      sc.header = {"group_id", "category", "palette_id", "rank", "score"};
      for (const auto& g : loaded)
        for (std::size_t i = 0; i < g.images.size(); ++i)
          sc.add_row({g.record.group_id, g.record.category,
                      std::to_string(g.record.palette_id), std::to_string(i + 1),
                      report::fmt(scorer::score_image(params, g.images[i],
                                                      {g.record.palette_id}))});
      report::save_csv(scores_csv, sc);
      std::cout << "scores -> " << scores_csv << "\n";
    }
    log_resolved(out_csv + ".config.txt", {{"command", "eval"},
                                           {"manifest", manifest_path},
                                           {"scorer", scorer_path},
                                           {"split", split},
                                           {"out", out_csv},
                                           {"seed", std::to_string(seed)}});
  }

  // saturation-versus-scale sweep of the toy diffusion model
  if (!sweep_csv.empty()) {
    if (denoiser_path.empty()) throw std::runtime_error("eval: sweep needs --denoiser");
    const diffusion::DenoiserParams den = diffusion::load_denoiser(denoiser_path);
    const diffusion::NoiseSchedule sched = diffusion::NoiseSchedule::linear(den.config.steps);
    std::vector<double> scales{1.0, 7.5, 15.0, 30.0};
    if (!sweep_scales_str.empty()) {
      config::KeyValues tmp;
      tmp.set("s", sweep_scales_str);
      scales = tmp.get_doubles("s", scales);
    }

    struct Row {
      int palette;
      std::uint64_t seed;
      double scale;
      double sat;
    };
    std::vector<Row> rows(std::size_t(sweep_seeds) * den.config.num_classes * scales.size());
    parallel_for(std::size_t(sweep_seeds) * den.config.num_classes, common.jobs, [&](std::size_t j) {
      const int palette = int(j % std::size_t(den.config.num_classes));
      const std::uint64_t s = Rng::fork(seed, j).next_u64();
      for (std::size_t si = 0; si < scales.size(); ++si) {
        const RgbImage img =
            diffusion::sample(den, sched, {palette}, diffusion::Guidance::constant(scales[si]), s);
        rows[j * scales.size() + si] = {palette, s, scales[si],
                                        color::compute_stats(img).mean_saturation};
      }
    });

    report::Csv csv;
    csv.header = {"palette_id", "seed", "scale", "mean_saturation"};
    for (const Row& r : rows)
      csv.add_row({std::to_string(r.palette), std::to_string(r.seed), report::fmt(r.scale),
                   report::fmt(r.sat)});
    report::save_csv(sweep_csv, csv);
    std::cout << "sweep -> " << sweep_csv << " (" << rows.size() << " rows)\n";
    log_resolved(sweep_csv + ".config.txt", {{"command", "eval sweep"},
                                             {"denoiser", denoiser_path},
                                             {"sweep_scales", join_doubles(scales)},
                                             {"sweep_seeds", std::to_string(sweep_seeds)},
                                             {"seed", std::to_string(seed)}});
  }

  if (manifest_path.empty() && sweep_csv.empty())
    throw std::runtime_error("eval: nothing to do (need --manifest or --sweep-csv)");
  return 0;
}

// --------------------------------------------------------------- refine ----

int cmd_refine(const CommonArgs& common, const std::string& denoiser_path,
               const std::string& scorer_path, const std::string& out_dir,
               const std::string& modes_str, double s0, double lambda, double kappa, int seeds,
               std::string palettes_str, bool save_images) {
  config::KeyValues kv = load_config_opt(common.config_path);
  kv.reject_unknown({"denoiser", "scorer", "out", "modes", "s0", "lambda", "kappa", "seeds",
                     "palettes", "save_images", "seed", "jobs"});
  if (denoiser_path.empty() || scorer_path.empty())
    throw std::runtime_error("refine: --denoiser and --scorer are required");

  const diffusion::DenoiserParams den = diffusion::load_denoiser(denoiser_path);
  const scorer::ScorerParams cfm = scorer::load_scorer(scorer_path);
  const diffusion::NoiseSchedule sched = diffusion::NoiseSchedule::linear(den.config.steps);
  const std::uint64_t seed = effective_seed(common, kv);

  std::vector<cfr::Mode> modes;
  {
    std::istringstream ss(modes_str);
    std::string cell;
    while (std::getline(ss, cell, ',')) modes.push_back(cfr::parse_mode(cell));
  }
  std::vector<int> palettes;
  if (!palettes_str.empty()) palettes = parse_int_list(palettes_str);
  else
    for (int p = 0; p < den.config.num_classes; ++p) palettes.push_back(p);

  fs::create_directories(out_dir);

  struct Job {
    cfr::Mode mode;
    int palette;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (cfr::Mode mode : modes)
    for (int p : palettes)
      for (int s = 0; s < seeds; ++s)
        jobs.push_back({mode, p, Rng::fork(seed, std::uint64_t(p) * 1000 + s).next_u64()});

  std::vector<cfr::RefineResult> results(jobs.size());
  parallel_for(jobs.size(), common.jobs, [&](std::size_t i) {
    results[i] = cfr::refine(den, cfm, sched, {jobs[i].palette}, s0, lambda, kappa, jobs[i].seed,
                             jobs[i].mode);
  });

  report::Csv runs;
  runs.header = {"mode", "s0", "lambda", "kappa", "seed", "delta_sat_before", "delta_sat_after",
                 "score_before", "score_after", "palette_distance_before",
                 "palette_distance_after", "palette_id"};
  for (std::size_t i = 0; i < results.size(); ++i) {
    const cfr::RefineReport& r = results[i].report;
    runs.add_row({cfr::mode_name(r.mode), report::fmt(r.s0), report::fmt(r.lambda),
                  report::fmt(r.kappa), std::to_string(r.seed), report::fmt(r.delta_sat_before),
                  report::fmt(r.delta_sat_after), report::fmt(r.score_before),
                  report::fmt(r.score_after), report::fmt(r.palette_distance_before),
                  report::fmt(r.palette_distance_after), std::to_string(r.palette_id)});
    if (save_images) {
      const std::string stem = cfr::mode_name(r.mode) + "_p" + std::to_string(r.palette_id) +
                               "_s" + std::to_string(i);
      png::save_image((fs::path(out_dir) / (stem + ".png")).string(), results[i].image);
    }
  }
  report::save_csv((fs::path(out_dir) / "refine_runs.csv").string(), runs);

  // aggregate per mode
  report::Csv summary;
  summary.header = {"mode", "n", "mean_delta_sat_before", "mean_delta_sat_after",
                    "mean_palette_distance_before", "mean_palette_distance_after",
                    "mean_score_before", "mean_score_after"};
  for (cfr::Mode mode : modes) {
    double dsb = 0, dsa = 0, pdb = 0, pda = 0, scb = 0, sca = 0;
    int n = 0;
    for (const auto& res : results)
      if (res.report.mode == mode) {
        dsb += res.report.delta_sat_before;
        dsa += res.report.delta_sat_after;
        pdb += res.report.palette_distance_before;
        pda += res.report.palette_distance_after;
        scb += res.report.score_before;
        sca += res.report.score_after;
        ++n;
      }
    summary.add_row({cfr::mode_name(mode), std::to_string(n), report::fmt(dsb / n),
                     report::fmt(dsa / n), report::fmt(pdb / n), report::fmt(pda / n),
                     report::fmt(scb / n), report::fmt(sca / n)});
  }
  report::save_csv((fs::path(out_dir) / "refine_summary.csv").string(), summary);

  log_resolved((fs::path(out_dir) / "resolved_config.txt").string(),
               {{"command", "refine"},
                {"denoiser", denoiser_path},
                {"scorer", scorer_path},
                {"out", out_dir},
                {"modes", modes_str},
                {"s0", report::fmt(s0)},
                {"lambda", report::fmt(lambda)},
                {"kappa", report::fmt(kappa)},
                {"seeds", std::to_string(seeds)},
                {"palettes", palettes_str},
                {"seed", std::to_string(seed)}});

  std::cout << "refine -> " << out_dir << " (" << results.size() << " runs, "
            << modes.size() << " modes)\n" << summary.to_string();
  return 0;
}

// --------------------------------------------------------------- report ----

int cmd_report(const std::string& sweep_csv, const std::string& scores_csv,
               const std::string& out_dir) {
  if (sweep_csv.empty() && scores_csv.empty())
    throw std::runtime_error("report: need --sweep-csv and/or --scores-csv");
  fs::create_directories(out_dir);

  if (!sweep_csv.empty()) {
    report::Csv csv = report::load_csv(sweep_csv);
    if (csv.rows.empty()) throw std::runtime_error("report: sweep CSV has no rows");
    int scale_col = -1, sat_col = -1;
    for (std::size_t i = 0; i < csv.header.size(); ++i) {
      if (csv.header[i] == "scale") scale_col = int(i);
      if (csv.header[i] == "mean_saturation") sat_col = int(i);
    }
    if (scale_col < 0 || sat_col < 0)
      throw std::runtime_error("report: sweep CSV needs scale,mean_saturation columns");

    std::map<double, std::pair<double, int>> by_scale;  // scale -> (sum, n)
    for (const auto& row : csv.rows) {
      auto& [sum, n] = by_scale[std::stod(row[std::size_t(scale_col)])];
      sum += std::stod(row[std::size_t(sat_col)]);
      ++n;
    }

    const int W = 480, H = 320, ml = 50, mb = 40, mt = 20, mr = 20;
    report::Svg svg(W, H);
    const double smin = by_scale.begin()->first, smax = by_scale.rbegin()->first;
    auto xmap = [&](double s) {
      return ml + (smax == smin ? 0.0 : (s - smin) / (smax - smin) * (W - ml - mr));
    };
    auto ymap = [&](double sat) { return H - mb - sat * (H - mt - mb); };
    svg.line(ml, H - mb, W - mr, H - mb);
    svg.line(ml, mt, ml, H - mb);
    std::vector<std::pair<double, double>> pts;
    for (const auto& [scale, agg] : by_scale)
      pts.emplace_back(xmap(scale), ymap(agg.first / agg.second));
    svg.polyline(pts, "#c0392b");
    for (const auto& pt : pts) svg.circle(pt.first, pt.second, 3, "#c0392b");
    for (const auto& [scale, agg] : by_scale)
      svg.text(xmap(scale), H - mb + 16, report::fmt(scale), 10, "middle");
    svg.text(W / 2.0, H - 6, "guidance scale", 11, "middle");
    svg.text(12, mt + 8, "mean saturation", 11);
    const std::string path = (fs::path(out_dir) / "saturation_vs_scale.svg").string();
    report::atomic_write(path, svg.finish());
    std::cout << "figure -> " << path << " (" << pts.size() << " points)\n";
  }

  if (!scores_csv.empty()) {
    report::Csv csv = report::load_csv(scores_csv);
    if (csv.rows.empty()) throw std::runtime_error("report: scores CSV has no rows");
    int cat_col = -1, score_col = -1;
    for (std::size_t i = 0; i < csv.header.size(); ++i) {
      if (csv.header[i] == "category") cat_col = int(i);
      if (csv.header[i] == "score") score_col = int(i);
    }
    if (cat_col < 0 || score_col < 0)
      throw std::runtime_error("report: scores CSV needs category,score columns");

    std::map<std::string, std::pair<double, int>> by_cat;
    for (const auto& row : csv.rows) {
      auto& [sum, n] = by_cat[row[std::size_t(cat_col)]];
      sum += std::stod(row[std::size_t(score_col)]);
      ++n;
    }
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (const auto& [cat, agg] : by_cat) {
      const double mean = agg.first / agg.second;
      lo = first ? std::min(0.0, mean) : std::min(lo, mean);
      hi = first ? std::max(0.0, mean) : std::max(hi, mean);
      first = false;
    }
    if (hi == lo) hi = lo + 1.0;

    const int W = 640, H = 360, ml = 50, mb = 90, mt = 20, mr = 20;
    report::Svg svg(W, H);
    svg.line(ml, H - mb, W - mr, H - mb);
    const double band = double(W - ml - mr) / double(by_cat.size());
    auto ymap = [&](double v) { return H - mb - (v - lo) / (hi - lo) * (H - mt - mb); };
    std::size_t i = 0;
    for (const auto& [cat, agg] : by_cat) {
      const double mean = agg.first / agg.second;
      const double x = ml + band * double(i) + band * 0.15;
      svg.rect(x, ymap(mean), band * 0.7, (H - mb) - ymap(mean), "#2980b9");
      svg.text(x + band * 0.35, H - mb + 14, cat.substr(0, 12), 9, "middle");
      ++i;
    }
    svg.text(12, mt + 8, "mean score", 11);
    const std::string path = (fs::path(out_dir) / "category_scores.svg").string();
    report::atomic_write(path, svg.finish());
    std::cout << "figure -> " << path << " (" << by_cat.size() << " bars)\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"color-fidelity laboratory: datasets, scorer, guidance refinement"};
  app.require_subcommand(1);

  try {
    // ---- build
    CommonArgs build_common;
    std::string b_out, b_mode = "analytic", b_gains, b_scales, b_denoiser;
    int b_groups = 120, b_image_size = 32;
    double b_split = dataset::kDefaultSplitFraction;
    auto* build = app.add_subcommand("build", "construct a fidelity-group dataset");
    add_common(build, build_common);
    build->add_option("--out", b_out, "output directory");
    build->add_option("--mode", b_mode, "analytic or diffusion");
    build->add_option("--groups", b_groups, "number of groups");
    build->add_option("--image-size", b_image_size, "square image size");
    build->add_option("--split", b_split, "train fraction");
    build->add_option("--gains", b_gains, "comma-separated analytic gains");
    build->add_option("--scales", b_scales, "comma-separated guidance scales");
    build->add_option("--denoiser", b_denoiser, "denoiser checkpoint (diffusion mode)");

    // ---- train
    auto* train = app.add_subcommand("train", "train the denoiser or the scorer");
    train->require_subcommand(1);

    CommonArgs td_common;
    std::string td_manifest, td_out = "denoiser.tdif", td_loss_csv;
    int td_epochs = 30, td_batch = 16, td_hidden = 96, td_embed = 16, td_steps = 50;
    double td_lr = 2e-3, td_cond_drop = 0.1;
    auto* train_d = train->add_subcommand("denoiser", "train the toy diffusion denoiser");
    add_common(train_d, td_common);
    train_d->add_option("--manifest", td_manifest, "dataset manifest path");
    train_d->add_option("--out", td_out, "checkpoint output path");
    train_d->add_option("--epochs", td_epochs);
    train_d->add_option("--batch", td_batch);
    train_d->add_option("--lr", td_lr);
    train_d->add_option("--cond-drop", td_cond_drop, "condition dropout probability");
    train_d->add_option("--hidden", td_hidden);
    train_d->add_option("--embed", td_embed);
    train_d->add_option("--steps", td_steps, "diffusion steps T");
    train_d->add_option("--loss-csv", td_loss_csv, "loss curve CSV path");

    CommonArgs ts_common;
    std::string ts_manifest, ts_out = "scorer.cfms", ts_loss = "softrank", ts_loss_csv;
    int ts_epochs = 20, ts_batch_groups = 32;
    double ts_lr = 1e-3, ts_tau = softrank::kDefaultTemperature;
    bool ts_visual_only = false;
    auto* train_s = train->add_subcommand("scorer", "train the color fidelity scorer");
    add_common(train_s, ts_common);
    train_s->add_option("--manifest", ts_manifest, "dataset manifest path");
    train_s->add_option("--out", ts_out, "checkpoint output path");
    train_s->add_option("--epochs", ts_epochs);
    train_s->add_option("--batch-groups", ts_batch_groups, "groups per SGD step");
    train_s->add_option("--lr", ts_lr);
    train_s->add_option("--tau", ts_tau, "softrank temperature");
    train_s->add_option("--loss", ts_loss, "softrank or pairwise");
    train_s->add_flag("--visual-only", ts_visual_only, "drop the condition token");
    train_s->add_option("--loss-csv", ts_loss_csv, "loss curve CSV path");

    // ---- eval
    CommonArgs ev_common;
    std::string ev_manifest, ev_scorer, ev_out = "metrics.csv", ev_split = "test";
    std::string ev_scores_csv, ev_denoiser, ev_sweep_csv, ev_sweep_scales;
    int ev_sweep_seeds = 8;
    auto* ev = app.add_subcommand("eval", "evaluate scorer accuracy/correlation or sweep saturation");
    add_common(ev, ev_common);
    ev->add_option("--manifest", ev_manifest, "dataset manifest path");
    ev->add_option("--scorer", ev_scorer, "scorer checkpoint");
    ev->add_option("--out", ev_out, "metrics CSV path");
    ev->add_option("--split", ev_split, "train or test");
    ev->add_option("--scores-csv", ev_scores_csv, "optional per-image score CSV");
    ev->add_option("--denoiser", ev_denoiser, "denoiser checkpoint for the sweep");
    ev->add_option("--sweep-csv", ev_sweep_csv, "saturation-vs-scale sweep CSV path");
    ev->add_option("--sweep-scales", ev_sweep_scales, "comma-separated guidance scales");
    ev->add_option("--sweep-seeds", ev_sweep_seeds, "seeds per palette for the sweep");

    // ---- refine
    CommonArgs rf_common;
    std::string rf_denoiser, rf_scorer, rf_out = "refine_out";
    std::string rf_modes = "baseline,temporal,spatial,full", rf_palettes;
    double rf_s0 = 15.0, rf_lambda = cfr::kDefaultLambda, rf_kappa = cfr::kDefaultKappa;
    int rf_seeds = 4;
    bool rf_save_images = false;
    auto* rf = app.add_subcommand("refine", "run guidance refinement and ablations");
    add_common(rf, rf_common);
    rf->add_option("--denoiser", rf_denoiser, "denoiser checkpoint");
    rf->add_option("--scorer", rf_scorer, "scorer checkpoint");
    rf->add_option("--out", rf_out, "output directory");
    rf->add_option("--modes", rf_modes, "comma list: baseline,temporal,spatial,full");
    rf->add_option("--s0", rf_s0, "base guidance scale");
    rf->add_option("--lambda", rf_lambda, "modulation strength in [0,1]");
    rf->add_option("--kappa", rf_kappa, "attention temperature");
    rf->add_option("--seeds", rf_seeds, "seeds per palette");
    rf->add_option("--palettes", rf_palettes, "comma list of palette ids");
    rf->add_flag("--save-images", rf_save_images, "write refined PNGs");

    // ---- report
    std::string rp_sweep, rp_scores, rp_out = "figures";
    auto* rp = app.add_subcommand("report", "emit SVG figures from CSV outputs");
    rp->add_option("--sweep-csv", rp_sweep, "sweep CSV from eval");
    rp->add_option("--scores-csv", rp_scores, "per-image score CSV from eval");
    rp->add_option("--out", rp_out, "output directory");

    // ---- score
    std::string sc_scorer, sc_image;
    int sc_palette = 0;
    auto* sc = app.add_subcommand("score", "print the fidelity score of one PNG");
    sc->add_option("--scorer", sc_scorer, "scorer checkpoint")->required();
    sc->add_option("--image", sc_image, "PNG path")->required();
    sc->add_option("--palette", sc_palette, "palette id of the condition");

    CLI11_PARSE(app, argc, argv);

    if (build->parsed()) {
      std::set<std::string> cli_set;
      for (const char* name : {"--mode", "--groups", "--image-size", "--split"})
        if (build->count(name)) cli_set.insert(std::string(name).substr(2) == "image-size"
                                                   ? "image_size"
                                                   : std::string(name).substr(2));
      return cmd_build(build_common, b_out, b_mode, b_groups, b_image_size, b_split, b_gains,
                       b_scales, b_denoiser, cli_set);
    }
    if (train->parsed()) {
      auto* sub = train->get_subcommands().front();
      if (sub->get_name() == "denoiser")
        return cmd_train_denoiser(td_common, td_manifest, td_out, td_epochs, td_batch, td_lr,
                                  td_cond_drop, td_hidden, td_embed, td_steps, td_loss_csv);
      return cmd_train_scorer(ts_common, ts_manifest, ts_out, ts_epochs, ts_batch_groups, ts_lr,
                              ts_tau, ts_loss, ts_visual_only, ts_loss_csv);
    }
    if (ev->parsed())
      return cmd_eval(ev_common, ev_manifest, ev_scorer, ev_out, ev_split, ev_scores_csv,
                      ev_denoiser, ev_sweep_csv, ev_sweep_scales, ev_sweep_seeds);
    if (rf->parsed())
      return cmd_refine(rf_common, rf_denoiser, rf_scorer, rf_out, rf_modes, rf_s0, rf_lambda,
                        rf_kappa, rf_seeds, rf_palettes, rf_save_images);
    if (rp->parsed()) return cmd_report(rp_sweep, rp_scores, rp_out);
    if (sc->parsed()) {
      const scorer::ScorerParams params = scorer::load_scorer(sc_scorer);
      const RgbImage img = png::load_image(sc_image);
      std::printf("%.10g\n", scorer::score_image(params, img, {sc_palette}));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
