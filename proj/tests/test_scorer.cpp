#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "fidlab/dataset.hpp"
#include "fidlab/eval.hpp"
#include "fidlab/scorer.hpp"

using namespace fidlab;
using namespace fidlab::scorer;

namespace {

RgbImage random_image(Rng& rng, int size) {
  RgbImage img(size, size);
  for (double& v : img.data) v = rng.uniform01();
  return img;
}

std::vector<GroupSample> analytic_groups(int n, int image_size, std::uint64_t seed) {
  std::vector<GroupSample> out;
  for (int i = 0; i < n; ++i) {
    const int palette = i % palette::kNumPalettes;
    GroupSample g;
    g.palette_id = palette;
    RgbImage ref = dataset::make_reference(palette, image_size, Rng::fork(seed, i).next_u64());
    g.images.push_back(ref);
    for (const RgbImage& v : dataset::synth_variants_analytic(ref, dataset::kDefaultGains))
      g.images.push_back(v);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace

TEST_CASE("encode shapes and determinism", "[scorer]") {
  ScorerConfig cfg;  // 32x32, patch 4, d=32, 2 blocks
  auto p = ScorerParams::init(cfg, 42);
  Rng rng(1);
  RgbImage img = random_image(rng, 32);

  auto seq = encode(p, img, {3});
  CHECK(seq.visual.rows() == 64);
  CHECK(seq.visual.cols() == 32);
  CHECK(seq.text.rows() == 2);
  CHECK(seq.reward_index == 65);

  auto seq2 = encode(p, img, {3});
  CHECK(seq.visual.data() == seq2.visual.data());
  CHECK(seq.text.data() == seq2.text.data());

  RgbImage other = random_image(rng, 32);
  auto seq3 = encode(p, other, {3});
  CHECK(seq.visual.data() != seq3.visual.data());

  RgbImage bad(30, 30);
  CHECK_THROWS_AS(encode(p, bad, {3}), std::invalid_argument);
}

TEST_CASE("score basics", "[scorer]") {
  ScorerConfig cfg;
  Rng rng(2);

  SECTION("zero head scores zero") {
    auto p = ScorerParams::init(cfg, 7);
    for (auto* t : {&p.wh1, &p.bh1, &p.wh2, &p.bh2})
      for (double& v : t->data()) v = 0.0;
    for (int i = 0; i < 5; ++i)
      CHECK(score_image(p, random_image(rng, 32), {i % 8}) == 0.0);
  }
  SECTION("scores stay finite over random inputs") {
    for (int trial = 0; trial < 20; ++trial) {
      auto p = ScorerParams::init(cfg, 100 + trial);
      for (int i = 0; i < 50; ++i)
        REQUIRE(std::isfinite(score_image(p, random_image(rng, 32), {i % 8})));
    }
  }
  SECTION("plain head agrees with tape head") {
    auto p = ScorerParams::init(cfg, 55);
    RgbImage img = random_image(rng, 32);
    const double plain = score_image(p, img, {4});
    num::Tape tape;
    auto leaves = leaf_scorer(tape, p, false);
    const double taped = tape.scalar(score_on_tape(tape, cfg, leaves, img, 4));
    REQUIRE(plain == Catch::Approx(taped).margin(1e-12));
  }
}

TEST_CASE("export embeddings are row normalized", "[scorer]") {
  ScorerConfig cfg;
  auto p = ScorerParams::init(cfg, 3);
  Rng rng(4);
  auto seq = encode(p, random_image(rng, 32), {1});
  auto emb = export_embeddings(seq);

  for (const num::Tensor* t : {&emb.text, &emb.visual})
    for (std::size_t i = 0; i < t->rows(); ++i) {
      double norm = 0.0;
      for (std::size_t j = 0; j < t->cols(); ++j) norm += t->at(i, j) * t->at(i, j);
      REQUIRE(std::sqrt(norm) == Catch::Approx(1.0).margin(1e-12));
    }
  CHECK_FALSE(emb.had_zero_row);

  // idempotent
  TokenSequence again{emb.visual, emb.text, seq.reward_index};
  auto emb2 = export_embeddings(again);
  for (std::size_t i = 0; i < emb.visual.size(); ++i)
    REQUIRE(emb2.visual[i] == Catch::Approx(emb.visual[i]).margin(1e-12));

  // zero rows stay zero and get flagged
  TokenSequence zeroed = seq;
  for (std::size_t j = 0; j < zeroed.text.cols(); ++j) zeroed.text.at(0, j) = 0.0;
  auto emb3 = export_embeddings(zeroed);
  CHECK(emb3.had_zero_row);
  for (std::size_t j = 0; j < emb3.text.cols(); ++j) CHECK(emb3.text.at(0, j) == 0.0);
}

TEST_CASE("scorer gradient check", "[scorer]") {
  // tiny configuration keeps the finite-difference sweep fast
  ScorerConfig cfg;
  cfg.image_size = 8;
  cfg.patch = 4;
  cfg.dim = 6;
  cfg.blocks = 1;
  Rng rng(9);
  RgbImage img = random_image(rng, 8);
  auto p = ScorerParams::init(cfg, 31);

  auto tensors = p.all();
  std::vector<num::Tensor> values;
  for (const num::Tensor* t : tensors) values.push_back(*t);

  auto build = [&](num::Tape& tape, const std::vector<num::Tape::Id>& ids) {
    ScorerLeaves l;
    std::size_t k = 0;
    l.w_patch = ids[k++];
    l.pos_emb = ids[k++];
    l.cond_table = ids[k++];
    l.reward_emb = ids[k++];
    for (int b = 0; b < cfg.blocks; ++b) {
      ScorerLeaves::Block bl;
      bl.wq = ids[k++];
      bl.wk = ids[k++];
      bl.wv = ids[k++];
      bl.w1 = ids[k++];
      bl.b1 = ids[k++];
      bl.w2 = ids[k++];
      l.blocks.push_back(bl);
    }
    l.wh1 = ids[k++];
    l.bh1 = ids[k++];
    l.wh2 = ids[k++];
    l.bh2 = ids[k++];
    std::vector<num::Tape::Id> scores;
    for (int i = 0; i < 3; ++i) {
      RgbImage distorted = img;
      for (double& v : distorted.data) v = std::clamp(v * (1.0 + 0.2 * i), 0.0, 1.0);
      scores.push_back(score_on_tape(tape, cfg, l, distorted, 2));
    }
    auto stacked = tape.concat_rows(std::span<const num::Tape::Id>(scores));
    return softrank::loss_on_tape(tape, stacked, 0.1);
  };

  REQUIRE(num::grad_check(build, values, 1e-5) < 1e-5);
}

TEST_CASE("training improves the group loss", "[scorer]") {
  ScorerConfig cfg;
  auto groups = analytic_groups(50, 32, 77);

  TrainScorerOptions opt;
  opt.epochs = 20;
  opt.batch_groups = 8;
  opt.lr = 1e-3;
  opt.seed = 5;

  std::vector<double> losses;
  auto params = train_scorer(cfg, groups, opt, &losses);
  REQUIRE(losses.size() == 20);
  REQUIRE(losses.back() < 0.25 * losses.front());

  // stateless inference: scoring in any order gives the same numbers
  const double s1 = score_image(params, groups[0].images[0], {groups[0].palette_id});
  (void)score_image(params, groups[1].images[3], {groups[1].palette_id});
  const double s1_again = score_image(params, groups[0].images[0], {groups[0].palette_id});
  REQUIRE(s1 == s1_again);
}

TEST_CASE("visual-only ablation trains and scores", "[scorer]") {
  ScorerConfig cfg;
  cfg.visual_only = true;
  auto groups = analytic_groups(8, 32, 123);
  TrainScorerOptions opt;
  opt.epochs = 2;
  opt.batch_groups = 4;
  opt.seed = 6;
  auto params = train_scorer(cfg, groups, opt);
  auto seq = encode(params, groups[0].images[0], {groups[0].palette_id});
  CHECK(seq.text.rows() == 1);  // reward token only
  CHECK(std::isfinite(score(params, seq)));
}

TEST_CASE("pairwise ablation trains", "[scorer]") {
  ScorerConfig cfg;
  auto groups = analytic_groups(8, 32, 321);
  TrainScorerOptions opt;
  opt.epochs = 2;
  opt.batch_groups = 4;
  opt.loss = LossKind::Pairwise;
  opt.seed = 6;
  std::vector<double> losses;
  auto params = train_scorer(cfg, groups, opt, &losses);
  REQUIRE(losses.size() == 2);
  CHECK(losses[1] < losses[0]);
}

TEST_CASE("training is deterministic in the seed", "[scorer]") {
  ScorerConfig cfg;
  auto groups = analytic_groups(6, 32, 9);
  TrainScorerOptions opt;
  opt.epochs = 2;
  opt.batch_groups = 3;
  opt.seed = 31;
  auto a = train_scorer(cfg, groups, opt);
  auto b = train_scorer(cfg, groups, opt);
  auto ta = a.all();
  auto tb = b.all();
  for (std::size_t k = 0; k < ta.size(); ++k) REQUIRE(ta[k]->data() == tb[k]->data());
}

TEST_CASE("scorer checkpoint round trip", "[scorer]") {
  ScorerConfig cfg;
  cfg.visual_only = false;
  auto p = ScorerParams::init(cfg, 11);
  auto dir = std::filesystem::temp_directory_path() / "fidlab_test_cfms";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "scorer.cfms").string();
  save_scorer(path, p);
  auto q = load_scorer(path);
  auto tp = p.all();
  auto tq = q.all();
  REQUIRE(tp.size() == tq.size());
  for (std::size_t k = 0; k < tp.size(); ++k) REQUIRE(tp[k]->data() == tq[k]->data());
  CHECK(q.config.visual_only == false);
}

TEST_CASE("oracle and random scorers plumb through evaluation", "[scorer]") {
  auto groups_raw = analytic_groups(10, 16, 55);
  std::vector<eval::EvalGroup> groups;
  for (auto& g : groups_raw) groups.push_back({g.images, g.palette_id});

  // oracle: recover rank from measured saturation (analytic mode makes this exact)
  auto oracle = [](const RgbImage& img, int) {
    return -color::compute_stats(img).mean_saturation;
  };
  auto r = eval::evaluate_groups(groups, oracle);
  CHECK(r.syn_pairs_accuracy == 1.0);
  CHECK(r.real_syn_accuracy == 1.0);
  CHECK(r.spearman > 0.99);

  Rng rng(6);
  auto random_scorer = [&](const RgbImage&, int) { return rng.normal(); };
  auto rr = eval::evaluate_groups(groups, random_scorer);
  CHECK(rr.syn_pairs_accuracy > 0.2);
  CHECK(rr.syn_pairs_accuracy < 0.8);

  // pure plumb-through: constant images whose first channel encodes the rank
  std::vector<eval::EvalGroup> coded;
  for (int g = 0; g < 5; ++g) {
    eval::EvalGroup eg;
    eg.palette_id = 0;
    for (int k = 1; k <= 7; ++k) {
      RgbImage img(4, 4);
      for (double& v : img.data) v = k / 10.0;
      eg.images.push_back(img);
    }
    coded.push_back(std::move(eg));
  }
  auto perfect = eval::evaluate_groups(coded, [](const RgbImage& img, int) {
    return 1.0 - img.data[0];  // ground-truth rank, negated into a score
  });
  CHECK(perfect.syn_pairs_accuracy == 1.0);
  CHECK(perfect.real_syn_accuracy == 1.0);
  CHECK(perfect.spearman == Catch::Approx(1.0).margin(1e-12));
  CHECK(perfect.kendall == Catch::Approx(1.0).margin(1e-12));
}
