#pragma once

#include <string>
#include <vector>

#include "fidlab/checkpoint.hpp"
#include "fidlab/diffusion.hpp"
#include "fidlab/image.hpp"
#include "fidlab/rng.hpp"
#include "fidlab/softrank.hpp"
#include "fidlab/tape.hpp"

namespace fidlab::scorer {

struct ScorerConfig {
  int image_size = 32;
  int patch = 4;
  int dim = 32;      // token dimension d
  int blocks = 2;    // self-attention blocks
  int num_classes = 8;
  bool visual_only = false;  // ablation: drop the condition token

  int visual_tokens() const { return (image_size / patch) * (image_size / patch); }
  int text_tokens() const { return visual_only ? 1 : 2; }  // condition + reward
  int total_tokens() const { return visual_tokens() + text_tokens(); }
  int patch_dim() const { return patch * patch * 3; }
};

struct AttentionBlockParams {
  num::Tensor wq, wk, wv;  // d x d
  num::Tensor w1, b1, w2;  // feed-forward d x d, 1 x d, d x d
};

struct ScorerParams {
  ScorerConfig config;
  num::Tensor w_patch;     // patch_dim x d
  num::Tensor pos_emb;     // M x d
  num::Tensor cond_table;  // C x d
  num::Tensor reward_emb;  // 1 x d
  std::vector<AttentionBlockParams> blocks;
  num::Tensor wh1, bh1;    // head: d x d, 1 x d
  num::Tensor wh2, bh2;    // d x 1, 1 x 1

  static ScorerParams init(const ScorerConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    auto randn = [&](std::size_t r, std::size_t c, double sd) {
      num::Tensor t({r, c});
      for (double& v : t.data()) v = rng.normal() * sd;
      return t;
    };
    const auto d = std::size_t(cfg.dim);
    ScorerParams p;
    p.config = cfg;
    p.w_patch = randn(std::size_t(cfg.patch_dim()), d, 1.0 / std::sqrt(double(cfg.patch_dim())));
    p.pos_emb = randn(std::size_t(cfg.visual_tokens()), d, 0.1);
    p.cond_table = randn(std::size_t(cfg.num_classes), d, 0.3);
    p.reward_emb = randn(1, d, 0.3);
    const double block_sd = 0.5 / std::sqrt(double(d));
    for (int i = 0; i < cfg.blocks; ++i) {
      AttentionBlockParams b;
      b.wq = randn(d, d, block_sd);
      b.wk = randn(d, d, block_sd);
      b.wv = randn(d, d, block_sd);
      b.w1 = randn(d, d, block_sd);
      b.b1 = num::Tensor({1, d});
      b.w2 = randn(d, d, block_sd);
      p.blocks.push_back(std::move(b));
    }
    p.wh1 = randn(d, d, block_sd);
    p.bh1 = num::Tensor({1, d});
    p.wh2 = randn(d, 1, 1.0 / std::sqrt(double(d)));
    p.bh2 = num::Tensor({1, 1});
    return p;
  }

  static ScorerParams zeros(const ScorerConfig& cfg) {
    ScorerParams p = init(cfg, 0);
    for (auto* t : p.all())
      for (double& v : t->data()) v = 0.0;
    return p;
  }

  std::vector<num::Tensor*> all() {
    std::vector<num::Tensor*> out{&w_patch, &pos_emb, &cond_table, &reward_emb};
    for (auto& b : blocks) {
      out.push_back(&b.wq);
      out.push_back(&b.wk);
      out.push_back(&b.wv);
      out.push_back(&b.w1);
      out.push_back(&b.b1);
      out.push_back(&b.w2);
    }
    out.push_back(&wh1);
    out.push_back(&bh1);
    out.push_back(&wh2);
    out.push_back(&bh2);
    return out;
  }
  std::vector<const num::Tensor*> all() const {
    std::vector<const num::Tensor*> out{&w_patch, &pos_emb, &cond_table, &reward_emb};
    for (const auto& b : blocks) {
      out.push_back(&b.wq);
      out.push_back(&b.wk);
      out.push_back(&b.wv);
      out.push_back(&b.w1);
      out.push_back(&b.b1);
      out.push_back(&b.w2);
    }
    out.push_back(&wh1);
    out.push_back(&bh1);
    out.push_back(&wh2);
    out.push_back(&bh2);
    return out;
  }
};

// Image as a patch matrix: one row per patch, row-major over the patch grid.
inline num::Tensor patchify(const RgbImage& img, int patch) {
  if (img.height % patch != 0 || img.width % patch != 0)
    throw std::invalid_argument("patchify: image dims must be divisible by patch size");
  const int gh = img.height / patch, gw = img.width / patch;
  num::Tensor out({std::size_t(gh) * gw, std::size_t(patch) * patch * 3});
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) {
      const std::size_t row = std::size_t(py) * gw + px;
      std::size_t col = 0;
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx)
          for (int c = 0; c < 3; ++c)
            out.at(row, col++) = img.at(py * patch + dy, px * patch + dx, c);
    }
  return out;
}

struct ScorerLeaves {
  num::Tape::Id w_patch, pos_emb, cond_table, reward_emb;
  struct Block {
    num::Tape::Id wq, wk, wv, w1, b1, w2;
  };
  std::vector<Block> blocks;
  num::Tape::Id wh1, bh1, wh2, bh2;

  std::vector<num::Tape::Id> ordered() const {
    std::vector<num::Tape::Id> out{w_patch, pos_emb, cond_table, reward_emb};
    for (const Block& b : blocks) {
      out.push_back(b.wq);
      out.push_back(b.wk);
      out.push_back(b.wv);
      out.push_back(b.w1);
      out.push_back(b.b1);
      out.push_back(b.w2);
    }
    out.push_back(wh1);
    out.push_back(bh1);
    out.push_back(wh2);
    out.push_back(bh2);
    return out;
  }
};

inline ScorerLeaves leaf_scorer(num::Tape& tape, const ScorerParams& p, bool requires_grad) {
  ScorerLeaves l;
  l.w_patch = tape.leaf(p.w_patch, requires_grad);
  l.pos_emb = tape.leaf(p.pos_emb, requires_grad);
  l.cond_table = tape.leaf(p.cond_table, requires_grad);
  l.reward_emb = tape.leaf(p.reward_emb, requires_grad);
  for (const auto& b : p.blocks) {
    ScorerLeaves::Block bl;
    bl.wq = tape.leaf(b.wq, requires_grad);
    bl.wk = tape.leaf(b.wk, requires_grad);
    bl.wv = tape.leaf(b.wv, requires_grad);
    bl.w1 = tape.leaf(b.w1, requires_grad);
    bl.b1 = tape.leaf(b.b1, requires_grad);
    bl.w2 = tape.leaf(b.w2, requires_grad);
    l.blocks.push_back(bl);
  }
  l.wh1 = tape.leaf(p.wh1, requires_grad);
  l.bh1 = tape.leaf(p.bh1, requires_grad);
  l.wh2 = tape.leaf(p.wh2, requires_grad);
  l.bh2 = tape.leaf(p.bh2, requires_grad);
  return l;
}

// Joint token sequence after the attention blocks: visual patches first,
// then (condition,) reward. Returns the (M+N) x d token matrix id.
inline num::Tape::Id tokens_on_tape(num::Tape& tape, const ScorerConfig& cfg,
                                    const ScorerLeaves& l, const RgbImage& img, int palette_id) {
  if (img.height != cfg.image_size || img.width != cfg.image_size)
    throw std::invalid_argument("scorer: image size mismatch");
  auto patches = tape.leaf(patchify(img, cfg.patch));
  auto visual = tape.add(tape.matmul(patches, l.w_patch), l.pos_emb);

  std::vector<num::Tape::Id> parts{visual};
  if (!cfg.visual_only) {
    if (palette_id < 0 || palette_id >= cfg.num_classes)
      throw std::invalid_argument("scorer: palette_id out of range");
    parts.push_back(tape.gather_rows(l.cond_table, {std::size_t(palette_id)}));
  }
  parts.push_back(l.reward_emb);
  auto x = tape.concat_rows(std::span<const num::Tape::Id>(parts));

  const double temp = std::sqrt(double(cfg.dim));
  for (const auto& b : l.blocks) {
    auto q = tape.matmul(x, b.wq);
    auto k = tape.matmul(x, b.wk);
    auto v = tape.matmul(x, b.wv);
    auto attn = tape.softmax_rows(tape.matmul(q, tape.transpose(k)), temp);
    x = tape.add(x, tape.matmul(attn, v));
    auto hidden = tape.tanh(tape.add_rowvec(tape.matmul(x, b.w1), b.b1));
    x = tape.add(x, tape.matmul(hidden, b.w2));
  }
  return x;
}

// Per-token logits from the MLP head; the fidelity score is the logit at the
// reward token (last row).
inline num::Tape::Id logits_on_tape(num::Tape& tape, const ScorerLeaves& l, num::Tape::Id tokens) {
  auto hidden = tape.tanh(tape.add_rowvec(tape.matmul(tokens, l.wh1), l.bh1));
  return tape.add_rowvec(tape.matmul(hidden, l.wh2), l.bh2);
}

inline num::Tape::Id score_on_tape(num::Tape& tape, const ScorerConfig& cfg,
                                   const ScorerLeaves& l, const RgbImage& img, int palette_id) {
  auto tokens = tokens_on_tape(tape, cfg, l, img, palette_id);
  auto logits = logits_on_tape(tape, l, tokens);
  const std::size_t reward = std::size_t(cfg.total_tokens()) - 1;
  return tape.slice_rows(logits, reward, reward + 1);
}

struct TokenSequence {
  num::Tensor visual;  // M x d
  num::Tensor text;    // N x d, reward token last
  int reward_index;    // position in the concatenated sequence
};

inline TokenSequence encode(const ScorerParams& p, const RgbImage& img, diffusion::Condition cond) {
  num::Tape tape;
  ScorerLeaves l = leaf_scorer(tape, p, false);
  const num::Tensor& x = tape.val(tokens_on_tape(tape, p.config, l, img, cond.palette_id));
  const std::size_t m = std::size_t(p.config.visual_tokens());
  const std::size_t n = std::size_t(p.config.text_tokens());
  const std::size_t d = std::size_t(p.config.dim);
  TokenSequence seq;
  seq.visual = num::Tensor({m, d});
  seq.text = num::Tensor({n, d});
  std::copy(x.data().begin(), x.data().begin() + m * d, seq.visual.data().begin());
  std::copy(x.data().begin() + m * d, x.data().end(), seq.text.data().begin());
  seq.reward_index = int(m + n) - 1;
  return seq;
}

inline double score(const ScorerParams& p, const TokenSequence& seq) {
  // head applied to every token; only the reward logit is returned
  const num::Tensor& t = seq.text;
  const std::size_t last = t.rows() - 1;
  const std::size_t d = t.cols();
  double out = p.bh2[0];
  for (std::size_t j = 0; j < d; ++j) {
    double h = p.bh1.at(0, j);
    for (std::size_t k = 0; k < d; ++k) h += t.at(last, k) * p.wh1.at(k, j);
    out += std::tanh(h) * p.wh2.at(j, 0);
  }
  return out;
}

inline double score_image(const ScorerParams& p, const RgbImage& img, diffusion::Condition cond) {
  return score(p, encode(p, img, cond));
}

// Row-normalized embeddings for attention extraction; zero rows are kept as
// zero and flagged.
struct NormalizedEmbeddings {
  num::Tensor text;    // N x d
  num::Tensor visual;  // M x d
  bool had_zero_row = false;
};

inline num::Tensor normalize_rows(const num::Tensor& x, bool* had_zero) {
  num::Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) norm += x.at(i, j) * x.at(i, j);
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      if (had_zero) *had_zero = true;
      continue;
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) /= norm;
  }
  return out;
}

inline NormalizedEmbeddings export_embeddings(const TokenSequence& seq) {
  NormalizedEmbeddings e;
  e.text = normalize_rows(seq.text, &e.had_zero_row);
  e.visual = normalize_rows(seq.visual, &e.had_zero_row);
  return e;
}

// One training group: images in rank order (reference first).
struct GroupSample {
  std::vector<RgbImage> images;
  int palette_id = 0;
};

enum class LossKind { Softrank, Pairwise };

inline LossKind parse_loss(const std::string& s) {
  if (s == "softrank") return LossKind::Softrank;
  if (s == "pairwise") return LossKind::Pairwise;
  throw std::invalid_argument("unknown loss: " + s);
}

struct TrainScorerOptions {
  double tau = softrank::kDefaultTemperature;
  double lr = 1e-3;
  int epochs = 20;
  int batch_groups = 32;
  LossKind loss = LossKind::Softrank;
  std::uint64_t seed = 0;
};

// Group-wise ordinal training: scores of all K images are stacked and the
// rank loss backpropagated; gradients accumulate over batch_groups groups
// per SGD step.
inline ScorerParams train_scorer(const ScorerConfig& cfg, const std::vector<GroupSample>& groups,
                                 const TrainScorerOptions& opt,
                                 std::vector<double>* loss_curve = nullptr) {
  if (groups.empty()) throw std::invalid_argument("train_scorer: no training groups");
  for (const GroupSample& g : groups)
    if (g.images.size() < 2) throw std::invalid_argument("train_scorer: group needs K >= 2 images");

  ScorerParams params = ScorerParams::init(cfg, opt.seed);
  Rng rng(Rng::fork(opt.seed, 2).next_u64());

  std::vector<std::size_t> order(groups.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto tensors = params.all();
  std::vector<num::Tensor> acc(tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) acc[i] = num::Tensor(tensors[i]->shape());

  num::Tape tape;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t in_batch = 0;
    auto apply_step = [&]() {
      if (in_batch == 0) return;
      for (std::size_t i = 0; i < tensors.size(); ++i) {
        num::Tensor& w = *tensors[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
          w[j] -= opt.lr * acc[i][j] / double(in_batch);
          acc[i][j] = 0.0;
        }
      }
      in_batch = 0;
    };

    for (std::size_t gi = 0; gi < order.size(); ++gi) {
      const GroupSample& group = groups[order[gi]];
      const std::size_t k = group.images.size();

      tape.clear();
      ScorerLeaves leaves = leaf_scorer(tape, params, true);
      std::vector<num::Tape::Id> scores;
      scores.reserve(k);
      for (const RgbImage& img : group.images)
        scores.push_back(score_on_tape(tape, cfg, leaves, img, group.palette_id));
      auto stacked = tape.concat_rows(std::span<const num::Tape::Id>(scores));

      num::Tape::Id loss;
      if (opt.loss == LossKind::Softrank) {
        loss = softrank::loss_on_tape(tape, stacked, opt.tau);
      } else {
        // binary pairwise objective over adjacent ranks: log(1 + exp(-(r_i - r_j)))
        std::vector<num::Tape::Id> terms;
        for (std::size_t i = 0; i + 1 < k; ++i) {
          auto better = tape.slice_rows(stacked, i, i + 1);
          auto worse = tape.slice_rows(stacked, i + 1, i + 2);
          terms.push_back(tape.softplus(tape.sub(worse, better)));
        }
        loss = tape.scale(tape.sum(tape.concat_rows(std::span<const num::Tape::Id>(terms))),
                          1.0 / double(terms.size()));
      }
      tape.backward(loss);
      epoch_loss += tape.scalar(loss);

      auto ids = leaves.ordered();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const num::Tensor& g = tape.grad(ids[i]);
        for (std::size_t j = 0; j < g.size(); ++j) acc[i][j] += g[j];
      }
      if (++in_batch == std::size_t(opt.batch_groups)) apply_step();
    }
    apply_step();
    if (loss_curve) loss_curve->push_back(epoch_loss / double(groups.size()));
  }
  return params;
}

inline constexpr char kScorerMagic[] = "CFMS";

inline ckpt::Checkpoint to_checkpoint(const ScorerParams& p) {
  ckpt::Checkpoint c;
  c.magic = kScorerMagic;
  c.meta = {{"image_size", p.config.image_size}, {"patch", p.config.patch},
            {"dim", p.config.dim},               {"blocks", p.config.blocks},
            {"num_classes", p.config.num_classes}, {"visual_only", p.config.visual_only ? 1 : 0}};
  c.tensors.emplace_back("w_patch", p.w_patch);
  c.tensors.emplace_back("pos_emb", p.pos_emb);
  c.tensors.emplace_back("cond_table", p.cond_table);
  c.tensors.emplace_back("reward_emb", p.reward_emb);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i) + ".";
    c.tensors.emplace_back(prefix + "wq", p.blocks[i].wq);
    c.tensors.emplace_back(prefix + "wk", p.blocks[i].wk);
    c.tensors.emplace_back(prefix + "wv", p.blocks[i].wv);
    c.tensors.emplace_back(prefix + "w1", p.blocks[i].w1);
    c.tensors.emplace_back(prefix + "b1", p.blocks[i].b1);
    c.tensors.emplace_back(prefix + "w2", p.blocks[i].w2);
  }
  c.tensors.emplace_back("wh1", p.wh1);
  c.tensors.emplace_back("bh1", p.bh1);
  c.tensors.emplace_back("wh2", p.wh2);
  c.tensors.emplace_back("bh2", p.bh2);
  return c;
}

inline ScorerParams from_checkpoint(const ckpt::Checkpoint& c) {
  ScorerConfig cfg;
  cfg.image_size = int(c.meta_value("image_size"));
  cfg.patch = int(c.meta_value("patch"));
  cfg.dim = int(c.meta_value("dim"));
  cfg.blocks = int(c.meta_value("blocks"));
  cfg.num_classes = int(c.meta_value("num_classes"));
  cfg.visual_only = c.meta_value("visual_only") != 0;
  ScorerParams p = ScorerParams::zeros(cfg);
  p.w_patch = c.tensor("w_patch");
  p.pos_emb = c.tensor("pos_emb");
  p.cond_table = c.tensor("cond_table");
  p.reward_emb = c.tensor("reward_emb");
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i) + ".";
    p.blocks[i].wq = c.tensor(prefix + "wq");
    p.blocks[i].wk = c.tensor(prefix + "wk");
    p.blocks[i].wv = c.tensor(prefix + "wv");
    p.blocks[i].w1 = c.tensor(prefix + "w1");
    p.blocks[i].b1 = c.tensor(prefix + "b1");
    p.blocks[i].w2 = c.tensor(prefix + "w2");
  }
  p.wh1 = c.tensor("wh1");
  p.bh1 = c.tensor("bh1");
  p.wh2 = c.tensor("wh2");
  p.bh2 = c.tensor("bh2");
  return p;
}

inline void save_scorer(const std::string& path, const ScorerParams& p) {
  ckpt::save(path, to_checkpoint(p));
}

inline ScorerParams load_scorer(const std::string& path) {
  return from_checkpoint(ckpt::load(path, kScorerMagic));
}

}  // namespace fidlab::scorer
