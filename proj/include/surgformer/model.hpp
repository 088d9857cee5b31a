#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "surgformer/autodiff.hpp"
#include "surgformer/hierarchy.hpp"
#include "surgformer/rng.hpp"
#include "surgformer/types.hpp"

namespace surgformer {

struct ModelConfig {
  int levels = 3;           // pooling transitions; levels+1 resolutions
  int width = 64;           // node channel width D
  int heads = 4;
  int ff_hidden = 128;
  int input_dim = 7;        // [position | tool signal | bc flag]
  int cut_embed_dim = 8;
  bool cut_enabled = false;
  std::vector<double> level_ratios = {0.25, 0.25, 0.25};
  std::vector<int> global_levels = {2, 3};  // levels running dense attention
  double ln_eps = 1e-5;
  double leaky_slope = 0.2;
  int blocks_per_level = 1;
  // ablation switches
  bool local_branch = true;
  bool global_branch = true;
  bool ff_branch = true;
  bool uniform_gate = false;  // mix branches 1/B instead of learned gates

  int raw_width() const { return input_dim + (cut_enabled ? cut_embed_dim : 0); }
  int head_dim() const { return width / heads; }

  bool global_at(int level) const {
    return global_branch && std::find(global_levels.begin(), global_levels.end(),
                                      level) != global_levels.end();
  }

  int branches_at(int level) const {
    return (local_branch ? 1 : 0) + (global_at(level) ? 1 : 0) + (ff_branch ? 1 : 0);
  }

  void validate() const {
    if (levels < 1) throw std::invalid_argument("config: levels must be >= 1");
    if (width < 1 || heads < 1 || width % heads != 0)
      throw std::invalid_argument("config: width must be a positive multiple of heads");
    if (ff_hidden < 1) throw std::invalid_argument("config: ff_hidden must be >= 1");
    if (input_dim < 1) throw std::invalid_argument("config: input_dim must be >= 1");
    if (cut_enabled && cut_embed_dim < 1)
      throw std::invalid_argument("config: cut_embed_dim must be >= 1");
    if (static_cast<int>(level_ratios.size()) != levels)
      throw std::invalid_argument("config: need one ratio per pooling transition");
    for (double r : level_ratios)
      if (!(r > 0.0 && r <= 1.0))
        throw std::invalid_argument("config: ratios must lie in (0, 1]");
    for (int g : global_levels)
      if (g < 0 || g > levels)
        throw std::invalid_argument("config: global level outside [0, levels]");
    if (blocks_per_level < 1)
      throw std::invalid_argument("config: blocks_per_level must be >= 1");
    for (int l = 0; l <= levels; ++l)
      if (branches_at(l) < 1)
        throw std::invalid_argument("config: every level needs at least one branch");
  }
};

enum class ParamKind { Weight, Bias, LayerNormGain, Embedding };

/// Walks every parameter tensor in canonical order. The same walk drives
/// initialization, counting and checkpoint validation.
inline void for_each_param(
    const ModelConfig& cfg,
    const std::function<void(const std::string&, int rows, int cols, ParamKind)>& fn) {
  const int d = cfg.width, dh = cfg.ff_hidden, hd = cfg.head_dim();

  fn("adapter.w1", cfg.raw_width(), d, ParamKind::Weight);
  fn("adapter.b1", 1, d, ParamKind::Bias);
  fn("adapter.w2", d, d, ParamKind::Weight);
  fn("adapter.b2", 1, d, ParamKind::Bias);
  if (cfg.cut_enabled) fn("cut_emb.table", 2, cfg.cut_embed_dim, ParamKind::Embedding);

  auto block = [&](const std::string& prefix, int level) {
    fn(prefix + "ln.gain", 1, d, ParamKind::LayerNormGain);
    fn(prefix + "ln.bias", 1, d, ParamKind::Bias);
    if (cfg.local_branch) {
      fn(prefix + "local.proj", d, d, ParamKind::Weight);
      fn(prefix + "local.att_src", hd, cfg.heads, ParamKind::Weight);
      fn(prefix + "local.att_dst", hd, cfg.heads, ParamKind::Weight);
    }
    if (cfg.global_at(level)) {
      fn(prefix + "global.wq", d, d, ParamKind::Weight);
      fn(prefix + "global.wk", d, d, ParamKind::Weight);
      fn(prefix + "global.wv", d, d, ParamKind::Weight);
      fn(prefix + "global.wo", d, d, ParamKind::Weight);
    }
    if (cfg.ff_branch) {
      fn(prefix + "ff.w1", d, dh, ParamKind::Weight);
      fn(prefix + "ff.b1", 1, dh, ParamKind::Bias);
      fn(prefix + "ff.w2", dh, d, ParamKind::Weight);
      fn(prefix + "ff.b2", 1, d, ParamKind::Bias);
    }
    if (!cfg.uniform_gate) {
      const int b = cfg.branches_at(level);
      fn(prefix + "gate.w", d, b * d, ParamKind::Weight);
      fn(prefix + "gate.b", 1, b * d, ParamKind::Bias);
    }
  };

  for (int l = 0; l < cfg.levels; ++l)
    for (int k = 0; k < cfg.blocks_per_level; ++k)
      block("enc" + std::to_string(l) + ".b" + std::to_string(k) + ".", l);
  for (int l = 0; l <= cfg.levels; ++l)
    for (int k = 0; k < cfg.blocks_per_level; ++k)
      block("dec" + std::to_string(l) + ".b" + std::to_string(k) + ".", l);

  fn("head.w", d, 3, ParamKind::Weight);
  fn("head.b", 1, 3, ParamKind::Bias);
}

inline long long param_count(const ModelConfig& cfg) {
  long long n = 0;
  for_each_param(cfg, [&](const std::string&, int r, int c, ParamKind) {
    n += static_cast<long long>(r) * c;
  });
  return n;
}

/// Weights draw from Uniform(+-1/sqrt(fan_in)), biases start at zero, layer
/// norm gains at one, and the cut embedding from Normal(0, 0.02); one rng
/// stream in canonical parameter order makes the draw deterministic per seed.
template <typename S>
ad::ParamStore<S> init_weights(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ad::ParamStore<S> store;
  Rng rng(seed);
  for_each_param(cfg, [&](const std::string& name, int r, int c, ParamKind kind) {
    Mat<S> v(r, c);
    switch (kind) {
      case ParamKind::Weight: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(r));
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            v(i, j) = static_cast<S>(rng.uniform(-bound, bound));
        break;
      }
      case ParamKind::Bias:
        v.setZero();
        break;
      case ParamKind::LayerNormGain:
        v.setOnes();
        break;
      case ParamKind::Embedding:
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) v(i, j) = static_cast<S>(0.02 * rng.normal());
        break;
    }
    store.add(name, std::move(v));
  });
  return store;
}

/// Parameter surgery for transfer: start from a fresh initialization of the
/// target architecture, then copy every source tensor whose name and shape
/// both match. Tensors that appear or change shape (a wider adapter input,
/// a new cut embedding) keep their fresh initialization.
template <typename S>
ad::ParamStore<S> transfer_params(const ad::ParamStore<S>& source,
                                  const ModelConfig& target_cfg, uint64_t init_seed) {
  ad::ParamStore<S> out = init_weights<S>(target_cfg, init_seed);
  for (int p = 0; p < out.size(); ++p) {
    const int s = source.find(out.name(p));
    if (s < 0) continue;
    const Mat<S>& v = source.value(s);
    if (v.rows() == out.value(p).rows() && v.cols() == out.value(p).cols())
      out.value(p) = v;
  }
  return out;
}

/// One forward pass's view of the weights: a tape plus the bound leaves.
template <typename S>
struct BoundModel {
  const ModelConfig* cfg = nullptr;
  const ad::ParamStore<S>* params = nullptr;
  std::vector<ad::Value> bound;

  ad::Value operator[](const std::string& name) const {
    const int i = params->find(name);
    if (i < 0) throw std::invalid_argument("model: unknown parameter " + name);
    return bound[i];
  }
};

template <typename S>
BoundModel<S> bind_model(ad::Tape<S>& t, const ModelConfig& cfg,
                         const ad::ParamStore<S>& params) {
  return BoundModel<S>{&cfg, &params, params.bind(t)};
}

/// [positions | tool signal | bc flag], the raw 7-channel node features.
template <typename S>
Mat<S> assemble_features(const MatX3d& positions, const MatX3f& tool,
                         const std::vector<uint8_t>& bc) {
  const Eigen::Index n = positions.rows();
  if (tool.rows() != n || static_cast<Eigen::Index>(bc.size()) != n)
    throw std::invalid_argument("features: row count mismatch");
  Mat<S> f(n, 7);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) f(i, c) = static_cast<S>(positions(i, c));
    for (int c = 0; c < 3; ++c) f(i, 3 + c) = static_cast<S>(tool(i, c));
    f(i, 6) = static_cast<S>(bc[i]);
  }
  return f;
}

/// Two-layer pointwise MLP lifting raw features to width D.
template <typename S>
ad::Value adapter_forward(ad::Tape<S>& t, const BoundModel<S>& m, ad::Value raw) {
  ad::Value h = ad::relu(
      t, ad::add_bias(t, ad::matmul(t, raw, m["adapter.w1"]), m["adapter.b1"]));
  return ad::add_bias(t, ad::matmul(t, h, m["adapter.w2"]), m["adapter.b2"]);
}

/// Embedding rows for the binary cut flags.
template <typename S>
ad::Value cut_embed(ad::Tape<S>& t, const BoundModel<S>& m,
                    const std::vector<uint8_t>& cut_flags) {
  std::vector<int> idx(cut_flags.size());
  for (size_t i = 0; i < cut_flags.size(); ++i) {
    if (cut_flags[i] > 1)
      throw std::invalid_argument("cut_embed: flags must be 0 or 1");
    idx[i] = cut_flags[i];
  }
  return ad::gather_rows(t, m["cut_emb.table"], std::move(idx));
}

/// Graph attention over mesh edges: per head, edge scores from source and
/// destination projections, normalized over each receiver's incoming edges
/// (self loops included), then an attention-weighted sum. Heads concatenate
/// with no output projection.
template <typename S>
ad::Value local_branch(ad::Tape<S>& t, const BoundModel<S>& m, ad::Value xbar,
                       const EdgeList& edges, const std::string& prefix) {
  const ModelConfig& cfg = *m.cfg;
  const int hd = cfg.head_dim();
  ad::Value psi = ad::matmul(t, xbar, m[prefix + "local.proj"]);
  ad::Value att_src = m[prefix + "local.att_src"];
  ad::Value att_dst = m[prefix + "local.att_dst"];

  std::vector<ad::Value> heads;
  heads.reserve(cfg.heads);
  for (int h = 0; h < cfg.heads; ++h) {
    ad::Value ph = ad::slice_cols(t, psi, h * hd, hd);
    ad::Value s_src = ad::matmul(t, ph, ad::slice_cols(t, att_src, h, 1));
    ad::Value s_dst = ad::matmul(t, ph, ad::slice_cols(t, att_dst, h, 1));
    ad::Value score = ad::leaky_relu(
        t,
        ad::add(t, ad::gather_rows(t, s_src, edges.src),
                ad::gather_rows(t, s_dst, edges.rcv)),
        static_cast<S>(cfg.leaky_slope));
    ad::Value alpha = ad::segment_softmax(t, score, edges.first, edges.count);
    ad::Value msg = ad::scale_rows(t, ad::gather_rows(t, ph, edges.src), alpha);
    heads.push_back(ad::scatter_sum_rows(t, msg, edges.rcv, edges.node_count));
  }
  return ad::concat_channels(t, heads);
}

/// Dense multi-head self-attention over all nodes of the level.
template <typename S>
ad::Value global_branch(ad::Tape<S>& t, const BoundModel<S>& m, ad::Value xbar,
                        const std::string& prefix) {
  const ModelConfig& cfg = *m.cfg;
  const int hd = cfg.head_dim();
  ad::Value q = ad::matmul(t, xbar, m[prefix + "global.wq"]);
  ad::Value k = ad::matmul(t, xbar, m[prefix + "global.wk"]);
  ad::Value v = ad::matmul(t, xbar, m[prefix + "global.wv"]);
  std::vector<ad::Value> heads;
  heads.reserve(cfg.heads);
  for (int h = 0; h < cfg.heads; ++h)
    heads.push_back(ad::scaled_dot_attention(t, ad::slice_cols(t, q, h * hd, hd),
                                             ad::slice_cols(t, k, h * hd, hd),
                                             ad::slice_cols(t, v, h * hd, hd)));
  return ad::matmul(t, ad::concat_channels(t, heads), m[prefix + "global.wo"]);
}

template <typename S>
ad::Value ff_branch(ad::Tape<S>& t, const BoundModel<S>& m, ad::Value xbar,
                    const std::string& prefix) {
  ad::Value h = ad::relu(
      t, ad::add_bias(t, ad::matmul(t, xbar, m[prefix + "ff.w1"]), m[prefix + "ff.b1"]));
  return ad::add_bias(t, ad::matmul(t, h, m[prefix + "ff.w2"]), m[prefix + "ff.b2"]);
}

/// Convex per-node, per-channel mixture of the branch proposals. Gates come
/// from a linear map of the normalized input, softmaxed across the branch
/// axis; the uniform ablation replaces them with 1/B.
template <typename S>
ad::Value gated_fusion(ad::Tape<S>& t, const BoundModel<S>& m, ad::Value xbar,
                       const std::vector<ad::Value>& proposals,
                       const std::string& prefix, ad::Value* gamma_out = nullptr) {
  const ModelConfig& cfg = *m.cfg;
  const int b = static_cast<int>(proposals.size());
  const int d = cfg.width;
  if (b < 1) throw std::invalid_argument("gated_fusion: no proposals");

  if (cfg.uniform_gate) {
    ad::Value acc = proposals[0];
    for (int i = 1; i < b; ++i) acc = ad::add(t, acc, proposals[i]);
    return ad::scale(t, acc, S(1) / static_cast<S>(b));
  }

  ad::Value logits =
      ad::add_bias(t, ad::matmul(t, xbar, m[prefix + "gate.w"]), m[prefix + "gate.b"]);
  ad::Value gamma = ad::branch_softmax(t, logits, b);
  if (gamma_out) *gamma_out = gamma;
  ad::Value acc = ad::elementwise_mul(t, ad::slice_cols(t, gamma, 0, d), proposals[0]);
  for (int i = 1; i < b; ++i)
    acc = ad::add(t, acc,
                  ad::elementwise_mul(t, ad::slice_cols(t, gamma, i * d, d), proposals[i]));
  return acc;
}

/// Pre-norm residual block: normalize, run the active branches, fuse, add.
template <typename S>
ad::Value block_forward(ad::Tape<S>& t, const BoundModel<S>& m, ad::Value x,
                        const EdgeList& edges, int level, const std::string& prefix,
                        ad::Value* gamma_out = nullptr) {
  const ModelConfig& cfg = *m.cfg;
  ad::Value xbar = ad::layer_norm(t, x, m[prefix + "ln.gain"], m[prefix + "ln.bias"],
                                  static_cast<S>(cfg.ln_eps));
  std::vector<ad::Value> proposals;
  if (cfg.local_branch) proposals.push_back(local_branch(t, m, xbar, edges, prefix));
  if (cfg.global_at(level)) proposals.push_back(global_branch(t, m, xbar, prefix));
  if (cfg.ff_branch) proposals.push_back(ff_branch(t, m, xbar, prefix));
  ad::Value fused = gated_fusion(t, m, xbar, proposals, prefix, gamma_out);
  return ad::add(t, x, fused);
}

/// Encoder/decoder over the fixed hierarchy: blocks and max pooling on the
/// way down, a block at the coarsest level, then broadcast unpooling with
/// skip connections on the way up, and a linear head to 3 displacement
/// channels.
template <typename S>
ad::Value model_forward_on(ad::Tape<S>& t, const BoundModel<S>& m,
                           const MeshHierarchy& h, ad::Value raw_features,
                           const std::vector<uint8_t>& cut_flags) {
  const ModelConfig& cfg = *m.cfg;
  const int levels = cfg.levels;
  if (h.level_count() != levels + 1)
    throw std::invalid_argument("model: hierarchy depth does not match config");
  if (t.value(raw_features).rows() != h.node_count(0))
    throw std::invalid_argument("model: feature rows do not match the base level");
  if (t.value(raw_features).cols() != cfg.input_dim)
    throw std::invalid_argument("model: feature width does not match input_dim");

  ad::Value f = raw_features;
  if (cfg.cut_enabled) {
    if (static_cast<int>(cut_flags.size()) != h.node_count(0))
      throw std::invalid_argument("model: cut flag count mismatch");
    f = ad::concat_channels(t, {f, cut_embed(t, m, cut_flags)});
  }
  ad::Value x = adapter_forward(t, m, f);

  auto run_blocks = [&](ad::Value v, const char* role, int level) {
    for (int k = 0; k < cfg.blocks_per_level; ++k) {
      const std::string prefix =
          role + std::to_string(level) + ".b" + std::to_string(k) + ".";
      v = block_forward(t, m, v, h.levels[level].edges, level, prefix);
    }
    return v;
  };

  std::vector<ad::Value> enc(levels + 1);
  for (int l = 0; l < levels; ++l) {
    x = run_blocks(x, "enc", l);
    enc[l] = x;
    x = ad::scatter_max(t, x, h.trans[l].clusters);
  }
  enc[levels] = x;

  x = run_blocks(enc[levels], "dec", levels);
  for (int l = levels - 1; l >= 0; --l) {
    x = ad::add(t, ad::broadcast_rows(t, x, h.trans[l].owner), enc[l]);
    x = run_blocks(x, "dec", l);
  }
  return ad::add_bias(t, ad::matmul(t, x, m["head.w"]), m["head.b"]);
}

template <typename S>
ad::Value model_forward(ad::Tape<S>& t, const BoundModel<S>& m,
                        const MeshHierarchy& h, const Mat<S>& raw_features,
                        const std::vector<uint8_t>& cut_flags) {
  return model_forward_on(t, m, h, t.leaf(raw_features), cut_flags);
}

}  // namespace surgformer
