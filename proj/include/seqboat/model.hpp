#pragma once

// Whole-model assembly: embedding, a stack of same-width SeqBoat layers, and
// a classification or language-model head. Provides deterministic seeded
// initialization, a named-parameter registry, a binary checkpoint format
// with byte-identical save/load/save round-trips, and a streaming session
// that mirrors the parallel forward for causal configurations.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seqboat/layer.hpp"

namespace seqboat {

enum class HeadKind { classification, lm };

struct ModelConfig {
  int n_layers = 2;
  int d_m = 32;
  int d_z = 0;     // 0 -> d_m; the elementwise Q/K form requires d_z == d_m
  int d_v = 0;     // 0 -> 2 * d_m
  int ema_dim = 2; // h
  int window = 16; // w; 0 selects full attention
  int seq_len = 64;
  int vocab = 32;
  int n_out = 0;   // 0 -> vocab
  double alpha = 1.0;  // initial temperature scale
  bool causal = true;
  AttnFn attn_fn = AttnFn::softmax;
  PositionBasis pos_basis = PositionBasis::original;
  NormKind norm = NormKind::layernorm;
  NormPlacement norm_placement = NormPlacement::pre;
  HeadKind head = HeadKind::lm;

  void finalize() {
    if (d_z == 0) d_z = d_m;
    if (d_v == 0) d_v = 2 * d_m;
    if (n_out == 0) n_out = vocab;
    if (n_layers < 1 || d_m < 1 || ema_dim < 1 || vocab < 1 || seq_len < 1)
      throw std::invalid_argument("ModelConfig: dimensions must be positive");
    if (d_z != d_m)
      throw std::invalid_argument("ModelConfig: d_z must equal d_m (Q/K are elementwise scale/offset)");
    if (window < 0 || window > seq_len)
      throw std::invalid_argument("ModelConfig: window must be in [0, seq_len]");
  }

  AttnMode mode() const {
    if (window > 0) return causal ? AttnMode::window_causal : AttnMode::window_bi;
    return causal ? AttnMode::full_causal : AttnMode::full_bi;
  }
};

struct ModelParams {
  ModelConfig cfg;
  Tensor embedding;  // [vocab, d_m]
  std::vector<LayerParams> layers;
  Tensor head_w;  // [d_m, n_out]
  Tensor head_b;  // [n_out]
};

struct NamedParam {
  std::string name;
  Tensor t;
};

inline void collect_layer_params(LayerParams& lp, const std::string& prefix,
                                 std::vector<NamedParam>& out) {
  out.push_back({prefix + "mdema.eta", lp.mdema.eta});
  out.push_back({prefix + "mdema.alpha_raw", lp.mdema.alpha_raw});
  out.push_back({prefix + "mdema.delta_raw", lp.mdema.delta_raw});
  out.push_back({prefix + "mdema.beta", lp.mdema.beta});
  out.push_back({prefix + "mdema.d_skip", lp.mdema.d_skip});
  out.push_back({prefix + "config.w0", lp.config.w0});
  out.push_back({prefix + "config.w1", lp.config.w1});
  out.push_back({prefix + "config.b0", lp.config.b0});
  out.push_back({prefix + "config.b1", lp.config.b1});
  out.push_back({prefix + "config.log_tau", lp.config.log_tau});
  out.push_back({prefix + "gau.wq", lp.gau.wq});
  out.push_back({prefix + "gau.bq", lp.gau.bq});
  out.push_back({prefix + "gau.wk", lp.gau.wk});
  out.push_back({prefix + "gau.bk", lp.gau.bk});
  out.push_back({prefix + "gau.w_v", lp.gau.w_v});
  out.push_back({prefix + "gau.b_v", lp.gau.b_v});
  out.push_back({prefix + "gau.w_g", lp.gau.w_g});
  out.push_back({prefix + "gau.b_g", lp.gau.b_g});
  out.push_back({prefix + "gau.w_h", lp.gau.w_h});
  out.push_back({prefix + "gau.b_h", lp.gau.b_h});
  out.push_back({prefix + "gau.rel_bias", lp.gau.rel_bias});
  out.push_back({prefix + "agg.w", lp.agg_w});
  out.push_back({prefix + "agg.b", lp.agg_b});
  if (lp.norm.kind == NormKind::layernorm) {
    out.push_back({prefix + "norm.gamma", lp.norm.gamma});
    out.push_back({prefix + "norm.beta", lp.norm.beta});
  } else {
    out.push_back({prefix + "norm.g", lp.norm.g});
  }
}

// All learnable parameters in a fixed, checkpoint-stable order.
inline std::vector<NamedParam> named_params(ModelParams& m) {
  std::vector<NamedParam> out;
  out.push_back({"embed.table", m.embedding});
  for (std::size_t l = 0; l < m.layers.size(); ++l)
    collect_layer_params(m.layers[l], "layer" + std::to_string(l) + ".", out);
  out.push_back({"head.w", m.head_w});
  out.push_back({"head.b", m.head_b});
  return out;
}

inline void zero_all_grads(ModelParams& m) {
  for (auto& p : named_params(m)) p.t.zero_grad();
}

// Copies parameter values into dst's existing buffers, keeping every Tensor
// identity (and thus any NamedParam handles) intact.
inline void assign_params(ModelParams& dst, ModelParams& src) {
  auto pd = named_params(dst);
  auto ps = named_params(src);
  if (pd.size() != ps.size()) throw std::invalid_argument("assign_params: group count mismatch");
  for (std::size_t i = 0; i < pd.size(); ++i) {
    if (pd[i].name != ps[i].name || pd[i].t.shape != ps[i].t.shape)
      throw std::invalid_argument("assign_params: mismatch at " + pd[i].name);
    *pd[i].t.data = *ps[i].t.data;
  }
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor randn(std::mt19937_64& rng, std::vector<int> shape, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : *t.data) v = dist(rng);
  return t;
}

}  // namespace detail

inline ModelParams model_init(ModelConfig cfg, std::uint64_t seed) {
  cfg.finalize();
  std::mt19937_64 rng(seed);
  ModelParams m;
  m.cfg = cfg;
  const int d = cfg.d_m, h = cfg.ema_dim, dv = cfg.d_v;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double inv_sqrt_dv = 1.0 / std::sqrt(static_cast<double>(dv));
  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));

  m.embedding = detail::randn(rng, {cfg.vocab, d}, inv_sqrt_d);

  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerParams lp;

    lp.mdema.h = h;
    lp.mdema.d_m = d;
    lp.mdema.eta = detail::randn(rng, {h, d}, inv_sqrt_h);
    lp.mdema.alpha_raw = detail::randn(rng, {h, d}, 1.0);
    lp.mdema.delta_raw = detail::randn(rng, {h, d}, 1.0);
    lp.mdema.beta = detail::randn(rng, {h, d}, inv_sqrt_h);
    lp.mdema.d_skip = Tensor::full({d}, 1.0, true);

    const double tau0 = cfg.alpha * std::sqrt(static_cast<double>(d));
    lp.config.w0 = detail::randn(rng, {d}, inv_sqrt_d);
    lp.config.w1 = detail::randn(rng, {d}, inv_sqrt_d);
    lp.config.b0 = Tensor::zeros({1}, true);
    // Activation-leaning start: p1 ~ 0.9 at initialization, so the GAU path
    // trains densely until the configurator has evidence to prune.
    lp.config.b1 = Tensor::scalar(std::log(9.0) * tau0, true);
    lp.config.alpha_init = cfg.alpha;
    lp.config.log_tau = Tensor::scalar(std::log(tau0), true);

    lp.gau.d_z = cfg.d_z;
    lp.gau.d_v = dv;
    lp.gau.attn_fn = cfg.attn_fn;
    lp.gau.pos_basis = cfg.pos_basis;
    lp.gau.bias_clip = cfg.window > 0 ? cfg.window : cfg.seq_len;
    lp.gau.wq = detail::randn(rng, {d}, inv_sqrt_d);
    lp.gau.bq = Tensor::zeros({d}, true);
    lp.gau.wk = detail::randn(rng, {d}, inv_sqrt_d);
    lp.gau.bk = Tensor::zeros({d}, true);
    lp.gau.w_v = detail::randn(rng, {d, dv}, inv_sqrt_d);
    lp.gau.b_v = Tensor::zeros({dv}, true);
    lp.gau.w_g = detail::randn(rng, {d, dv}, inv_sqrt_d);
    lp.gau.b_g = Tensor::zeros({dv}, true);
    lp.gau.w_h = detail::randn(rng, {dv, d}, inv_sqrt_dv);
    lp.gau.b_h = Tensor::zeros({d}, true);
    lp.gau.rel_bias = detail::randn(rng, {2 * lp.gau.bias_clip + 1}, 0.02);

    lp.agg_w = detail::randn(rng, {d, d}, inv_sqrt_d);
    lp.agg_b = Tensor::zeros({d}, true);

    lp.norm.kind = cfg.norm;
    lp.norm_placement = cfg.norm_placement;
    if (cfg.norm == NormKind::layernorm) {
      lp.norm.gamma = Tensor::full({d}, 1.0, true);
      lp.norm.beta = Tensor::zeros({d}, true);
    } else {
      lp.norm.g = Tensor::scalar(1.0, true);
    }

    m.layers.push_back(std::move(lp));
  }

  m.head_w = detail::randn(rng, {d, cfg.n_out}, inv_sqrt_d);
  m.head_b = Tensor::zeros({cfg.n_out}, true);
  return m;
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

using ModelTrace = std::vector<LayerTrace>;

struct ForwardOptions {
  // Per-layer forced activation masks (empty = configurator decides).
  const std::vector<std::vector<std::uint8_t>>* forced_a = nullptr;
  bool record_edges = false;
  // Per-layer kernel plan cache shared across a batch of forwards evaluated
  // at the same parameter values (one training step, or one eval sweep).
  std::vector<std::shared_ptr<ConvPlan>>* conv_cache = nullptr;
};

inline LayerOptions layer_options(const ModelConfig& cfg, const ForwardOptions& fwd, int layer) {
  LayerOptions opt;
  opt.mode = cfg.mode();
  opt.window = cfg.window;
  opt.record_edges = fwd.record_edges;
  if (fwd.forced_a) opt.forced_a = &(*fwd.forced_a)[static_cast<std::size_t>(layer)];
  if (fwd.conv_cache) opt.ssm_plan_slot = &(*fwd.conv_cache)[static_cast<std::size_t>(layer)];
  return opt;
}

// Logits plus the per-layer activation trace. Classification heads mean-pool
// the final states into one logits row; LM heads emit one row per position.
inline std::pair<Tensor, ModelTrace> model_forward(const std::vector<int>& tokens,
                                                   const ModelParams& m,
                                                   const ForwardOptions& fwd = {}) {
  for (int t : tokens)
    if (t < 0 || t >= m.cfg.vocab) throw std::out_of_range("model_forward: token outside vocab");
  Tensor s = gather_rows(m.embedding, tokens);
  ModelTrace trace;
  trace.reserve(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto [s_next, lt] = layer_forward(s, m.layers[l], layer_options(m.cfg, fwd, static_cast<int>(l)));
    s = s_next;
    trace.push_back(std::move(lt));
  }
  Tensor logits;
  if (m.cfg.head == HeadKind::classification) {
    Tensor pooled = reshape(mean_rows(s), {1, m.cfg.d_m});
    logits = rowvec_add(matmul(pooled, m.head_w), m.head_b);
  } else {
    logits = rowvec_add(matmul(s, m.head_w), m.head_b);
  }
  return {logits, trace};
}

// ---------------------------------------------------------------------------
// streaming session (causal LM)
// ---------------------------------------------------------------------------

struct ModelStreamState {
  std::vector<LayerStreamState> layers;
  int pos = 0;

  explicit ModelStreamState(const ModelParams& m) {
    if (m.cfg.mode() != AttnMode::window_causal)
      throw std::invalid_argument(
          "ModelStreamState: streaming requires a causal windowed config (the FIFO memory)");
    layers.reserve(m.layers.size());
    for (const auto& lp : m.layers) layers.emplace_back(lp, m.cfg.window);
  }
};

// Feeds one token; returns this position's logits row.
inline std::vector<double> model_step(ModelStreamState& state, int token, const ModelParams& m,
                                      const ForwardOptions& fwd = {}) {
  if (token < 0 || token >= m.cfg.vocab) throw std::out_of_range("model_step: token outside vocab");
  const int d = m.cfg.d_m;
  std::vector<double> s(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) s[static_cast<std::size_t>(j)] = m.embedding.at(token, j);
  for (std::size_t l = 0; l < m.layers.size(); ++l)
    s = layer_step(state.layers[l], s, m.layers[l],
                   layer_options(m.cfg, fwd, static_cast<int>(l)));
  std::vector<double> logits(static_cast<std::size_t>(m.cfg.n_out));
  for (int o = 0; o < m.cfg.n_out; ++o) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += s[static_cast<std::size_t>(j)] * m.head_w.at(j, o);
    logits[static_cast<std::size_t>(o)] = acc + m.head_b.at(o);
  }
  state.pos += 1;
  return logits;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

// Binary container: magic, version, then (name, shape, raw little-endian
// float64 payload) per parameter group, in registry order. save -> load ->
// save reproduces the file byte for byte.
inline void save_checkpoint(const std::string& path, ModelParams& m) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  const char magic[4] = {'S', 'B', 'C', '1'};
  f.write(magic, 4);
  auto write_u32 = [&f](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  write_u32(1);  // version
  auto params = named_params(m);
  write_u32(static_cast<std::uint32_t>(params.size()));
  for (auto& p : params) {
    write_u32(static_cast<std::uint32_t>(p.name.size()));
    f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(static_cast<std::uint32_t>(p.t.shape.size()));
    for (int dim : p.t.shape) {
      const std::int64_t v = dim;
      f.write(reinterpret_cast<const char*>(&v), 8);
    }
    f.write(reinterpret_cast<const char*>(p.t.ptr()),
            static_cast<std::streamsize>(p.t.numel() * 8));
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline void load_checkpoint(const std::string& path, ModelParams& m) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "SBC1")
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  auto read_u32 = [&f]() {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  const std::uint32_t version = read_u32();
  if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
  const std::uint32_t count = read_u32();
  auto params = named_params(m);
  if (count != params.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch (checkpoint/config)");
  for (auto& p : params) {
    const std::uint32_t name_len = read_u32();
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (name != p.name) throw std::runtime_error("load_checkpoint: unexpected group " + name);
    const std::uint32_t ndim = read_u32();
    std::vector<int> shape(ndim);
    for (std::uint32_t i = 0; i < ndim; ++i) {
      std::int64_t v = 0;
      f.read(reinterpret_cast<char*>(&v), 8);
      shape[i] = static_cast<int>(v);
    }
    if (shape != p.t.shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    f.read(reinterpret_cast<char*>(p.t.ptr()), static_cast<std::streamsize>(p.t.numel() * 8));
    if (!f) throw std::runtime_error("load_checkpoint: truncated file at " + name);
  }
}

}  // namespace seqboat
