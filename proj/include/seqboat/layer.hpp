#pragma once

// A SeqBoat layer: always-on SSM, latent configurator, sparsely activated
// GAU over the compressed sequence, and linear aggregation.
//
//   H      = SiLU(SSM(norm_in(S)))
//   a, c   = configurator(H)
//   Y      = Extract(GAU(Compress(H, a)))
//   S_next = norm_out(SiLU(c .* Y + H W + b + S))
//
// Pre-norm puts the normalization on norm_in, post-norm on norm_out. There
// is no feed-forward block anywhere; the layer's parameter inventory is the
// SSM, the configurator, the GAU and one aggregation matrix.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "seqboat/gau.hpp"
#include "seqboat/mdema.hpp"
#include "seqboat/ops.hpp"
#include "seqboat/sma.hpp"
#include "seqboat/tensor.hpp"

namespace seqboat {

enum class NormKind { layernorm, scalenorm };
enum class NormPlacement { pre, post };

struct NormParams {
  NormKind kind = NormKind::layernorm;
  Tensor gamma, beta;  // layernorm
  Tensor g;            // scalenorm scalar
};

inline Tensor apply_norm(const Tensor& x, const NormParams& p) {
  return p.kind == NormKind::layernorm ? layernorm_rows(x, p.gamma, p.beta)
                                       : scalenorm_rows(x, p.g);
}

// Streaming single-row counterpart; identical arithmetic to apply_norm.
inline std::vector<double> apply_norm_row(const std::vector<double>& x, const NormParams& p) {
  const int d = static_cast<int>(x.size());
  std::vector<double> y(static_cast<std::size_t>(d));
  if (p.kind == NormKind::layernorm) {
    detail::layernorm_row(x.data(), p.gamma.ptr(), p.beta.ptr(), 1e-5, d, y.data());
  } else {
    detail::scalenorm_row(x.data(), p.g.value(), 1e-5, d, y.data());
  }
  return y;
}

struct LayerParams {
  MdEmaParams mdema;
  ConfiguratorParams config;
  GauParams gau;
  Tensor agg_w;  // [d_m, d_m]
  Tensor agg_b;  // [d_m]
  NormParams norm;
  NormPlacement norm_placement = NormPlacement::pre;
};

// Per-layer record of one forward pass, for the analysis tooling.
struct LayerTrace {
  std::vector<std::uint8_t> a;
  std::vector<double> c;
  int r = 0;
  // (query original position, attended key original positions), one entry
  // per activated query, in query order. Filled when record_edges is set.
  std::vector<std::pair<int, std::vector<int>>> edges;
};

struct LayerOptions {
  AttnMode mode = AttnMode::window_causal;
  int window = 0;  // w; required positive for windowed modes
  const std::vector<std::uint8_t>* forced_a = nullptr;
  bool record_edges = false;
  // Optional slot for sharing the materialized SSM kernel across a batch.
  // The slot is (re)filled when empty or built for a different length; it
  // must not outlive the tape it was recorded on.
  std::shared_ptr<ConvPlan>* ssm_plan_slot = nullptr;
};

inline std::vector<int> activated_positions(const std::vector<std::uint8_t>& a) {
  std::vector<int> pos;
  for (std::size_t t = 0; t < a.size(); ++t)
    if (a[t]) pos.push_back(static_cast<int>(t));
  return pos;
}

inline std::vector<std::pair<int, std::vector<int>>> attention_edges(
    const std::vector<int>& positions, AttnMode mode, int w) {
  const int r = static_cast<int>(positions.size());
  std::vector<std::pair<int, std::vector<int>>> edges;
  edges.reserve(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    std::vector<int> keys;
    for (int j = 0; j < r; ++j)
      if (key_allowed(mode, w, i, j)) keys.push_back(positions[static_cast<std::size_t>(j)]);
    edges.emplace_back(positions[static_cast<std::size_t>(i)], std::move(keys));
  }
  return edges;
}

inline std::pair<Tensor, LayerTrace> layer_forward(const Tensor& s, const LayerParams& params,
                                                   const LayerOptions& opt) {
  if (s.ndim() != 2) throw std::invalid_argument("layer_forward: expected [n, d_m]");
  const int n = s.dim(0), d = s.dim(1);

  const bool pre = params.norm_placement == NormPlacement::pre;
  Tensor x = pre ? apply_norm(s, params.norm) : s;
  Tensor h;
  if (opt.ssm_plan_slot) {
    if (!*opt.ssm_plan_slot || (*opt.ssm_plan_slot)->n != n)
      *opt.ssm_plan_slot = make_ssm_plan(params.mdema, n);
    h = silu(ssm_parallel_planned(x, params.mdema, *opt.ssm_plan_slot));
  } else {
    h = silu(ssm_parallel(x, params.mdema));
  }

  DecisionMask mask = configurator_forward(h, params.config);
  if (opt.forced_a) {
    if (static_cast<int>(opt.forced_a->size()) != n)
      throw std::invalid_argument("layer_forward: forced activation length mismatch");
    mask.a = *opt.forced_a;
    mask.c = select_confidence(mask.p1, mask.a);
  }

  auto [hc3, plans] = compress(reshape(h, {1, n, d}), mask.a);
  const RoutingPlan& plan = plans[0];
  std::vector<int> positions = activated_positions(mask.a);
  Tensor hc = reshape(hc3, {plan.pad_len, d});
  Tensor yc = gau_forward(hc, positions, params.gau, opt.mode, opt.window);
  Tensor y = reshape(extract(reshape(yc, {1, plan.pad_len, d}), plans), {n, d});

  Tensor agg = add(add(colvec_mul(y, mask.c), rowvec_add(matmul(h, params.agg_w), params.agg_b)), s);
  Tensor s_next = pre ? silu(agg) : apply_norm(silu(agg), params.norm);

  LayerTrace trace;
  trace.a = mask.a;
  trace.c.assign(mask.c.ptr(), mask.c.ptr() + n);
  trace.r = plan.r;
  if (opt.record_edges) trace.edges = attention_edges(positions, opt.mode, opt.window);
  return {s_next, trace};
}

// ---------------------------------------------------------------------------
// streaming
// ---------------------------------------------------------------------------

struct LayerStreamState {
  EmaState ema;
  WorkingMemory mem;
  int pos = 0;

  LayerStreamState(const LayerParams& params, int window)
      : ema(EmaState::init(params.mdema)), mem(window) {}
};

// One causal timestep with layer_forward semantics. The GAU path runs only
// when the configurator activates; skipped steps cost O(d).
inline std::vector<double> layer_step(LayerStreamState& state, const std::vector<double>& s_t,
                                      const LayerParams& params, const LayerOptions& opt) {
  const int d = static_cast<int>(s_t.size());
  const bool pre = params.norm_placement == NormPlacement::pre;

  const std::vector<double> x = pre ? apply_norm_row(s_t, params.norm) : s_t;
  std::vector<double> h = ssm_step(state.ema, x, params.mdema);
  for (double& v : h) v = detail::silu_s(v);

  double dot0 = 0.0, dot1 = 0.0;
  for (int j = 0; j < d; ++j) {
    dot0 += h[static_cast<std::size_t>(j)] * params.config.w0.at(j);
    dot1 += h[static_cast<std::size_t>(j)] * params.config.w1.at(j);
  }
  const double l0 = dot0 + params.config.b0.value();
  const double l1 = dot1 + params.config.b1.value();
  const double p1 = detail::sigmoid_s((l1 - l0) / params.config.tau_value());
  bool active = p1 >= 0.5;
  if (opt.forced_a) {
    if (state.pos >= static_cast<int>(opt.forced_a->size()))
      throw std::invalid_argument("layer_step: forced activation exhausted");
    active = (*opt.forced_a)[static_cast<std::size_t>(state.pos)] != 0;
  }
  const double c = active ? p1 : 1.0 - p1;

  std::vector<double> y;
  if (active) y = gau_step(state.mem, h, state.pos, params.gau);

  std::vector<double> out(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    double hw = 0.0;
    for (int p = 0; p < d; ++p) hw += h[static_cast<std::size_t>(p)] * params.agg_w.at(p, j);
    const double cy = active ? c * y[static_cast<std::size_t>(j)] : 0.0;
    out[static_cast<std::size_t>(j)] =
        detail::silu_s(cy + (hw + params.agg_b.at(j)) + s_t[static_cast<std::size_t>(j)]);
  }
  state.pos += 1;
  return pre ? out : apply_norm_row(out, params.norm);
}

}  // namespace seqboat
