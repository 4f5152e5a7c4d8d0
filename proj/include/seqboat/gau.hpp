#pragma once

// Gated Attention Unit over compressed sequences.
//
// Q and K are elementwise scale/offsets of the compressed hidden states
// exactly as written (no extra shared projection), which pins d_z == d_m.
// V and the gate G are SiLU-activated linear expansions to d_v. Attention
// logits are Q K^T / s + B_rel with s = r in full mode and s = w in windowed
// modes; the attention function is either row softmax or squared ReLU.
//
// Windows are defined on compressed indices: causal keeps the w most recent
// activated tokens including self (the FIFO working memory), bidirectional
// spans ceil(w/2) past and floor(w/2) future neighbours. The relative bias
// is indexed by original-sequence positions by default, clipped to [-L, L].

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "seqboat/ops.hpp"
#include "seqboat/tensor.hpp"

namespace seqboat {

enum class AttnFn { softmax, relu2 };
enum class AttnMode { full_bi, full_causal, window_bi, window_causal };
enum class PositionBasis { original, compressed };

inline bool is_windowed(AttnMode m) {
  return m == AttnMode::window_bi || m == AttnMode::window_causal;
}
inline bool is_causal(AttnMode m) {
  return m == AttnMode::full_causal || m == AttnMode::window_causal;
}

struct GauParams {
  Tensor wq, bq, wk, bk;  // [d_z] with d_z == d_m
  Tensor w_v, b_v;        // [d_m, d_v], [d_v]
  Tensor w_g, b_g;        // [d_m, d_v], [d_v]
  Tensor w_h, b_h;        // [d_v, d_m], [d_m]
  Tensor rel_bias;        // [2 * bias_clip + 1], offsets -L..L
  int bias_clip = 0;      // L
  int d_z = 0;
  int d_v = 0;
  AttnFn attn_fn = AttnFn::softmax;
  PositionBasis pos_basis = PositionBasis::original;
};

// Attention FLOP accounting: work spent on (query, key) pairs. Per pair this
// counts the QK dot, scaling, bias, weight evaluation and the weighted value
// accumulation; projections are excluded so the counter scales as r * w * d.
inline thread_local long long tl_attn_pair_flops = 0;

inline void attn_flops_reset() { tl_attn_pair_flops = 0; }
inline long long attn_flops() { return tl_attn_pair_flops; }
inline long long attn_pair_cost(int d_z, int d_v) { return 2LL * d_z + 2LL * d_v + 4; }

inline int bias_offset_index(int q_pos, int k_pos, int clip) {
  int off = q_pos - k_pos;
  if (off > clip) off = clip;
  if (off < -clip) off = -clip;
  return off + clip;
}

// Bias table entry for a (query, key) position pair.
inline double relative_bias(int q_pos, int k_pos, const GauParams& params) {
  return params.rel_bias.at(bias_offset_index(q_pos, k_pos, params.bias_clip));
}

// Whether key j may serve query i (compressed indices).
inline bool key_allowed(AttnMode mode, int w, int i, int j) {
  switch (mode) {
    case AttnMode::full_bi:
      return true;
    case AttnMode::full_causal:
      return j <= i;
    case AttnMode::window_bi:
      return j >= i - (w + 1) / 2 && j <= i + w / 2;
    case AttnMode::window_causal:
      return j >= i - w + 1 && j <= i;
  }
  return false;
}

inline std::vector<std::uint8_t> attention_mask(AttnMode mode, int w, int r) {
  if (is_windowed(mode) && w <= 0) throw std::invalid_argument("attention_mask: w must be positive");
  std::vector<std::uint8_t> allowed(static_cast<std::size_t>(r) * r, 0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j)
      allowed[static_cast<std::size_t>(i) * r + j] = key_allowed(mode, w, i, j) ? 1 : 0;
  return allowed;
}

inline Tensor attn_fn_apply(const Tensor& logits, AttnFn fn, const std::vector<std::uint8_t>& allowed) {
  return fn == AttnFn::softmax ? masked_softmax_rows(logits, allowed)
                               : masked_relu2(logits, allowed);
}

// Full GAU over a compressed sequence [r, d_m] whose rows originally sat at
// the given (strictly increasing) positions. Returns [r, d_m].
inline Tensor gau_forward(const Tensor& hc, const std::vector<int>& positions,
                          const GauParams& params, AttnMode mode, int w) {
  if (hc.ndim() != 2) throw std::invalid_argument("gau_forward: expected [r, d_m]");
  const int r = hc.dim(0);
  if (static_cast<int>(positions.size()) != r)
    throw std::invalid_argument("gau_forward: positions length mismatch");
  for (int i = 1; i < r; ++i)
    if (positions[static_cast<std::size_t>(i)] <= positions[static_cast<std::size_t>(i - 1)])
      throw std::invalid_argument("gau_forward: positions must be strictly increasing");
  if (is_windowed(mode) && w <= 0) throw std::invalid_argument("gau_forward: w must be positive");
  if (r == 0) return Tensor::zeros({0, hc.dim(1)});

  Tensor q = rowvec_add(rowvec_mul(hc, params.wq), params.bq);
  Tensor k = rowvec_add(rowvec_mul(hc, params.wk), params.bk);
  Tensor v = silu(rowvec_add(matmul(hc, params.w_v), params.b_v));
  Tensor g = silu(rowvec_add(matmul(hc, params.w_g), params.b_g));

  std::vector<std::uint8_t> allowed = attention_mask(mode, w, r);
  long long pairs = 0;
  for (std::uint8_t x : allowed) pairs += x;
  tl_attn_pair_flops += pairs * attn_pair_cost(params.d_z, params.d_v);

  // Disallowed entries get index 0; they carry no value or gradient.
  const double s = is_windowed(mode) ? static_cast<double>(w) : static_cast<double>(r);
  std::vector<int> bias_idx(static_cast<std::size_t>(r) * r, 0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) {
      if (!allowed[static_cast<std::size_t>(i) * r + j]) continue;
      const int qp = params.pos_basis == PositionBasis::original ? positions[static_cast<std::size_t>(i)] : i;
      const int kp = params.pos_basis == PositionBasis::original ? positions[static_cast<std::size_t>(j)] : j;
      bias_idx[static_cast<std::size_t>(i) * r + j] = bias_offset_index(qp, kp, params.bias_clip);
    }
  Tensor logits = add(scale(masked_matmul_nt(q, k, allowed), 1.0 / s),
                      gather_table(params.rel_bias, bias_idx, {r, r}));

  Tensor weights = attn_fn_apply(logits, params.attn_fn, allowed);
  Tensor o = masked_matmul(weights, v, allowed);
  return rowvec_add(matmul(mul(g, o), params.w_h), params.b_h);
}

// FIFO working memory of the last w activated (key, value, position) triples.
class WorkingMemory {
 public:
  explicit WorkingMemory(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw std::invalid_argument("WorkingMemory: capacity must be positive");
  }

  void push(std::vector<double> k, std::vector<double> v, int pos) {
    if (!entries_.empty() && pos <= entries_.back().pos)
      throw std::invalid_argument("WorkingMemory: non-increasing position");
    entries_.push_back({std::move(k), std::move(v), pos});
    if (static_cast<int>(entries_.size()) > capacity_) entries_.erase(entries_.begin());
  }

  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }

  struct Entry {
    std::vector<double> k, v;
    int pos;
  };
  // Oldest first.
  const Entry& entry(int i) const { return entries_[static_cast<std::size_t>(i)]; }

 private:
  std::vector<Entry> entries_;
  int capacity_;
};

// One streaming step at an activated timestep: push this token's key/value,
// attend causally over the buffer with s = w. Matches the corresponding row
// of gau_forward in window_causal mode. Forward-only.
inline std::vector<double> gau_step(WorkingMemory& mem, const std::vector<double>& h_t, int pos_t,
                                    const GauParams& params) {
  const int d_m = static_cast<int>(h_t.size());
  const int d_v = params.d_v;
  const int w = mem.capacity();

  std::vector<double> q(static_cast<std::size_t>(d_m)), k(static_cast<std::size_t>(d_m));
  for (int j = 0; j < d_m; ++j) {
    q[static_cast<std::size_t>(j)] = params.wq.at(j) * h_t[static_cast<std::size_t>(j)] + params.bq.at(j);
    k[static_cast<std::size_t>(j)] = params.wk.at(j) * h_t[static_cast<std::size_t>(j)] + params.bk.at(j);
  }
  std::vector<double> v(static_cast<std::size_t>(d_v)), g(static_cast<std::size_t>(d_v));
  for (int z = 0; z < d_v; ++z) {
    double sv = 0.0, sg = 0.0;
    for (int j = 0; j < d_m; ++j) {
      sv += h_t[static_cast<std::size_t>(j)] * params.w_v.at(j, z);
      sg += h_t[static_cast<std::size_t>(j)] * params.w_g.at(j, z);
    }
    v[static_cast<std::size_t>(z)] = detail::silu_s(sv + params.b_v.at(z));
    g[static_cast<std::size_t>(z)] = detail::silu_s(sg + params.b_g.at(z));
  }

  mem.push(std::move(k), v, pos_t);

  const int m = mem.size();
  const double inv_s = 1.0 / w;
  std::vector<double> logits(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const auto& e = mem.entry(i);
    double dot = 0.0;
    for (int j = 0; j < d_m; ++j) dot += q[static_cast<std::size_t>(j)] * e.k[static_cast<std::size_t>(j)];
    // In the compressed basis the query/key offset is the buffer distance.
    const double bias = params.pos_basis == PositionBasis::original
                            ? relative_bias(pos_t, e.pos, params)
                            : params.rel_bias.at(bias_offset_index(m - 1, i, params.bias_clip));
    logits[static_cast<std::size_t>(i)] = dot * inv_s + bias;
  }
  tl_attn_pair_flops += static_cast<long long>(m) * attn_pair_cost(params.d_z, params.d_v);

  std::vector<double> weights(static_cast<std::size_t>(m), 0.0);
  if (params.attn_fn == AttnFn::softmax) {
    double mx = logits[0];
    for (int i = 1; i < m; ++i) mx = std::max(mx, logits[static_cast<std::size_t>(i)]);
    double zsum = 0.0;
    for (int i = 0; i < m; ++i) {
      weights[static_cast<std::size_t>(i)] = std::exp(logits[static_cast<std::size_t>(i)] - mx);
      zsum += weights[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < m; ++i) weights[static_cast<std::size_t>(i)] /= zsum;
  } else {
    for (int i = 0; i < m; ++i) {
      const double x = logits[static_cast<std::size_t>(i)];
      if (x > 0.0) weights[static_cast<std::size_t>(i)] = x * x;
    }
  }

  std::vector<double> o(static_cast<std::size_t>(d_v), 0.0);
  for (int i = 0; i < m; ++i) {
    const auto& e = mem.entry(i);
    const double wt = weights[static_cast<std::size_t>(i)];
    for (int z = 0; z < d_v; ++z) o[static_cast<std::size_t>(z)] += wt * e.v[static_cast<std::size_t>(z)];
  }

  std::vector<double> y(static_cast<std::size_t>(d_m));
  for (int j = 0; j < d_m; ++j) {
    double acc = 0.0;
    for (int z = 0; z < d_v; ++z)
      acc += g[static_cast<std::size_t>(z)] * o[static_cast<std::size_t>(z)] * params.w_h.at(z, j);
    y[static_cast<std::size_t>(j)] = acc + params.b_h.at(j);
  }
  return y;
}

}  // namespace seqboat
