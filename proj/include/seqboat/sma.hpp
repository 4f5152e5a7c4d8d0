#pragma once

// Sparse Modular Activation: the latent configurator, the compress/extract
// routing operators, and linear aggregation of module outputs.
//
// The configurator scores each timestep with two logits, applies a tempered
// two-way softmax, and takes the argmax as the binary activation decision a
// and the max probability as the confidence c. Gradients flow through c
// (the selected softmax branch); the discrete a carries no gradient.
//
// compress/extract follow the scatter/gather construction: index_q =
// a * cumsum(a) maps activated timesteps to 1-based slots of a compressed
// buffer whose slot 0 collects (and then discards) every inactive row, so
// one scatter does selection and re-padding at once.

#include <cstdint>
#include <utility>
#include <vector>

#include "seqboat/ops.hpp"
#include "seqboat/tensor.hpp"

namespace seqboat {

struct ConfiguratorParams {
  Tensor w0, w1;      // [d_m]
  Tensor b0, b1;      // scalars
  Tensor log_tau;     // temperature stored in log space so tau stays positive
  double alpha_init = 1.0;

  double tau_value() const { return std::exp(log_tau.value()); }
};

struct DecisionMask {
  std::vector<std::uint8_t> a;  // 1 = module activated
  Tensor c;                     // confidence, max branch probability, in [0.5, 1]
  Tensor p0, p1;                // branch probabilities, p0 + p1 = 1
};

struct RoutingPlan {
  std::vector<int> index_q;  // a[t] * (1-based rank among activated), 0 for inactive
  int r = 0;                 // activated count in this row
  int pad_len = 0;           // max r over the batch
};

// c[t] = p1[t] if a[t] else 1 - p1[t]; gradient follows the selected branch.
inline Tensor select_confidence(const Tensor& p1, const std::vector<std::uint8_t>& a) {
  if (p1.ndim() != 1 || static_cast<int>(a.size()) != p1.dim(0))
    throw std::invalid_argument("select_confidence: shape mismatch");
  const int n = p1.dim(0);
  Tensor out = Tensor::zeros({n}, wants_grad(p1));
  for (int t = 0; t < n; ++t)
    out.at(t) = a[static_cast<std::size_t>(t)] ? p1.at(t) : 1.0 - p1.at(t);
  if (out.requires_grad) {
    tape_record([p1, out, a, n]() {
      for (int t = 0; t < n; ++t) {
        const double g = (*out.grad)[static_cast<std::size_t>(t)];
        (*p1.grad)[static_cast<std::size_t>(t)] += a[static_cast<std::size_t>(t)] ? g : -g;
      }
    });
  }
  return out;
}

inline DecisionMask configurator_forward(const Tensor& h, const ConfiguratorParams& params) {
  if (h.ndim() != 2) throw std::invalid_argument("configurator_forward: expected [n, d_m]");
  const int n = h.dim(0);
  Tensor l0 = add_scalar_t(matvec(h, params.w0), params.b0);
  Tensor l1 = add_scalar_t(matvec(h, params.w1), params.b1);
  if (!l0.all_finite() || !l1.all_finite())
    throw std::runtime_error("configurator_forward: non-finite logits");
  Tensor tau = exp_elem(params.log_tau);
  Tensor p1 = sigmoid(div_scalar_t(sub(l1, l0), tau));

  DecisionMask mask;
  mask.a.resize(static_cast<std::size_t>(n));
  // Tie at exactly 0.5 activates.
  for (int t = 0; t < n; ++t)
    mask.a[static_cast<std::size_t>(t)] = (p1.at(t) >= 0.5) ? 1 : 0;
  mask.p1 = p1;
  mask.p0 = sub(Tensor::full({n}, 1.0), p1);
  mask.c = select_confidence(p1, mask.a);
  return mask;
}

inline void check_binary(const std::vector<std::uint8_t>& a, const char* op) {
  for (std::uint8_t v : a)
    if (v != 0 && v != 1) throw std::invalid_argument(std::string(op) + ": non-binary mask");
}

inline std::vector<RoutingPlan> make_plans(const std::vector<std::uint8_t>& a, int batch, int n) {
  if (static_cast<int>(a.size()) != batch * n)
    throw std::invalid_argument("routing: mask size does not match [B, n]");
  check_binary(a, "routing");
  std::vector<RoutingPlan> plans(static_cast<std::size_t>(batch));
  int pad_len = 0;
  for (int b = 0; b < batch; ++b) {
    RoutingPlan& plan = plans[static_cast<std::size_t>(b)];
    plan.index_q.resize(static_cast<std::size_t>(n));
    int cum = 0;
    for (int t = 0; t < n; ++t) {
      const int at = a[static_cast<std::size_t>(b) * n + t];
      cum += at;
      plan.index_q[static_cast<std::size_t>(t)] = at * cum;
    }
    plan.r = cum;
    pad_len = std::max(pad_len, cum);
  }
  for (auto& plan : plans) plan.pad_len = pad_len;
  return plans;
}

// H [B, n, d] with binary mask a [B, n] -> compressed [B, pad_len, d].
// Activated rows keep their relative order; tail slots stay zero.
inline std::pair<Tensor, std::vector<RoutingPlan>> compress(const Tensor& h,
                                                            const std::vector<std::uint8_t>& a) {
  if (h.ndim() != 3) throw std::invalid_argument("compress: expected [B, n, d]");
  const int batch = h.dim(0), n = h.dim(1), d = h.dim(2);
  std::vector<RoutingPlan> plans = make_plans(a, batch, n);
  const int pad_len = plans.empty() ? 0 : plans[0].pad_len;

  // Scatter into pad_len+1 slots; slot 0 is the discard slot for inactive rows.
  Tensor buffer = Tensor::zeros({batch, pad_len + 1, d});
  for (int b = 0; b < batch; ++b) {
    const auto& index_q = plans[static_cast<std::size_t>(b)].index_q;
    for (int t = 0; t < n; ++t) {
      const int slot = index_q[static_cast<std::size_t>(t)];
      for (int j = 0; j < d; ++j) buffer.at(b, slot, j) = h.at(b, t, j);
    }
  }
  Tensor hc = Tensor::zeros({batch, pad_len, d}, wants_grad(h));
  for (int b = 0; b < batch; ++b)
    for (int s = 0; s < pad_len; ++s)
      for (int j = 0; j < d; ++j) hc.at(b, s, j) = buffer.at(b, s + 1, j);

  if (hc.requires_grad) {
    tape_record([h, hc, plans, batch, n, d]() {
      for (int b = 0; b < batch; ++b) {
        const auto& index_q = plans[static_cast<std::size_t>(b)].index_q;
        const int pad = plans[static_cast<std::size_t>(b)].pad_len;
        for (int t = 0; t < n; ++t) {
          const int slot = index_q[static_cast<std::size_t>(t)];
          if (slot == 0) continue;
          for (int j = 0; j < d; ++j)
            (*h.grad)[(static_cast<std::size_t>(b) * n + t) * d + j] +=
                (*hc.grad)[(static_cast<std::size_t>(b) * pad + slot - 1) * d + j];
        }
      }
    });
  }
  return {hc, plans};
}

// Compressed [B, pad_len, d] back to [B, n, d]: prepend one zero row and
// gather with index_q, so inactive positions read the zero row.
inline Tensor extract(const Tensor& yc, const std::vector<RoutingPlan>& plans) {
  if (yc.ndim() != 3) throw std::invalid_argument("extract: expected [B, pad_len, d]");
  const int batch = yc.dim(0), pad_len = yc.dim(1), d = yc.dim(2);
  if (static_cast<int>(plans.size()) != batch)
    throw std::invalid_argument("extract: plan batch mismatch");
  for (const auto& plan : plans)
    if (plan.pad_len != pad_len) throw std::invalid_argument("extract: plan pad_len mismatch");
  const int n = plans.empty() ? 0 : static_cast<int>(plans[0].index_q.size());

  Tensor y = Tensor::zeros({batch, n, d}, wants_grad(yc));
  for (int b = 0; b < batch; ++b) {
    const auto& index_q = plans[static_cast<std::size_t>(b)].index_q;
    for (int t = 0; t < n; ++t) {
      const int slot = index_q[static_cast<std::size_t>(t)];
      if (slot == 0) continue;
      for (int j = 0; j < d; ++j) y.at(b, t, j) = yc.at(b, slot - 1, j);
    }
  }
  if (y.requires_grad) {
    tape_record([yc, y, plans, batch, n, d, pad_len]() {
      for (int b = 0; b < batch; ++b) {
        const auto& index_q = plans[static_cast<std::size_t>(b)].index_q;
        for (int t = 0; t < n; ++t) {
          const int slot = index_q[static_cast<std::size_t>(t)];
          if (slot == 0) continue;
          for (int j = 0; j < d; ++j)
            (*yc.grad)[(static_cast<std::size_t>(b) * pad_len + slot - 1) * d + j] +=
                (*y.grad)[(static_cast<std::size_t>(b) * n + t) * d + j];
        }
      }
    });
  }
  return y;
}

// out[t] = sum_i c_i[t] * outputs_i[t]. Outputs are already zero at inactive
// positions (extract put them there), so scaling after extract matches c .* Y.
inline Tensor aggregate(const std::vector<Tensor>& outputs, const std::vector<DecisionMask>& masks) {
  if (outputs.empty() || outputs.size() != masks.size())
    throw std::invalid_argument("aggregate: module count mismatch");
  Tensor acc = colvec_mul(outputs[0], masks[0].c);
  for (std::size_t i = 1; i < outputs.size(); ++i) {
    check_same_shape(outputs[i], outputs[0], "aggregate");
    acc = add(acc, colvec_mul(outputs[i], masks[i].c));
  }
  return acc;
}

// The Theorem 1 construction: activate exactly the modules with a nonzero
// target coefficient, with unit confidence. With external scalars equal to
// the coefficients, the aggregated span reproduces the target combination.
inline std::pair<std::vector<std::uint8_t>, std::vector<double>> coverage_witness(
    const std::vector<double>& target_coefficients) {
  std::vector<std::uint8_t> a(target_coefficients.size());
  std::vector<double> c(target_coefficients.size());
  for (std::size_t i = 0; i < target_coefficients.size(); ++i) {
    const bool on = target_coefficients[i] != 0.0;
    a[i] = on ? 1 : 0;
    c[i] = on ? 1.0 : 0.0;
  }
  return {a, c};
}

}  // namespace seqboat
