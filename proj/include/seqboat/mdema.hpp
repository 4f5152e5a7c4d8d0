#pragma once

// Multi-dimensional damped EMA state space model in two equivalent modes:
// kernel materialization + FFT causal convolution for parallel processing,
// and a constant-cost recurrence for streaming.
//
//   u_t = beta .* s_t          (per EMA dim)
//   z_t = alpha .* u_t + phi .* z_{t-1},   phi = 1 - alpha .* delta
//   y_t = sum_i eta_i z_{t,i} + D .* s_t
//
// which unrolls to the convolution kernel K[t,j] = sum_i eta * phi^t * alpha
// * beta. Exponents run 0..n-1 so K[0] is the instantaneous tap, matching
// the first recurrence step.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "seqboat/fft.hpp"
#include "seqboat/ops.hpp"
#include "seqboat/tensor.hpp"

namespace seqboat {

struct MdEmaParams {
  Tensor eta;        // [h, d_m]
  Tensor alpha_raw;  // [h, d_m]; alpha = sigmoid(alpha_raw) in [0,1]
  Tensor delta_raw;  // [h, d_m]; delta = sigmoid(delta_raw) in [0,1]
  Tensor beta;       // [h, d_m]
  Tensor d_skip;     // [d_m] residual skip weights
  int h = 0;
  int d_m = 0;
};

struct EmaState {
  std::vector<double> z;  // [h * d_m], zeros at session start

  static EmaState init(const MdEmaParams& params) {
    EmaState s;
    s.z.assign(static_cast<std::size_t>(params.h) * params.d_m, 0.0);
    return s;
  }
};

// K[t, j] = sum_i eta[i,j] * phi[i,j]^t * alpha[i,j] * beta[i,j], built with a
// running phi-product so the cost is O(n h d_m).
inline Tensor materialize_kernel(const MdEmaParams& params, int n) {
  if (n < 1) throw std::invalid_argument("materialize_kernel: n must be >= 1");
  Tensor alpha = sigmoid(params.alpha_raw);
  Tensor delta = sigmoid(params.delta_raw);
  Tensor phi = sub(Tensor::full(alpha.shape, 1.0), mul(alpha, delta));
  Tensor tap = mul(mul(params.eta, alpha), params.beta);  // [h, d_m]

  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(n));
  Tensor running = tap;
  for (int t = 0; t < n; ++t) {
    rows.push_back(sum_axis0(running));
    if (t + 1 < n) running = mul(running, phi);
  }
  return stack_rows(rows);
}

// SSM(S) = K * S + D .* S with the convolution applied per channel.
inline Tensor ssm_parallel(const Tensor& s, const MdEmaParams& params) {
  if (s.ndim() != 2 || s.dim(1) != params.d_m)
    throw std::invalid_argument("ssm_parallel: expected [n, d_m]");
  const int n = s.dim(0);
  Tensor kernel = materialize_kernel(params, n);
  Tensor conv = causal_convolve(kernel, s);
  return add(conv, rowvec_mul(s, params.d_skip));
}

// Batch form: the kernel is materialized (and its spectra computed) once and
// shared by every signal in the batch; gradients accumulate through the one
// shared kernel subgraph.
inline std::shared_ptr<ConvPlan> make_ssm_plan(const MdEmaParams& params, int n) {
  return make_conv_plan(materialize_kernel(params, n));
}

inline Tensor ssm_parallel_planned(const Tensor& s, const MdEmaParams& params,
                                   const std::shared_ptr<ConvPlan>& plan) {
  if (s.ndim() != 2 || s.dim(1) != params.d_m)
    throw std::invalid_argument("ssm_parallel_planned: expected [n, d_m]");
  Tensor conv = causal_convolve_planned(plan, s);
  return add(conv, rowvec_mul(s, params.d_skip));
}

// One recurrence step; cost independent of t. Forward-only (streaming path).
inline std::vector<double> ssm_step(EmaState& state, const std::vector<double>& s_t,
                                    const MdEmaParams& params) {
  if (static_cast<int>(s_t.size()) != params.d_m)
    throw std::invalid_argument("ssm_step: input size mismatch");
  const int h = params.h, d = params.d_m;
  std::vector<double> y(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    double acc = 0.0;
    for (int i = 0; i < h; ++i) {
      const std::size_t ij = static_cast<std::size_t>(i) * d + j;
      const double alpha = detail::sigmoid_s((*params.alpha_raw.data)[ij]);
      const double delta = detail::sigmoid_s((*params.delta_raw.data)[ij]);
      const double phi = 1.0 - alpha * delta;
      const double u = (*params.beta.data)[ij] * s_t[static_cast<std::size_t>(j)];
      state.z[ij] = alpha * u + phi * state.z[ij];
      acc += (*params.eta.data)[ij] * state.z[ij];
    }
    y[static_cast<std::size_t>(j)] =
        acc + (*params.d_skip.data)[static_cast<std::size_t>(j)] * s_t[static_cast<std::size_t>(j)];
  }
  return y;
}

}  // namespace seqboat
