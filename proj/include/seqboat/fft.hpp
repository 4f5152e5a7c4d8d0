#pragma once

// Radix-2 FFT and the FFT-backed causal convolution used by the SSM path.
//
// causal_convolve computes out[t,j] = sum_{k<=t} kernel[k,j] * signal[t-k,j]
// per channel via zero-padded FFTs of the smallest power of two >= 2n. Its
// backward rule is the convolution-theorem adjoint: gradients w.r.t. both
// arguments are causal cross-correlations with the output gradient, computed
// with the same padded transforms.

#include <algorithm>
#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

#include "seqboat/tensor.hpp"

namespace seqboat {

namespace detail {

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative Cooley-Tukey. invert=true applies the conjugate
// transform and the 1/N scale.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool invert) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (invert ? 2.0 : -2.0) * 3.14159265358979323846 / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (invert) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv_n;
  }
}

// res[t] = sum_{k<=t} a[k] * b[t-k] for t in [0, n), via a length >= 2n FFT.
inline void causal_conv_channel(const double* a, const double* b, double* res, std::size_t n) {
  const std::size_t m = next_pow2(2 * n);
  std::vector<std::complex<double>> fa(m, {0.0, 0.0}), fb(m, {0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) fa[i] = a[i];
  for (std::size_t i = 0; i < n; ++i) fb[i] = b[i];
  fft_inplace(fa, false);
  fft_inplace(fb, false);
  for (std::size_t i = 0; i < m; ++i) fa[i] *= fb[i];
  fft_inplace(fa, true);
  for (std::size_t i = 0; i < n; ++i) res[i] = fa[i].real();
}

// res[k] = sum_{t>=k} a[t] * b[t-k] for k in [0, n): the adjoint of the
// causal convolution in either argument. Implemented as a full convolution
// of a with time-reversed b, read off at lags n-1 .. 2n-2.
inline void causal_corr_channel(const double* a, const double* b, double* res, std::size_t n) {
  const std::size_t m = next_pow2(2 * n);
  std::vector<std::complex<double>> fa(m, {0.0, 0.0}), fb(m, {0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) fa[i] = a[i];
  for (std::size_t i = 0; i < n; ++i) fb[i] = b[n - 1 - i];
  fft_inplace(fa, false);
  fft_inplace(fb, false);
  for (std::size_t i = 0; i < m; ++i) fa[i] *= fb[i];
  fft_inplace(fa, true);
  for (std::size_t k = 0; k < n; ++k) res[k] = fa[n - 1 + k].real();
}

}  // namespace detail

// Precomputed kernel spectra for convolving one kernel against many signals
// (a training batch shares each layer's kernel). Valid for one set of kernel
// values; rebuild after any parameter update.
struct ConvPlan {
  Tensor kernel;  // [n, d]; grads accumulate here across all planned convs
  int n = 0, d = 0;
  std::size_t m = 0;
  std::vector<std::vector<std::complex<double>>> kernel_fft;      // per channel
  std::vector<std::vector<std::complex<double>>> rev_kernel_fft;  // per channel
};

inline std::shared_ptr<ConvPlan> make_conv_plan(const Tensor& kernel) {
  if (kernel.ndim() != 2) throw std::invalid_argument("make_conv_plan: expected [n, d]");
  auto plan = std::make_shared<ConvPlan>();
  plan->kernel = kernel;
  plan->n = kernel.dim(0);
  plan->d = kernel.dim(1);
  plan->m = detail::next_pow2(2 * static_cast<std::size_t>(plan->n));
  plan->kernel_fft.resize(static_cast<std::size_t>(plan->d));
  plan->rev_kernel_fft.resize(static_cast<std::size_t>(plan->d));
  for (int j = 0; j < plan->d; ++j) {
    auto& kf = plan->kernel_fft[static_cast<std::size_t>(j)];
    auto& rkf = plan->rev_kernel_fft[static_cast<std::size_t>(j)];
    kf.assign(plan->m, {0.0, 0.0});
    rkf.assign(plan->m, {0.0, 0.0});
    for (int t = 0; t < plan->n; ++t) {
      kf[static_cast<std::size_t>(t)] = kernel.at(t, j);
      rkf[static_cast<std::size_t>(plan->n - 1 - t)] = kernel.at(t, j);
    }
    detail::fft_inplace(kf, false);
    detail::fft_inplace(rkf, false);
  }
  return plan;
}

// Same contract as causal_convolve with the kernel factored out. The forward
// signal spectra are kept so the backward pass reuses them for the kernel
// gradient (spectrum of a reversed real sequence is a twiddled conjugate).
inline Tensor causal_convolve_planned(const std::shared_ptr<ConvPlan>& plan, const Tensor& signal) {
  const int n = plan->n, d = plan->d;
  if (signal.ndim() != 2 || signal.dim(0) != n || signal.dim(1) != d)
    throw std::invalid_argument("causal_convolve_planned: shape mismatch");
  if (!signal.all_finite()) throw std::invalid_argument("causal_convolve_planned: non-finite input");
  const std::size_t m = plan->m;
  Tensor out = Tensor::zeros({n, d}, wants_grad(plan->kernel) || wants_grad(signal));

  auto signal_fft = std::make_shared<std::vector<std::vector<std::complex<double>>>>(
      static_cast<std::size_t>(d));
  std::vector<std::complex<double>> work(m);
  for (int j = 0; j < d; ++j) {
    auto& sf = (*signal_fft)[static_cast<std::size_t>(j)];
    sf.assign(m, {0.0, 0.0});
    for (int t = 0; t < n; ++t) sf[static_cast<std::size_t>(t)] = signal.at(t, j);
    detail::fft_inplace(sf, false);
    for (std::size_t i = 0; i < m; ++i) work[i] = sf[i] * plan->kernel_fft[static_cast<std::size_t>(j)][i];
    detail::fft_inplace(work, true);
    for (int t = 0; t < n; ++t) out.at(t, j) = work[static_cast<std::size_t>(t)].real();
  }

  if (out.requires_grad) {
    Tensor kernel = plan->kernel;
    auto rev_kernel_fft = plan->rev_kernel_fft;  // copy: the plan may die first
    tape_record([kernel, signal, out, signal_fft, rev_kernel_fft, n, d, m]() {
      std::vector<std::complex<double>> gf(m), work2(m);
      for (int j = 0; j < d; ++j) {
        std::fill(gf.begin(), gf.end(), std::complex<double>(0.0, 0.0));
        for (int t = 0; t < n; ++t)
          gf[static_cast<std::size_t>(t)] = (*out.grad)[static_cast<std::size_t>(t) * d + j];
        detail::fft_inplace(gf, false);
        if (signal.requires_grad) {
          for (std::size_t i = 0; i < m; ++i)
            work2[i] = gf[i] * rev_kernel_fft[static_cast<std::size_t>(j)][i];
          detail::fft_inplace(work2, true);
          for (int t = 0; t < n; ++t)
            (*signal.grad)[static_cast<std::size_t>(t) * d + j] +=
                work2[static_cast<std::size_t>(n - 1 + t)].real();
        }
        if (kernel.requires_grad) {
          // FFT of the reversed signal from the cached spectrum.
          const auto& sf = (*signal_fft)[static_cast<std::size_t>(j)];
          const double ang0 = -2.0 * 3.14159265358979323846 * (n - 1) / static_cast<double>(m);
          for (std::size_t i = 0; i < m; ++i) {
            const double ang = ang0 * static_cast<double>(i);
            const std::complex<double> twiddle(std::cos(ang), std::sin(ang));
            work2[i] = gf[i] * (twiddle * std::conj(sf[i]));
          }
          detail::fft_inplace(work2, true);
          for (int t = 0; t < n; ++t)
            (*kernel.grad)[static_cast<std::size_t>(t) * d + j] +=
                work2[static_cast<std::size_t>(n - 1 + t)].real();
        }
      }
    });
  }
  return out;
}

// Per-channel causal convolution of kernel and signal, both [n, d].
inline Tensor causal_convolve(const Tensor& kernel, const Tensor& signal) {
  check_same_shape(kernel, signal, "causal_convolve");
  if (kernel.ndim() != 2) throw std::invalid_argument("causal_convolve: expected [n, d] tensors");
  if (!kernel.all_finite() || !signal.all_finite())
    throw std::invalid_argument("causal_convolve: non-finite input");
  const int n = kernel.dim(0), d = kernel.dim(1);
  Tensor out = Tensor::zeros({n, d}, wants_grad(kernel) || wants_grad(signal));
  if (n == 0 || d == 0) return out;

  std::vector<double> ka(static_cast<std::size_t>(n)), sa(static_cast<std::size_t>(n)),
      ra(static_cast<std::size_t>(n));
  for (int j = 0; j < d; ++j) {
    for (int t = 0; t < n; ++t) {
      ka[static_cast<std::size_t>(t)] = kernel.at(t, j);
      sa[static_cast<std::size_t>(t)] = signal.at(t, j);
    }
    detail::causal_conv_channel(ka.data(), sa.data(), ra.data(), static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) out.at(t, j) = ra[static_cast<std::size_t>(t)];
  }

  if (out.requires_grad) {
    tape_record([kernel, signal, out, n, d]() {
      std::vector<double> g(static_cast<std::size_t>(n)), other(static_cast<std::size_t>(n)),
          acc(static_cast<std::size_t>(n));
      for (int j = 0; j < d; ++j) {
        for (int t = 0; t < n; ++t)
          g[static_cast<std::size_t>(t)] = (*out.grad)[static_cast<std::size_t>(t) * d + j];
        if (kernel.requires_grad) {
          for (int t = 0; t < n; ++t) other[static_cast<std::size_t>(t)] = signal.at(t, j);
          detail::causal_corr_channel(g.data(), other.data(), acc.data(), static_cast<std::size_t>(n));
          for (int t = 0; t < n; ++t)
            (*kernel.grad)[static_cast<std::size_t>(t) * d + j] += acc[static_cast<std::size_t>(t)];
        }
        if (signal.requires_grad) {
          for (int t = 0; t < n; ++t) other[static_cast<std::size_t>(t)] = kernel.at(t, j);
          detail::causal_corr_channel(g.data(), other.data(), acc.data(), static_cast<std::size_t>(n));
          for (int t = 0; t < n; ++t)
            (*signal.grad)[static_cast<std::size_t>(t) * d + j] += acc[static_cast<std::size_t>(t)];
        }
      }
    });
  }
  return out;
}

}  // namespace seqboat
