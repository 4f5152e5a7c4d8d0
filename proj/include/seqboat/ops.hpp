#pragma once

// Differentiable operations on Tensor. Every op computes its forward result
// eagerly and, when a tape is active and an input requires grad, records a
// backward closure that accumulates into the inputs' grad buffers.
//
// Scalar kernels shared with the streaming (forward-only) code paths live in
// detail:: so that parallel and recurrent modes evaluate identical arithmetic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "seqboat/tensor.hpp"

namespace seqboat {

namespace detail {

inline double sigmoid_s(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double silu_s(double x) { return x * sigmoid_s(x); }

// y = (x - mean) / sqrt(var + eps) * gamma + beta over one row of length d.
inline void layernorm_row(const double* x, const double* gamma, const double* beta, double eps,
                          int d, double* y, double* inv_std_out = nullptr,
                          double* mean_out = nullptr) {
  double mean = 0.0;
  for (int j = 0; j < d; ++j) mean += x[j];
  mean /= d;
  double var = 0.0;
  for (int j = 0; j < d; ++j) {
    const double c = x[j] - mean;
    var += c * c;
  }
  var /= d;
  const double inv_std = 1.0 / std::sqrt(var + eps);
  for (int j = 0; j < d; ++j) y[j] = (x[j] - mean) * inv_std * gamma[j] + beta[j];
  if (inv_std_out) *inv_std_out = inv_std;
  if (mean_out) *mean_out = mean;
}

// y = g * x / sqrt(mean(x^2) + eps) over one row.
inline void scalenorm_row(const double* x, double g, double eps, int d, double* y,
                          double* inv_rms_out = nullptr) {
  double ms = 0.0;
  for (int j = 0; j < d; ++j) ms += x[j] * x[j];
  ms /= d;
  const double inv_rms = 1.0 / std::sqrt(ms + eps);
  for (int j = 0; j < d; ++j) y[j] = g * x[j] * inv_rms;
  if (inv_rms_out) *inv_rms_out = inv_rms;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape, wants_grad(a) || wants_grad(b));
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  if (out.requires_grad) {
    tape_record([a, b, out, n]() {
      if (a.requires_grad)
        for (std::int64_t i = 0; i < n; ++i) (*a.grad)[i] += (*out.grad)[i];
      if (b.requires_grad)
        for (std::int64_t i = 0; i < n; ++i) (*b.grad)[i] += (*out.grad)[i];
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape, wants_grad(a) || wants_grad(b));
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  if (out.requires_grad) {
    tape_record([a, b, out, n]() {
      if (a.requires_grad)
        for (std::int64_t i = 0; i < n; ++i) (*a.grad)[i] += (*out.grad)[i];
      if (b.requires_grad)
        for (std::int64_t i = 0; i < n; ++i) (*b.grad)[i] -= (*out.grad)[i];
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape, wants_grad(a) || wants_grad(b));
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  if (out.requires_grad) {
    tape_record([a, b, out, n]() {
      if (a.requires_grad)
        for (std::int64_t i = 0; i < n; ++i) (*a.grad)[i] += (*out.grad)[i] * (*b.data)[i];
      if (b.requires_grad)
        for (std::int64_t i = 0; i < n; ++i) (*b.grad)[i] += (*out.grad)[i] * (*a.data)[i];
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape, wants_grad(a));
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * s;
  if (out.requires_grad) {
    tape_record([a, out, s, n]() {
      for (std::int64_t i = 0; i < n; ++i) (*a.grad)[i] += (*out.grad)[i] * s;
    });
  }
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape, wants_grad(a));
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = detail::sigmoid_s((*a.data)[i]);
  if (out.requires_grad) {
    tape_record([a, out, n]() {
      for (std::int64_t i = 0; i < n; ++i) {
        const double y = (*out.data)[i];
        (*a.grad)[i] += (*out.grad)[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

inline Tensor exp_elem(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape, wants_grad(a));
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = std::exp((*a.data)[i]);
  if (out.requires_grad) {
    tape_record([a, out, n]() {
      for (std::int64_t i = 0; i < n; ++i) (*a.grad)[i] += (*out.grad)[i] * (*out.data)[i];
    });
  }
  return out;
}

// x * sigmoid(x)
inline Tensor silu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape, wants_grad(a));
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = detail::silu_s((*a.data)[i]);
  if (out.requires_grad) {
    tape_record([a, out, n]() {
      for (std::int64_t i = 0; i < n; ++i) {
        const double x = (*a.data)[i];
        const double s = detail::sigmoid_s(x);
        (*a.grad)[i] += (*out.grad)[i] * (s + x * s * (1.0 - s));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: shape mismatch");
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out = Tensor::zeros({n, m}, wants_grad(a) || wants_grad(b));
  const double* __restrict pa = a.ptr();
  const double* __restrict pb = b.ptr();
  double* __restrict po = out.data->data();
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      const double av = pa[static_cast<std::size_t>(i) * k + p];
      const double* __restrict pbrow = pb + static_cast<std::size_t>(p) * m;
      double* __restrict porow = po + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) porow[j] += av * pbrow[j];
    }
  if (out.requires_grad) {
    tape_record([a, b, out, n, k, m]() {
      const double* __restrict go = out.grad->data();
      if (a.requires_grad) {  // dA[i,p] += dot(G[i,:], B[p,:])
        double* __restrict ga = a.grad->data();
        const double* __restrict pb2 = b.ptr();
        for (int i = 0; i < n; ++i) {
          const double* __restrict gorow = go + static_cast<std::size_t>(i) * m;
          for (int p = 0; p < k; ++p) {
            const double* __restrict pbrow = pb2 + static_cast<std::size_t>(p) * m;
            double acc = 0.0;
            for (int j = 0; j < m; ++j) acc += gorow[j] * pbrow[j];
            ga[static_cast<std::size_t>(i) * k + p] += acc;
          }
        }
      }
      if (b.requires_grad) {  // dB += A^T G
        double* __restrict gb = b.grad->data();
        const double* __restrict pa2 = a.ptr();
        for (int i = 0; i < n; ++i) {
          const double* __restrict gorow = go + static_cast<std::size_t>(i) * m;
          for (int p = 0; p < k; ++p) {
            const double av = pa2[static_cast<std::size_t>(i) * k + p];
            double* __restrict gbrow = gb + static_cast<std::size_t>(p) * m;
            for (int j = 0; j < m; ++j) gbrow[j] += av * gorow[j];
          }
        }
      }
    });
  }
  return out;
}

// A [n,k] times B^T where B is [m,k]; result [n,m]. Used for Q K^T.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw std::invalid_argument("matmul_nt: shape mismatch");
  const int n = a.dim(0), k = a.dim(1), m = b.dim(0);
  Tensor out = Tensor::zeros({n, m}, wants_grad(a) || wants_grad(b));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a.at(i, p) * b.at(j, p);
      out.at(i, j) = s;
    }
  if (out.requires_grad) {
    tape_record([a, b, out, n, k, m]() {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          const double g = (*out.grad)[static_cast<std::size_t>(i) * m + j];
          if (g == 0.0) continue;
          if (a.requires_grad)
            for (int p = 0; p < k; ++p) (*a.grad)[static_cast<std::size_t>(i) * k + p] += g * b.at(j, p);
          if (b.requires_grad)
            for (int p = 0; p < k; ++p) (*b.grad)[static_cast<std::size_t>(j) * k + p] += g * a.at(i, p);
        }
    });
  }
  return out;
}

// A [n,k] B^T restricted to allowed entries; disallowed outputs stay zero and
// receive no compute in either pass. Banded attention logits.
inline Tensor masked_matmul_nt(const Tensor& a, const Tensor& b,
                               const std::vector<std::uint8_t>& allowed) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw std::invalid_argument("masked_matmul_nt: shape mismatch");
  const int n = a.dim(0), k = a.dim(1), m = b.dim(0);
  if (static_cast<std::int64_t>(allowed.size()) != static_cast<std::int64_t>(n) * m)
    throw std::invalid_argument("masked_matmul_nt: mask size mismatch");
  Tensor out = Tensor::zeros({n, m}, wants_grad(a) || wants_grad(b));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      if (!allowed[static_cast<std::size_t>(i) * m + j]) continue;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a.at(i, p) * b.at(j, p);
      out.at(i, j) = s;
    }
  if (out.requires_grad) {
    tape_record([a, b, out, allowed, n, k, m]() {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          if (!allowed[static_cast<std::size_t>(i) * m + j]) continue;
          const double g = (*out.grad)[static_cast<std::size_t>(i) * m + j];
          if (g == 0.0) continue;
          if (a.requires_grad)
            for (int p = 0; p < k; ++p)
              (*a.grad)[static_cast<std::size_t>(i) * k + p] += g * b.at(j, p);
          if (b.requires_grad)
            for (int p = 0; p < k; ++p)
              (*b.grad)[static_cast<std::size_t>(j) * k + p] += g * a.at(i, p);
        }
    });
  }
  return out;
}

// W [n,m] times V [m,d] where W is nonzero only at allowed entries.
inline Tensor masked_matmul(const Tensor& w, const Tensor& v,
                            const std::vector<std::uint8_t>& allowed) {
  if (w.ndim() != 2 || v.ndim() != 2 || w.dim(1) != v.dim(0))
    throw std::invalid_argument("masked_matmul: shape mismatch");
  const int n = w.dim(0), m = w.dim(1), d = v.dim(1);
  if (static_cast<std::int64_t>(allowed.size()) != static_cast<std::int64_t>(n) * m)
    throw std::invalid_argument("masked_matmul: mask size mismatch");
  Tensor out = Tensor::zeros({n, d}, wants_grad(w) || wants_grad(v));
  for (int i = 0; i < n; ++i) {
    double* orow = out.data->data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < m; ++j) {
      if (!allowed[static_cast<std::size_t>(i) * m + j]) continue;
      const double wv = w.at(i, j);
      const double* vrow = v.ptr() + static_cast<std::size_t>(j) * d;
      for (int p = 0; p < d; ++p) orow[p] += wv * vrow[p];
    }
  }
  if (out.requires_grad) {
    tape_record([w, v, out, allowed, n, m, d]() {
      for (int i = 0; i < n; ++i) {
        const double* grow = out.grad->data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < m; ++j) {
          if (!allowed[static_cast<std::size_t>(i) * m + j]) continue;
          if (w.requires_grad) {
            const double* vrow = v.ptr() + static_cast<std::size_t>(j) * d;
            double acc = 0.0;
            for (int p = 0; p < d; ++p) acc += grow[p] * vrow[p];
            (*w.grad)[static_cast<std::size_t>(i) * m + j] += acc;
          }
          if (v.requires_grad) {
            const double wv = w.at(i, j);
            if (wv == 0.0) continue;
            double* gvrow = v.grad->data() + static_cast<std::size_t>(j) * d;
            for (int p = 0; p < d; ++p) gvrow[p] += wv * grow[p];
          }
        }
      }
    });
  }
  return out;
}

// X [n,d] times w [d] -> [n]
inline Tensor matvec(const Tensor& x, const Tensor& w) {
  if (x.ndim() != 2 || w.ndim() != 1 || x.dim(1) != w.dim(0))
    throw std::invalid_argument("matvec: shape mismatch");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros({n}, wants_grad(x) || wants_grad(w));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += x.at(i, j) * w.at(j);
    out.at(i) = s;
  }
  if (out.requires_grad) {
    tape_record([x, w, out, n, d]() {
      for (int i = 0; i < n; ++i) {
        const double g = (*out.grad)[static_cast<std::size_t>(i)];
        if (g == 0.0) continue;
        if (x.requires_grad)
          for (int j = 0; j < d; ++j) (*x.grad)[static_cast<std::size_t>(i) * d + j] += g * w.at(j);
        if (w.requires_grad)
          for (int j = 0; j < d; ++j) (*w.grad)[static_cast<std::size_t>(j)] += g * x.at(i, j);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// broadcasts
// ---------------------------------------------------------------------------

// X [n,d] with v [d]: every row scaled elementwise by v.
inline Tensor rowvec_mul(const Tensor& x, const Tensor& v) {
  if (x.ndim() != 2 || v.ndim() != 1 || x.dim(1) != v.dim(0))
    throw std::invalid_argument("rowvec_mul: shape mismatch");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros({n, d}, wants_grad(x) || wants_grad(v));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) * v.at(j);
  if (out.requires_grad) {
    tape_record([x, v, out, n, d]() {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          const double g = (*out.grad)[static_cast<std::size_t>(i) * d + j];
          if (x.requires_grad) (*x.grad)[static_cast<std::size_t>(i) * d + j] += g * v.at(j);
          if (v.requires_grad) (*v.grad)[static_cast<std::size_t>(j)] += g * x.at(i, j);
        }
    });
  }
  return out;
}

// X [n,d] plus v [d] broadcast over rows.
inline Tensor rowvec_add(const Tensor& x, const Tensor& v) {
  if (x.ndim() != 2 || v.ndim() != 1 || x.dim(1) != v.dim(0))
    throw std::invalid_argument("rowvec_add: shape mismatch");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros({n, d}, wants_grad(x) || wants_grad(v));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) + v.at(j);
  if (out.requires_grad) {
    tape_record([x, v, out, n, d]() {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          const double g = (*out.grad)[static_cast<std::size_t>(i) * d + j];
          if (x.requires_grad) (*x.grad)[static_cast<std::size_t>(i) * d + j] += g;
          if (v.requires_grad) (*v.grad)[static_cast<std::size_t>(j)] += g;
        }
    });
  }
  return out;
}

// X [n,d] with u [n]: row i scaled by u[i]. Confidence scaling c .* Y.
inline Tensor colvec_mul(const Tensor& x, const Tensor& u) {
  if (x.ndim() != 2 || u.ndim() != 1 || x.dim(0) != u.dim(0))
    throw std::invalid_argument("colvec_mul: shape mismatch");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros({n, d}, wants_grad(x) || wants_grad(u));
  for (int i = 0; i < n; ++i) {
    const double s = u.at(i);
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) * s;
  }
  if (out.requires_grad) {
    tape_record([x, u, out, n, d]() {
      for (int i = 0; i < n; ++i) {
        const double s = u.at(i);
        double du = 0.0;
        for (int j = 0; j < d; ++j) {
          const double g = (*out.grad)[static_cast<std::size_t>(i) * d + j];
          if (x.requires_grad) (*x.grad)[static_cast<std::size_t>(i) * d + j] += g * s;
          du += g * x.at(i, j);
        }
        if (u.requires_grad) (*u.grad)[static_cast<std::size_t>(i)] += du;
      }
    });
  }
  return out;
}

// x + s where s is a one-element tensor broadcast everywhere.
inline Tensor add_scalar_t(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw std::invalid_argument("add_scalar_t: s must be scalar");
  Tensor out = Tensor::zeros(x.shape, wants_grad(x) || wants_grad(s));
  const std::int64_t n = x.numel();
  const double sv = (*s.data)[0];
  for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] + sv;
  if (out.requires_grad) {
    tape_record([x, s, out, n]() {
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double g = (*out.grad)[i];
        if (x.requires_grad) (*x.grad)[i] += g;
        acc += g;
      }
      if (s.requires_grad) (*s.grad)[0] += acc;
    });
  }
  return out;
}

// x / s with a one-element tensor s.
inline Tensor div_scalar_t(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw std::invalid_argument("div_scalar_t: s must be scalar");
  const double sv = (*s.data)[0];
  if (sv == 0.0) throw std::invalid_argument("div_scalar_t: division by zero");
  Tensor out = Tensor::zeros(x.shape, wants_grad(x) || wants_grad(s));
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] / sv;
  if (out.requires_grad) {
    tape_record([x, s, out, n, sv]() {
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double g = (*out.grad)[i];
        if (x.requires_grad) (*x.grad)[i] += g / sv;
        acc += g * (*x.data)[i];
      }
      if (s.requires_grad) (*s.grad)[0] -= acc / (sv * sv);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions / reshaping
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::zeros({1}, wants_grad(x));
  double s = 0.0;
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) s += (*x.data)[i];
  (*out.data)[0] = s;
  if (out.requires_grad) {
    tape_record([x, out, n]() {
      const double g = (*out.grad)[0];
      for (std::int64_t i = 0; i < n; ++i) (*x.grad)[i] += g;
    });
  }
  return out;
}

// Column means of [n,d] -> [d]. Pooling for classification heads.
inline Tensor mean_rows(const Tensor& x) {
  if (x.ndim() != 2) throw std::invalid_argument("mean_rows: expected [n, d]");
  const int n = x.dim(0), d = x.dim(1);
  if (n == 0) throw std::invalid_argument("mean_rows: empty input");
  Tensor out = Tensor::zeros({d}, wants_grad(x));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(j) += x.at(i, j);
  for (int j = 0; j < d; ++j) out.at(j) /= n;
  if (out.requires_grad) {
    tape_record([x, out, n, d]() {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          (*x.grad)[static_cast<std::size_t>(i) * d + j] += (*out.grad)[static_cast<std::size_t>(j)] / n;
    });
  }
  return out;
}

// Sum over the leading axis of [h,d] -> [d].
inline Tensor sum_axis0(const Tensor& x) {
  if (x.ndim() != 2) throw std::invalid_argument("sum_axis0: expected [h, d]");
  const int h = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros({d}, wants_grad(x));
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < d; ++j) out.at(j) += x.at(i, j);
  if (out.requires_grad) {
    tape_record([x, out, h, d]() {
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < d; ++j)
          (*x.grad)[static_cast<std::size_t>(i) * d + j] += (*out.grad)[static_cast<std::size_t>(j)];
    });
  }
  return out;
}

// Stacks n vectors of length d into [n,d].
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
  const int d = rows[0].dim(0);
  const int n = static_cast<int>(rows.size());
  bool rg = false;
  for (const Tensor& r : rows) {
    if (r.ndim() != 1 || r.dim(0) != d) throw std::invalid_argument("stack_rows: ragged input");
    rg = rg || wants_grad(r);
  }
  Tensor out = Tensor::zeros({n, d}, rg);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = rows[static_cast<std::size_t>(i)].at(j);
  if (out.requires_grad) {
    tape_record([rows, out, n, d]() {
      for (int i = 0; i < n; ++i) {
        const Tensor& r = rows[static_cast<std::size_t>(i)];
        if (!r.requires_grad) continue;
        for (int j = 0; j < d; ++j)
          (*r.grad)[static_cast<std::size_t>(j)] += (*out.grad)[static_cast<std::size_t>(i) * d + j];
      }
    });
  }
  return out;
}

// Rows of table selected by idx; duplicate indices accumulate on backward.
// Embedding lookup.
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& idx) {
  if (table.ndim() != 2) throw std::invalid_argument("gather_rows: expected [v, d] table");
  const int v = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(idx.size());
  for (int i : idx)
    if (i < 0 || i >= v) throw std::out_of_range("gather_rows: index out of range");
  Tensor out = Tensor::zeros({n, d}, wants_grad(table));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = table.at(idx[static_cast<std::size_t>(i)], j);
  if (out.requires_grad) {
    tape_record([table, out, idx, n, d]() {
      for (int i = 0; i < n; ++i) {
        const int r = idx[static_cast<std::size_t>(i)];
        for (int j = 0; j < d; ++j)
          (*table.grad)[static_cast<std::size_t>(r) * d + j] +=
              (*out.grad)[static_cast<std::size_t>(i) * d + j];
      }
    });
  }
  return out;
}

// Scalar lookups out of a 1-d table; general gather used for the relative
// position bias matrix.
inline Tensor gather_table(const Tensor& table, const std::vector<int>& idx,
                           std::vector<int> out_shape) {
  if (table.ndim() != 1) throw std::invalid_argument("gather_table: expected 1-d table");
  if (Tensor::count(out_shape) != static_cast<std::int64_t>(idx.size()))
    throw std::invalid_argument("gather_table: shape/index mismatch");
  const int v = table.dim(0);
  for (int i : idx)
    if (i < 0 || i >= v) throw std::out_of_range("gather_table: index out of range");
  Tensor out = Tensor::zeros(std::move(out_shape), wants_grad(table));
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = table.at(idx[static_cast<std::size_t>(i)]);
  if (out.requires_grad) {
    tape_record([table, out, idx, n]() {
      for (std::int64_t i = 0; i < n; ++i)
        (*table.grad)[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] += (*out.grad)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax and attention weight functions
// ---------------------------------------------------------------------------

// Stabilized softmax over the last dimension; rows sum to 1.
inline Tensor softmax_lastdim(const Tensor& x) {
  if (x.ndim() < 1) throw std::invalid_argument("softmax_lastdim: rank-0 input");
  const int k = x.shape.back();
  if (k == 0) throw std::invalid_argument("softmax_lastdim: empty last dim");
  const std::int64_t rows = x.numel() / k;
  Tensor out = Tensor::zeros(x.shape, wants_grad(x));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xi = x.ptr() + r * k;
    double* yi = out.data->data() + r * k;
    double mx = xi[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      z += yi[j];
    }
    for (int j = 0; j < k; ++j) yi[j] /= z;
  }
  if (out.requires_grad) {
    tape_record([x, out, rows, k]() {
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* y = out.ptr() + r * k;
        const double* g = out.grad->data() + r * k;
        double dot = 0.0;
        for (int j = 0; j < k; ++j) dot += y[j] * g[j];
        for (int j = 0; j < k; ++j) (*x.grad)[r * k + j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

// Row-wise softmax over allowed entries only. Disallowed entries get weight
// zero; a row with no allowed entry is all-zero rather than NaN.
inline Tensor masked_softmax_rows(const Tensor& logits, const std::vector<std::uint8_t>& allowed) {
  if (logits.ndim() != 2) throw std::invalid_argument("masked_softmax_rows: expected [n, m]");
  const int n = logits.dim(0), m = logits.dim(1);
  if (static_cast<std::int64_t>(allowed.size()) != logits.numel())
    throw std::invalid_argument("masked_softmax_rows: mask size mismatch");
  Tensor out = Tensor::zeros({n, m}, wants_grad(logits));
  for (int i = 0; i < n; ++i) {
    const double* xi = logits.ptr() + static_cast<std::size_t>(i) * m;
    const std::uint8_t* ai = allowed.data() + static_cast<std::size_t>(i) * m;
    double* yi = out.data->data() + static_cast<std::size_t>(i) * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j)
      if (ai[j]) mx = std::max(mx, xi[j]);
    if (!std::isfinite(mx)) continue;  // empty row -> all-zero weights
    double z = 0.0;
    for (int j = 0; j < m; ++j) {
      if (ai[j]) {
        yi[j] = std::exp(xi[j] - mx);
        z += yi[j];
      }
    }
    for (int j = 0; j < m; ++j) yi[j] /= z;
  }
  if (out.requires_grad) {
    tape_record([logits, out, n, m]() {
      for (int i = 0; i < n; ++i) {
        const double* y = out.ptr() + static_cast<std::size_t>(i) * m;
        const double* g = out.grad->data() + static_cast<std::size_t>(i) * m;
        double dot = 0.0;
        for (int j = 0; j < m; ++j) dot += y[j] * g[j];
        for (int j = 0; j < m; ++j)
          (*logits.grad)[static_cast<std::size_t>(i) * m + j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

// relu(x)^2 elementwise with disallowed entries forced to zero. No row
// normalization; the 1/s logit scaling is the only normalizer.
inline Tensor masked_relu2(const Tensor& logits, const std::vector<std::uint8_t>& allowed) {
  if (static_cast<std::int64_t>(allowed.size()) != logits.numel())
    throw std::invalid_argument("masked_relu2: mask size mismatch");
  Tensor out = Tensor::zeros(logits.shape, wants_grad(logits));
  const std::int64_t n = logits.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    if (!allowed[static_cast<std::size_t>(i)]) continue;
    const double x = (*logits.data)[i];
    if (x > 0.0) (*out.data)[i] = x * x;
  }
  if (out.requires_grad) {
    tape_record([logits, out, allowed, n]() {
      for (std::int64_t i = 0; i < n; ++i) {
        if (!allowed[static_cast<std::size_t>(i)]) continue;
        const double x = (*logits.data)[i];
        if (x > 0.0) (*logits.grad)[i] += (*out.grad)[i] * 2.0 * x;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

inline Tensor layernorm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                             double eps = 1e-5) {
  if (x.ndim() != 2 || gamma.ndim() != 1 || beta.ndim() != 1 || gamma.dim(0) != x.dim(1) ||
      beta.dim(0) != x.dim(1))
    throw std::invalid_argument("layernorm_rows: shape mismatch");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros({n, d}, wants_grad(x) || wants_grad(gamma) || wants_grad(beta));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  auto means = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    detail::layernorm_row(x.ptr() + static_cast<std::size_t>(i) * d, gamma.ptr(), beta.ptr(), eps, d,
                          out.data->data() + static_cast<std::size_t>(i) * d,
                          &(*inv_std)[static_cast<std::size_t>(i)], &(*means)[static_cast<std::size_t>(i)]);
  if (out.requires_grad) {
    tape_record([x, gamma, beta, out, inv_std, means, n, d]() {
      for (int i = 0; i < n; ++i) {
        const double* xi = x.ptr() + static_cast<std::size_t>(i) * d;
        const double* gi = out.grad->data() + static_cast<std::size_t>(i) * d;
        const double is = (*inv_std)[static_cast<std::size_t>(i)];
        const double mu = (*means)[static_cast<std::size_t>(i)];
        // xhat = (x - mu) * is; dxhat = g * gamma
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < d; ++j) {
          const double xhat = (xi[j] - mu) * is;
          const double dxhat = gi[j] * gamma.at(j);
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          if (gamma.requires_grad) (*gamma.grad)[static_cast<std::size_t>(j)] += gi[j] * xhat;
          if (beta.requires_grad) (*beta.grad)[static_cast<std::size_t>(j)] += gi[j];
        }
        if (x.requires_grad) {
          for (int j = 0; j < d; ++j) {
            const double xhat = (xi[j] - mu) * is;
            const double dxhat = gi[j] * gamma.at(j);
            (*x.grad)[static_cast<std::size_t>(i) * d + j] +=
                is * (dxhat - sum_dxhat / d - xhat * sum_dxhat_xhat / d);
          }
        }
      }
    });
  }
  return out;
}

// Single learnable scalar g: y = g * x / sqrt(mean(x^2) + eps) per row.
inline Tensor scalenorm_rows(const Tensor& x, const Tensor& g, double eps = 1e-5) {
  if (x.ndim() != 2 || g.numel() != 1) throw std::invalid_argument("scalenorm_rows: shape mismatch");
  const int n = x.dim(0), d = x.dim(1);
  const double gv = (*g.data)[0];
  Tensor out = Tensor::zeros({n, d}, wants_grad(x) || wants_grad(g));
  auto inv_rms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    detail::scalenorm_row(x.ptr() + static_cast<std::size_t>(i) * d, gv, eps, d,
                          out.data->data() + static_cast<std::size_t>(i) * d,
                          &(*inv_rms)[static_cast<std::size_t>(i)]);
  if (out.requires_grad) {
    tape_record([x, g, out, inv_rms, n, d, gv, eps]() {
      for (int i = 0; i < n; ++i) {
        const double* xi = x.ptr() + static_cast<std::size_t>(i) * d;
        const double* go = out.grad->data() + static_cast<std::size_t>(i) * d;
        const double ir = (*inv_rms)[static_cast<std::size_t>(i)];
        double dot_gx = 0.0;
        for (int j = 0; j < d; ++j) dot_gx += go[j] * xi[j];
        if (g.requires_grad) (*g.grad)[0] += dot_gx * ir;
        if (x.requires_grad) {
          // y = g * x * ir, ir = (mean(x^2)+eps)^{-1/2}
          for (int j = 0; j < d; ++j)
            (*x.grad)[static_cast<std::size_t>(i) * d + j] +=
                gv * ir * go[j] - gv * ir * ir * ir * xi[j] * dot_gx / d;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Mean negative log-likelihood over masked rows of logits [n, V].
inline Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets,
                                 const std::vector<std::uint8_t>& mask) {
  if (logits.ndim() != 2) throw std::invalid_argument("cross_entropy_mean: expected [n, V]");
  const int n = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n)
    throw std::invalid_argument("cross_entropy_mean: target/mask length mismatch");
  int count = 0;
  for (int i = 0; i < n; ++i)
    if (mask[static_cast<std::size_t>(i)]) {
      if (targets[static_cast<std::size_t>(i)] < 0 || targets[static_cast<std::size_t>(i)] >= v)
        throw std::out_of_range("cross_entropy_mean: target out of range");
      ++count;
    }
  if (count == 0) throw std::invalid_argument("cross_entropy_mean: empty mask");
  Tensor out = Tensor::zeros({1}, wants_grad(logits));
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const double* xi = logits.ptr() + static_cast<std::size_t>(i) * v;
    double mx = xi[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < v; ++j) z += std::exp(xi[j] - mx);
    total += mx + std::log(z) - xi[targets[static_cast<std::size_t>(i)]];
  }
  (*out.data)[0] = total / count;
  if (out.requires_grad) {
    tape_record([logits, out, targets, mask, n, v, count]() {
      const double g = (*out.grad)[0] / count;
      for (int i = 0; i < n; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const double* xi = logits.ptr() + static_cast<std::size_t>(i) * v;
        double mx = xi[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, xi[j]);
        double z = 0.0;
        for (int j = 0; j < v; ++j) z += std::exp(xi[j] - mx);
        for (int j = 0; j < v; ++j) {
          const double p = std::exp(xi[j] - mx) / z;
          const double onehot = (j == targets[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
          (*logits.grad)[static_cast<std::size_t>(i) * v + j] += g * (p - onehot);
        }
      }
    });
  }
  return out;
}

}  // namespace seqboat
