#pragma once

// Shared helpers for the unit suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "seqboat/tensor.hpp"

namespace testutil {

// Central finite differences against tape gradients over every coordinate of
// every leaf. Returns the max relative error.
inline double fd_check(const std::function<seqboat::Tensor()>& loss_fn,
                       std::vector<seqboat::Tensor> leaves, double eps = 1e-5) {
  for (auto& l : leaves) l.zero_grad();
  seqboat::Tape tape;
  {
    seqboat::TapeScope scope(tape);
    seqboat::Tensor loss = loss_fn();
    tape.backward(loss);
  }
  double max_rel = 0.0;
  for (auto& leaf : leaves) {
    for (std::int64_t i = 0; i < leaf.numel(); ++i) {
      const double orig = (*leaf.data)[i];
      (*leaf.data)[i] = orig + eps;
      const double fp = loss_fn().value();
      (*leaf.data)[i] = orig - eps;
      const double fm = loss_fn().value();
      (*leaf.data)[i] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ad = (*leaf.grad)[i];
      const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

inline seqboat::Tensor randn_tensor(std::mt19937_64& rng, std::vector<int> shape, bool rg = true,
                                    double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  seqboat::Tensor t = seqboat::Tensor::zeros(std::move(shape), rg);
  for (double& v : *t.data) v = dist(rng);
  return t;
}

}  // namespace testutil
