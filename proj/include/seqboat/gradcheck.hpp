#pragma once

// Finite-difference gradient verification, the acceptance oracle used across
// the modules. Central differences on a random subsample of coordinates per
// parameter group, compared against tape gradients at an evaluation point
// whose configurator decisions all clear a margin (no decision may flip
// under the probe perturbations).

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "seqboat/model.hpp"

namespace seqboat {

struct GradCheckOptions {
  double epsilon = 1e-4;
  int max_coords_per_group = 64;
  double margin_threshold = 0.0;  // required min |p - 0.5|; 10 * epsilon is typical
  int max_resamples = 100;
  std::uint64_t seed = 0;
};

struct GradCheckGroupReport {
  std::string group;
  double max_rel_err = 0.0;
  int coords_checked = 0;
  bool conclusive = true;
};

struct GradCheckReport {
  std::vector<GradCheckGroupReport> groups;
  bool conclusive = true;
  double margin = 0.0;
  int resamples = 0;

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& g : groups) m = std::max(m, g.max_rel_err);
    return m;
  }
};

// reseed(k): move the evaluation point (new data / params) and return its
//   decision margin; pass nullptr when the loss has no latent decisions.
// loss: scalar forward pass at the current point. Runs under a tape for the
//   reference gradients and without one for the probes.
inline GradCheckReport grad_check(const std::function<double(std::uint64_t)>& reseed,
                                  const std::function<Tensor()>& loss,
                                  std::vector<NamedParam> groups,
                                  const GradCheckOptions& opts = {}) {
  GradCheckReport report;
  report.margin = 1.0;
  if (reseed) {
    report.margin = reseed(opts.seed);
    while (report.margin <= opts.margin_threshold && report.resamples < opts.max_resamples) {
      ++report.resamples;
      report.margin = reseed(opts.seed + static_cast<std::uint64_t>(report.resamples));
    }
    if (report.margin <= opts.margin_threshold) {
      report.conclusive = false;
      for (const auto& g : groups) {
        GradCheckGroupReport gr;
        gr.group = g.name;
        gr.conclusive = false;
        report.groups.push_back(gr);
      }
      return report;
    }
  }

  for (auto& g : groups) g.t.zero_grad();
  std::vector<std::vector<double>> reference(groups.size());
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor l = loss();
    tape.backward(l);
  }
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    reference[gi].assign(groups[gi].t.grad->begin(), groups[gi].t.grad->end());

  std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const NamedParam& g = groups[gi];
    GradCheckGroupReport gr;
    gr.group = g.name;
    std::vector<std::int64_t> coords(static_cast<std::size_t>(g.t.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    if (static_cast<int>(coords.size()) > opts.max_coords_per_group) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(opts.max_coords_per_group));
    }
    for (std::int64_t i : coords) {
      const double orig = (*g.t.data)[i];
      (*g.t.data)[i] = orig + opts.epsilon;
      const double fp = loss().value();
      (*g.t.data)[i] = orig - opts.epsilon;
      const double fm = loss().value();
      (*g.t.data)[i] = orig;
      const double fd = (fp - fm) / (2.0 * opts.epsilon);
      const double ad = reference[gi][static_cast<std::size_t>(i)];
      const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-8});
      gr.max_rel_err = std::max(gr.max_rel_err, rel);
      ++gr.coords_checked;
    }
    report.groups.push_back(std::move(gr));
  }
  return report;
}

}  // namespace seqboat
