#pragma once

// AdamW with decoupled weight decay, global-norm gradient clipping and a
// warmup + decay learning-rate schedule.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqboat/model.hpp"

namespace seqboat {

enum class LrSchedule { linear, cosine, none };

struct OptimConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // 0 disables clipping
  LrSchedule schedule = LrSchedule::linear;
  int warmup_steps = 0;
  int total_steps = 1;
  // Learning-rate multiplier for the latent configurator groups ("config.*"),
  // decoupling routing dynamics from representation learning.
  double configurator_lr_scale = 1.0;
};

inline double scheduled_lr(const OptimConfig& cfg, int step) {
  double factor = 1.0;
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    factor = static_cast<double>(step + 1) / cfg.warmup_steps;
  } else if (cfg.schedule == LrSchedule::linear) {
    const int span = std::max(1, cfg.total_steps - cfg.warmup_steps);
    factor = std::max(0.0, static_cast<double>(cfg.total_steps - step) / span);
  } else if (cfg.schedule == LrSchedule::cosine) {
    const int span = std::max(1, cfg.total_steps - cfg.warmup_steps);
    const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / span);
    factor = 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
  }
  return cfg.lr * factor;
}

class AdamW {
 public:
  AdamW(std::vector<NamedParam> params, OptimConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    lr_scale_.resize(params_.size(), 1.0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(params_[i].t.numel()), 0.0);
      v_[i].assign(static_cast<std::size_t>(params_[i].t.numel()), 0.0);
      if (params_[i].name.find("config.") != std::string::npos)
        lr_scale_[i] = cfg_.configurator_lr_scale;
    }
  }

  int step_count() const { return step_; }
  const OptimConfig& config() const { return cfg_; }

  void zero_grad() {
    for (auto& p : params_) p.t.zero_grad();
  }

  // Clips by global norm, then applies the bias-corrected moment update and
  // decoupled weight decay. Learning rate comes from the schedule.
  void step() {
    double norm_sq = 0.0;
    for (auto& p : params_) {
      for (std::int64_t i = 0; i < p.t.numel(); ++i) {
        const double g = (*p.t.grad)[i];
        if (!std::isfinite(g))
          throw std::runtime_error("optimizer_step: non-finite gradient in group " + p.name);
        norm_sq += g * g;
      }
    }
    double clip_scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
      const double norm = std::sqrt(norm_sq);
      if (norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;
    }
    const double lr = scheduled_lr(cfg_, step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_ + 1);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_ + 1);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor& t = params_[pi].t;
      const double group_lr = lr * lr_scale_[pi];
      for (std::int64_t i = 0; i < t.numel(); ++i) {
        const double g = (*t.grad)[i] * clip_scale;
        m_[pi][static_cast<std::size_t>(i)] =
            cfg_.beta1 * m_[pi][static_cast<std::size_t>(i)] + (1.0 - cfg_.beta1) * g;
        v_[pi][static_cast<std::size_t>(i)] =
            cfg_.beta2 * v_[pi][static_cast<std::size_t>(i)] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[pi][static_cast<std::size_t>(i)] / bc1;
        const double vhat = v_[pi][static_cast<std::size_t>(i)] / bc2;
        (*t.data)[i] -= group_lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                    cfg_.weight_decay * (*t.data)[i]);
      }
    }
    ++step_;
  }

 private:
  std::vector<NamedParam> params_;
  OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<double> lr_scale_;
  int step_ = 0;
};

}  // namespace seqboat
