#pragma once

// Training loop: batched forward/backward on one tape per step, AdamW
// updates, periodic evaluation, and a per-period report with loss, task
// metric, wall time and per-layer activation rates. Deterministic given
// (config, seed); wall-time recording can be disabled so that report CSVs
// are byte-stable across runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <thread>
#include <string>
#include <vector>

#include "seqboat/model.hpp"
#include "seqboat/optim.hpp"
#include "seqboat/tasks.hpp"

namespace seqboat {

// Activation override patterns for ablations and benchmarks.
enum class ActivationOverride { none, all_on, all_off, every_2, every_4, every_8 };

struct TrainConfig {
  OptimConfig optim;
  int batch_size = 16;
  int steps = 200;
  int eval_every = 25;      // steps per report row ("epoch")
  int eval_samples = 200;
  double target_metric = 0.0;  // early stop when the metric reaches this; 0 disables
  std::uint64_t seed = 0;
  bool report_walltime = true;
  double max_seconds = 0.0;  // wall-clock budget; 0 disables
  ActivationOverride override_mode = ActivationOverride::none;
  // Data-parallel workers per step. Batch rows are sharded contiguously and
  // worker gradients are summed in worker order, so results are
  // deterministic for a fixed thread count.
  int threads = 1;
};

struct TrainRow {
  int step = 0;
  int epoch = 0;
  double loss = 0.0;
  double metric = 0.0;
  double wall_ms = 0.0;
  std::vector<double> act_rate;  // mean r/n per layer over the period
};

struct TrainReport {
  std::vector<TrainRow> rows;
  bool diverged = false;
  double final_metric = 0.0;
  int steps_run = 0;
};

inline std::vector<std::vector<std::uint8_t>> make_forced_activation(ActivationOverride ov,
                                                                     int n_layers, int n) {
  std::vector<std::vector<std::uint8_t>> forced;
  if (ov == ActivationOverride::none) return forced;
  int stride = 1;
  std::uint8_t base = 1;
  if (ov == ActivationOverride::all_off) base = 0;
  if (ov == ActivationOverride::every_2) stride = 2;
  if (ov == ActivationOverride::every_4) stride = 4;
  if (ov == ActivationOverride::every_8) stride = 8;
  for (int l = 0; l < n_layers; ++l) {
    std::vector<std::uint8_t> row(static_cast<std::size_t>(n), 0);
    if (base)
      for (int t = 0; t < n; ++t) row[static_cast<std::size_t>(t)] = (t % stride == 0) ? 1 : 0;
    forced.push_back(std::move(row));
  }
  return forced;
}

// Supplies per-layer forced activation masks matched to each sample length.
class ForcedActivation {
 public:
  ForcedActivation(ActivationOverride ov, int n_layers) : ov_(ov), n_layers_(n_layers) {}

  // Returns options for one forward pass of length n.
  ForwardOptions options(int n) {
    ForwardOptions fwd;
    if (ov_ == ActivationOverride::none) return fwd;
    auto it = by_len_.find(n);
    if (it == by_len_.end())
      it = by_len_.emplace(n, make_forced_activation(ov_, n_layers_, n)).first;
    fwd.forced_a = &it->second;
    return fwd;
  }

 private:
  ActivationOverride ov_;
  int n_layers_;
  std::map<int, std::vector<std::vector<std::uint8_t>>> by_len_;
};

// Mean accuracy at supervised positions; classification heads compare the
// single pooled row against the last masked target.
inline double eval_accuracy(ModelParams& m, TaskStream& stream, int n_samples,
                            ActivationOverride ov = ActivationOverride::none) {
  stream.reset();
  ForcedActivation forced(ov, static_cast<int>(m.layers.size()));
  std::vector<std::shared_ptr<ConvPlan>> conv_cache(m.layers.size());
  std::int64_t hit = 0, total = 0;
  for (int s = 0; s < n_samples; ++s) {
    Sample sample = stream.next();
    ForwardOptions fwd = forced.options(static_cast<int>(sample.inputs.size()));
    fwd.conv_cache = &conv_cache;
    auto [logits, trace] = model_forward(sample.inputs, m, fwd);
    const int n_out = logits.dim(1);
    for (int t = 0; t < static_cast<int>(sample.inputs.size()); ++t) {
      if (!sample.mask[static_cast<std::size_t>(t)]) continue;
      const int row = m.cfg.head == HeadKind::classification ? 0 : t;
      int best = 0;
      for (int o = 1; o < n_out; ++o)
        if (logits.at(row, o) > logits.at(row, best)) best = o;
      hit += best == sample.targets[static_cast<std::size_t>(t)];
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

// Mean cross-entropy (nats) at supervised positions.
inline double eval_loss(ModelParams& m, TaskStream& stream, int n_samples,
                        ActivationOverride ov = ActivationOverride::none) {
  stream.reset();
  ForcedActivation forced(ov, static_cast<int>(m.layers.size()));
  std::vector<std::shared_ptr<ConvPlan>> conv_cache(m.layers.size());
  double total = 0.0;
  int count = 0;
  for (int s = 0; s < n_samples; ++s) {
    Sample sample = stream.next();
    ForwardOptions fwd = forced.options(static_cast<int>(sample.inputs.size()));
    fwd.conv_cache = &conv_cache;
    auto [logits, trace] = model_forward(sample.inputs, m, fwd);
    total += cross_entropy_mean(logits, sample.targets, sample.mask).value();
    ++count;
  }
  return count ? total / count : 0.0;
}

inline TrainReport train(ModelParams& m, const TaskSpec& task, const TrainConfig& tc,
                         TaskStream& train_stream, TaskStream& eval_stream) {
  TrainReport report;
  AdamW opt(named_params(m), tc.optim);
  ForcedActivation forced(tc.override_mode, static_cast<int>(m.layers.size()));

  const bool metric_is_bpc = task.kind == TaskKind::char_lm;
  std::vector<double> best_params_snapshot;
  auto snapshot = [&]() {
    best_params_snapshot.clear();
    for (auto& p : named_params(m))
      best_params_snapshot.insert(best_params_snapshot.end(), p.t.data->begin(), p.t.data->end());
  };
  auto restore = [&]() {
    std::size_t at = 0;
    for (auto& p : named_params(m)) {
      std::copy(best_params_snapshot.begin() + static_cast<std::ptrdiff_t>(at),
                best_params_snapshot.begin() + static_cast<std::ptrdiff_t>(at + p.t.data->size()),
                p.t.data->begin());
      at += p.t.data->size();
    }
  };
  snapshot();

  const auto t_start = std::chrono::steady_clock::now();
  auto period_start = t_start;
  double period_loss = 0.0;
  int period_steps = 0;
  std::vector<double> period_act(m.layers.size(), 0.0);
  std::int64_t period_act_samples = 0;
  int epoch = 0;

  const int n_threads = std::max(1, std::min(tc.threads, tc.batch_size));
  std::vector<ModelParams> worker_models;
  for (int t = 1; t < n_threads; ++t) {
    worker_models.push_back(model_init(m.cfg, 0));
    assign_params(worker_models.back(), m);
  }

  for (int step = 0; step < tc.steps; ++step) {
    double step_loss = 0.0;
    bool step_failed = false;
    try {
      // Draw the whole batch up front so the sample order is independent of
      // the sharding, and pre-build the forced-activation options on this
      // thread (workers only read them).
      std::vector<Sample> batch;
      batch.reserve(static_cast<std::size_t>(tc.batch_size));
      std::vector<ForwardOptions> fwd_opts;
      for (int b = 0; b < tc.batch_size; ++b) {
        batch.push_back(train_stream.next());
        fwd_opts.push_back(forced.options(static_cast<int>(batch.back().inputs.size())));
      }

      struct ShardResult {
        double loss_sum = 0.0;
        std::vector<double> act_sums;
        bool failed = false;
      };
      std::vector<ShardResult> results(static_cast<std::size_t>(n_threads));

      auto run_shard = [&](int t, ModelParams& model) {
        ShardResult& res = results[static_cast<std::size_t>(t)];
        res.act_sums.assign(model.layers.size(), 0.0);
        const int lo = t * tc.batch_size / n_threads;
        const int hi = (t + 1) * tc.batch_size / n_threads;
        if (lo >= hi) return;
        try {
          Tape tape;
          TapeScope scope(tape);
          std::vector<std::shared_ptr<ConvPlan>> conv_cache(model.layers.size());
          Tensor acc;
          for (int b = lo; b < hi; ++b) {
            ForwardOptions fwd = fwd_opts[static_cast<std::size_t>(b)];
            fwd.conv_cache = &conv_cache;
            auto [logits, trace] = model_forward(batch[static_cast<std::size_t>(b)].inputs, model, fwd);
            Tensor loss = cross_entropy_mean(logits, batch[static_cast<std::size_t>(b)].targets,
                                             batch[static_cast<std::size_t>(b)].mask);
            acc = (b == lo) ? loss : add(acc, loss);
            for (std::size_t l = 0; l < trace.size(); ++l)
              res.act_sums[l] += static_cast<double>(trace[l].r) /
                                 static_cast<double>(batch[static_cast<std::size_t>(b)].inputs.size());
          }
          res.loss_sum = acc.value();
          if (!std::isfinite(res.loss_sum)) throw std::runtime_error("loss is not finite");
          tape.backward(scale(acc, 1.0 / tc.batch_size));
        } catch (const std::exception&) {
          res.failed = true;
        }
      };

      opt.zero_grad();
      for (auto& w : worker_models) {
        assign_params(w, m);
        zero_all_grads(w);
      }
      std::vector<std::thread> pool;
      for (int t = 1; t < n_threads; ++t)
        pool.emplace_back(run_shard, t, std::ref(worker_models[static_cast<std::size_t>(t - 1)]));
      run_shard(0, m);
      for (auto& th : pool) th.join();

      for (const auto& res : results) step_failed = step_failed || res.failed;
      if (!step_failed) {
        // Deterministic reduction: worker gradients merge in worker order.
        auto main_params = named_params(m);
        for (auto& w : worker_models) {
          auto wp = named_params(w);
          for (std::size_t i = 0; i < main_params.size(); ++i)
            for (std::int64_t j = 0; j < main_params[i].t.numel(); ++j)
              (*main_params[i].t.grad)[j] += (*wp[i].t.grad)[j];
        }
        for (int t = 0; t < n_threads; ++t) {
          step_loss += results[static_cast<std::size_t>(t)].loss_sum;
          for (std::size_t l = 0; l < m.layers.size(); ++l)
            period_act[l] += results[static_cast<std::size_t>(t)].act_sums[l];
        }
        step_loss /= tc.batch_size;
        period_act_samples += tc.batch_size;
        opt.step();
      }
    } catch (const std::exception&) {
      step_failed = true;
    }
    // Numerical blowups (overflow inside an op, zero temperature) count as
    // divergence: restore the last good parameters and stop.
    if (step_failed) {
      restore();
      report.diverged = true;
      break;
    }
    period_loss += step_loss;
    ++period_steps;
    report.steps_run = step + 1;

    const bool at_period_end = (step + 1) % tc.eval_every == 0 || step + 1 == tc.steps;
    if (!at_period_end) continue;

    ++epoch;
    TrainRow row;
    row.step = step + 1;
    row.epoch = epoch;
    row.loss = period_loss / period_steps;
    row.metric = metric_is_bpc
                     ? eval_loss(m, eval_stream, tc.eval_samples, tc.override_mode) / std::log(2.0)
                     : eval_accuracy(m, eval_stream, tc.eval_samples, tc.override_mode);
    const auto now = std::chrono::steady_clock::now();
    if (tc.report_walltime) {
      row.wall_ms =
          std::chrono::duration<double, std::milli>(now - period_start).count() / period_steps;
    }
    for (std::size_t l = 0; l < m.layers.size(); ++l)
      row.act_rate.push_back(period_act_samples ? period_act[l] / period_act_samples : 0.0);
    report.rows.push_back(row);
    report.final_metric = row.metric;
    snapshot();

    period_start = now;
    period_loss = 0.0;
    period_steps = 0;
    std::fill(period_act.begin(), period_act.end(), 0.0);
    period_act_samples = 0;

    if (tc.target_metric > 0.0 && !metric_is_bpc && row.metric >= tc.target_metric) break;
    if (tc.max_seconds > 0.0 &&
        std::chrono::duration<double>(now - t_start).count() > tc.max_seconds)
      break;
  }
  return report;
}

// CSV with the fixed column set; deterministic double formatting.
inline std::string train_report_csv(const TrainReport& report, int n_layers) {
  std::string out = "step,epoch,loss,metric,wall_ms";
  for (int l = 0; l < n_layers; ++l) out += ",act_rate_layer_" + std::to_string(l);
  out += "\n";
  char buf[64];
  for (const auto& row : report.rows) {
    out += std::to_string(row.step) + "," + std::to_string(row.epoch);
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g", row.loss, row.metric, row.wall_ms);
    out += buf;
    for (double a : row.act_rate) {
      std::snprintf(buf, sizeof buf, ",%.17g", a);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace seqboat
