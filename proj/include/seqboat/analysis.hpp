#pragma once

// Analysis artifacts: per-layer activation traces over sampled sequences
// (activation counts with mean/std, per-timestep confidence maps, attention
// edges), mean attention spans, and the FLOP/latency benchmark.
//
// The trace JSON is self-contained: spans are re-derivable from the stored
// edges alone (edges_per_sample partitions the flat edge list by sample).
// Span distances are absolute original-position distances.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqboat/config.hpp"
#include "seqboat/model.hpp"
#include "seqboat/train.hpp"

namespace seqboat {

struct LayerTraceSummary {
  int layer = 0;
  std::vector<int> counts;                  // r per sampled sequence
  double mean = 0.0, stddev = 0.0;          // over counts
  std::vector<std::vector<double>> confidence;  // [sample][timestep]
  // Flat across samples, sample-major; edges_per_sample gives the partition.
  std::vector<std::pair<int, std::vector<int>>> edges;
  std::vector<int> edges_per_sample;
};

struct TraceSummary {
  std::string config_hash;
  int samples = 0;
  std::vector<LayerTraceSummary> layers;
};

inline TraceSummary collect_trace(ModelParams& m, TaskStream& stream, int n_samples,
                                  ActivationOverride ov, const std::string& config_hash) {
  TraceSummary ts;
  ts.config_hash = config_hash;
  ts.samples = n_samples;
  ts.layers.resize(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) ts.layers[l].layer = static_cast<int>(l);

  stream.reset();
  ForcedActivation forced(ov, static_cast<int>(m.layers.size()));
  std::vector<std::shared_ptr<ConvPlan>> conv_cache(m.layers.size());
  for (int s = 0; s < n_samples; ++s) {
    Sample sample = stream.next();
    ForwardOptions fwd = forced.options(static_cast<int>(sample.inputs.size()));
    fwd.record_edges = true;
    fwd.conv_cache = &conv_cache;
    auto [logits, trace] = model_forward(sample.inputs, m, fwd);
    for (std::size_t l = 0; l < trace.size(); ++l) {
      LayerTraceSummary& lt = ts.layers[l];
      lt.counts.push_back(trace[l].r);
      lt.confidence.push_back(trace[l].c);
      lt.edges_per_sample.push_back(static_cast<int>(trace[l].edges.size()));
      for (auto& e : trace[l].edges) lt.edges.push_back(e);
    }
  }
  for (auto& lt : ts.layers) {
    double mean = 0.0;
    for (int c : lt.counts) mean += c;
    mean /= std::max<std::size_t>(1, lt.counts.size());
    double var = 0.0;
    for (int c : lt.counts) var += (c - mean) * (c - mean);
    var /= std::max<std::size_t>(1, lt.counts.size());
    lt.mean = mean;
    lt.stddev = std::sqrt(var);
  }
  return ts;
}

inline nlohmann::json trace_to_json(const TraceSummary& ts) {
  nlohmann::json root;
  root["config_hash"] = ts.config_hash;
  root["samples"] = ts.samples;
  root["span_distance"] = "absolute";
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& lt : ts.layers) {
    nlohmann::json jl;
    jl["layer"] = lt.layer;
    jl["counts"] = lt.counts;
    jl["mean"] = lt.mean;
    jl["std"] = lt.stddev;
    jl["confidence"] = lt.confidence;
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [q, keys] : lt.edges) edges.push_back(nlohmann::json::array({q, keys}));
    jl["attention_edges"] = edges;
    jl["edges_per_sample"] = lt.edges_per_sample;
    layers.push_back(jl);
  }
  root["layers"] = layers;
  return root;
}

// Mean attention span per layer: per query the mean absolute original-position
// distance to its attended keys, averaged over the queries of a sequence, then
// over sequences.
inline std::vector<double> layer_spans(const TraceSummary& ts) {
  std::vector<double> spans;
  for (const auto& lt : ts.layers) {
    double acc = 0.0;
    int seqs = 0;
    std::size_t at = 0;
    for (int count : lt.edges_per_sample) {
      double seq_acc = 0.0;
      int queries = 0;
      for (int e = 0; e < count; ++e) {
        const auto& [q, keys] = lt.edges[at++];
        if (keys.empty()) continue;
        double d = 0.0;
        for (int k : keys) d += std::abs(q - k);
        seq_acc += d / keys.size();
        ++queries;
      }
      if (queries > 0) {
        acc += seq_acc / queries;
        ++seqs;
      }
    }
    spans.push_back(seqs ? acc / seqs : 0.0);
  }
  return spans;
}

inline std::string span_csv(const std::vector<double>& spans) {
  std::string out = "layer,mean_span,distance_basis\n";
  char buf[64];
  for (std::size_t l = 0; l < spans.size(); ++l) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,absolute\n", l, spans[l]);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

struct BenchRow {
  double p = 0.0;          // forced activation rate
  long long attn_flops = 0;  // counted pair work for one forward pass
  double step_ms = 0.0;      // training step wall time
  double token_us = 0.0;     // streaming per-token latency
};

struct BenchOptions {
  int timed_steps = 50;
  int warmup_steps = 5;
  int stream_tokens = 256;
};

inline BenchRow bench_at_rate(ModelParams& m, const TaskSpec& task, const TrainConfig& base_tc,
                              ActivationOverride ov, double rate, const BenchOptions& opts) {
  BenchRow row;
  row.p = rate;

  TaskStream stream(task, false);
  ForcedActivation forced(ov, static_cast<int>(m.layers.size()));

  // Counted attention FLOPs for one forward pass of one sequence.
  {
    Sample sample = stream.next();
    attn_flops_reset();
    model_forward(sample.inputs, m, forced.options(static_cast<int>(sample.inputs.size())));
    row.attn_flops = attn_flops();
    stream.reset();
  }

  // Mean per-step training wall time after warmup.
  {
    ModelParams work = m;  // shares storage; training perturbs a copy of values
    std::vector<double> backup;
    for (auto& p : named_params(work))
      backup.insert(backup.end(), p.t.data->begin(), p.t.data->end());

    TrainConfig tc = base_tc;
    tc.override_mode = ov;
    tc.steps = opts.warmup_steps + opts.timed_steps;
    tc.eval_every = tc.steps + 1;  // no eval rows during timing
    tc.target_metric = 0.0;

    AdamW opt(named_params(work), tc.optim);
    ForcedActivation forced_tr(ov, static_cast<int>(work.layers.size()));
    std::chrono::steady_clock::time_point t0;
    for (int step = 0; step < tc.steps; ++step) {
      if (step == opts.warmup_steps) t0 = std::chrono::steady_clock::now();
      Tape tape;
      {
        TapeScope scope(tape);
        std::vector<std::shared_ptr<ConvPlan>> conv_cache(work.layers.size());
        Tensor acc;
        for (int b = 0; b < tc.batch_size; ++b) {
          Sample sample = stream.next();
          ForwardOptions fwd = forced_tr.options(static_cast<int>(sample.inputs.size()));
          fwd.conv_cache = &conv_cache;
          auto [logits, trace] = model_forward(sample.inputs, work, fwd);
          Tensor loss = cross_entropy_mean(logits, sample.targets, sample.mask);
          acc = (b == 0) ? loss : add(acc, loss);
        }
        opt.zero_grad();
        tape.backward(scale(acc, 1.0 / tc.batch_size));
      }
      opt.step();
    }
    row.step_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count() /
                  opts.timed_steps;

    std::size_t at = 0;
    for (auto& p : named_params(work)) {
      std::copy(backup.begin() + static_cast<std::ptrdiff_t>(at),
                backup.begin() + static_cast<std::ptrdiff_t>(at + p.t.data->size()),
                p.t.data->begin());
      at += p.t.data->size();
    }
  }

  // Streaming per-token latency.
  {
    ModelStreamState state(m);
    ForwardOptions fwd = forced.options(opts.stream_tokens);
    const auto t0 = std::chrono::steady_clock::now();
    for (int t = 0; t < opts.stream_tokens; ++t)
      model_step(state, t % m.cfg.vocab, m, fwd);
    row.token_us =
        std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count() /
        opts.stream_tokens;
  }
  return row;
}

inline std::vector<BenchRow> run_bench(ModelParams& m, const TaskSpec& task,
                                       const TrainConfig& tc, const BenchOptions& opts = {}) {
  const std::vector<std::pair<double, ActivationOverride>> rates = {
      {0.0, ActivationOverride::all_off},
      {0.25, ActivationOverride::every_4},
      {0.5, ActivationOverride::every_2},
      {1.0, ActivationOverride::all_on},
  };
  std::vector<BenchRow> rows;
  for (auto [p, ov] : rates) rows.push_back(bench_at_rate(m, task, tc, ov, p, opts));
  return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "p,attn_flops,step_ms,token_us\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%lld,%.17g,%.17g\n", r.p, r.attn_flops, r.step_ms,
                  r.token_us);
    out += buf;
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace seqboat
