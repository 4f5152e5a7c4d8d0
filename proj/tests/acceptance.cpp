// Acceptance suite. Each criterion prints one [PASS]/[FAIL] line; the exit
// code is the number of failures. Run a single criterion with `acceptance N`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "seqboat/seqboat.hpp"

using namespace seqboat;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return "";
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << content;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SEQBOAT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

// Last value of a named column in a header,rows CSV.
double csv_last(const std::string& csv, const std::string& column) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> headers;
  std::istringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) headers.push_back(cell);
  int col = -1;
  for (std::size_t i = 0; i < headers.size(); ++i)
    if (headers[i] == column) col = static_cast<int>(i);
  if (col < 0) return std::nan("");
  double value = std::nan("");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int at = 0;
    while (std::getline(ls, cell, ',')) {
      if (at++ == col) value = std::atof(cell.c_str());
    }
  }
  return value;
}

// Column values keyed by the first column.
std::vector<std::pair<double, double>> csv_column(const std::string& csv, const std::string& column) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> headers;
  std::istringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) headers.push_back(cell);
  int col = -1;
  for (std::size_t i = 0; i < headers.size(); ++i)
    if (headers[i] == column) col = static_cast<int>(i);
  std::vector<std::pair<double, double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int at = 0;
    double key = 0.0, value = std::nan("");
    while (std::getline(ls, cell, ',')) {
      if (at == 0) key = std::atof(cell.c_str());
      if (at == col) value = std::atof(cell.c_str());
      ++at;
    }
    rows.emplace_back(key, value);
  }
  return rows;
}

const char* kTmp = "acceptance_tmp";

// ---------------------------------------------------------------------------

// Routing round-trip: extract(compress(H, a)) == a .* H bit-exactly over a
// thousand random batched instances.
bool criterion_1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int rep = 0; rep < 1000; ++rep) {
    const int batch = 1 + static_cast<int>(rng() % 4);
    const int n = 1 + static_cast<int>(rng() % 128);
    const int d = 1 + static_cast<int>(rng() % 16);
    Tensor h = Tensor::zeros({batch, n, d});
    for (double& v : *h.data) v = dist(rng);
    std::vector<std::uint8_t> a(static_cast<std::size_t>(batch) * n);
    for (auto& v : a) v = rng() % 2;
    auto [hc, plans] = compress(h, a);
    Tensor y = extract(hc, plans);
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < n; ++t)
        for (int j = 0; j < d; ++j) {
          const double expect = a[static_cast<std::size_t>(b) * n + t] ? h.at(b, t, j) : 0.0;
          if (y.at(b, t, j) != expect) return false;  // must be bit-identical
        }
  }
  const double elapsed = ms_since(t0);
  std::printf("    1000 batched cases, %.0f ms\n", elapsed);
  return elapsed < 10000.0;
}

// The two-module routing instance: compressed sequences and aggregation.
bool criterion_2() {
  const int n = 4, d = 3;
  Tensor h = Tensor::zeros({1, n, d});
  for (int t = 0; t < n; ++t)
    for (int j = 0; j < d; ++j) h.at(0, t, j) = 10.0 * (t + 1) + j;

  auto [hc1, plans1] = compress(h, {0, 1, 0, 1});
  auto [hc2, plans2] = compress(h, {0, 0, 0, 1});
  if (plans1[0].r != 2 || plans2[0].r != 1) return false;
  for (int j = 0; j < d; ++j) {
    if (hc1.at(0, 0, j) != h.at(0, 1, j)) return false;  // Hc1 = (h2, h4)
    if (hc1.at(0, 1, j) != h.at(0, 3, j)) return false;
    if (hc2.at(0, 0, j) != h.at(0, 3, j)) return false;  // Hc2 = (h4)
  }

  // y4 = c4^1 y4^1 + c4^2 y4^2 and y2 = c2^1 y2^1 via extract + aggregate.
  Tensor y1 = reshape(extract(hc1, plans1), {n, d});
  Tensor y2 = reshape(extract(hc2, plans2), {n, d});
  DecisionMask m1, m2;
  m1.c = Tensor::from({0.9, 0.8, 0.7, 0.6}, {n});
  m2.c = Tensor::from({0.9, 0.9, 0.9, 0.55}, {n});
  Tensor out = aggregate({y1, y2}, {m1, m2});
  for (int j = 0; j < d; ++j) {
    if (out.at(1, j) != 0.8 * h.at(0, 1, j)) return false;
    if (std::abs(out.at(3, j) - (0.6 * h.at(0, 3, j) + 0.55 * h.at(0, 3, j))) > 1e-15) return false;
    if (out.at(0, j) != 0.0 || out.at(2, j) != 0.0) return false;
  }
  return true;
}

// Theorem-1 coverage: every activation subset of three linear modules
// reproduces its span element exactly.
bool criterion_3() {
  std::mt19937_64 rng(1003);
  std::normal_distribution<double> dist(0.0, 1.0);
  const int n = 6, d = 4, m_modules = 3;
  Tensor x = Tensor::zeros({n, d});
  for (double& v : *x.data) v = dist(rng);
  std::vector<Tensor> mats;
  for (int i = 0; i < m_modules; ++i) {
    Tensor a = Tensor::zeros({d, d});
    for (double& v : *a.data) v = dist(rng);
    mats.push_back(a);
  }
  for (int subset = 0; subset < 8; ++subset) {
    std::vector<double> beta(m_modules, 0.0);
    for (int i = 0; i < m_modules; ++i)
      if (subset & (1 << i)) beta[static_cast<std::size_t>(i)] = dist(rng);
    auto [wa, wc] = coverage_witness(beta);
    std::vector<Tensor> outputs;
    std::vector<DecisionMask> masks;
    for (int i = 0; i < m_modules; ++i) {
      outputs.push_back(wa[static_cast<std::size_t>(i)]
                            ? scale(matmul(x, mats[static_cast<std::size_t>(i)]),
                                    beta[static_cast<std::size_t>(i)])
                            : Tensor::zeros({n, d}));
      DecisionMask mk;
      mk.c = Tensor::full({n}, wc[static_cast<std::size_t>(i)]);
      masks.push_back(mk);
    }
    Tensor got = aggregate(outputs, masks);
    for (int t = 0; t < n; ++t)
      for (int j = 0; j < d; ++j) {
        double expect = 0.0;
        for (int i = 0; i < m_modules; ++i) {
          if (beta[static_cast<std::size_t>(i)] == 0.0) continue;
          double dot = 0.0;
          for (int p = 0; p < d; ++p)
            dot += x.at(t, p) * mats[static_cast<std::size_t>(i)].at(p, j);
          expect += beta[static_cast<std::size_t>(i)] * dot;
        }
        if (std::abs(got.at(t, j) - expect) > 1e-12) return false;
      }
  }
  return true;
}

// SSM mode parity across one hundred random configurations.
bool criterion_4() {
  std::mt19937_64 rng(1004);
  std::normal_distribution<double> dist(0.0, 1.0);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 1 + static_cast<int>(rng() % 512);
    const int h = 1 + static_cast<int>(rng() % 4);
    const int d = 1 + static_cast<int>(rng() % 16);
    MdEmaParams p;
    p.h = h;
    p.d_m = d;
    p.eta = Tensor::zeros({h, d}, true);
    p.alpha_raw = Tensor::zeros({h, d}, true);
    p.delta_raw = Tensor::zeros({h, d}, true);
    p.beta = Tensor::zeros({h, d}, true);
    p.d_skip = Tensor::zeros({d}, true);
    for (auto* t : {&p.eta, &p.alpha_raw, &p.delta_raw, &p.beta, &p.d_skip})
      for (double& v : *t->data) v = dist(rng);
    Tensor s = Tensor::zeros({n, d});
    for (double& v : *s.data) v = dist(rng);

    Tensor par = ssm_parallel(s, p);
    EmaState state = EmaState::init(p);
    for (int t = 0; t < n; ++t) {
      std::vector<double> row(s.ptr() + static_cast<std::size_t>(t) * d,
                              s.ptr() + static_cast<std::size_t>(t + 1) * d);
      auto y = ssm_step(state, row, p);
      for (int j = 0; j < d; ++j)
        worst = std::max(worst, std::abs(y[static_cast<std::size_t>(j)] - par.at(t, j)));
    }
  }
  std::printf("    max |parallel - recurrent| = %.3g\n", worst);
  return worst < 1e-8;
}

// GAU streaming parity: FIFO working memory vs windowed-causal parallel.
bool criterion_5() {
  std::mt19937_64 rng(1005);
  std::normal_distribution<double> dist(0.0, 1.0);
  double worst = 0.0;
  for (int w : {2, 8, 32}) {
    for (int r : {1, 7, 64, 128}) {
      const int d_m = 6, d_v = 12;
      GauParams p;
      p.d_z = d_m;
      p.d_v = d_v;
      p.bias_clip = w;
      p.attn_fn = (r % 2 == 0) ? AttnFn::softmax : AttnFn::relu2;
      p.wq = Tensor::zeros({d_m}, true);
      p.bq = Tensor::zeros({d_m}, true);
      p.wk = Tensor::zeros({d_m}, true);
      p.bk = Tensor::zeros({d_m}, true);
      p.w_v = Tensor::zeros({d_m, d_v}, true);
      p.b_v = Tensor::zeros({d_v}, true);
      p.w_g = Tensor::zeros({d_m, d_v}, true);
      p.b_g = Tensor::zeros({d_v}, true);
      p.w_h = Tensor::zeros({d_v, d_m}, true);
      p.b_h = Tensor::zeros({d_m}, true);
      p.rel_bias = Tensor::zeros({2 * w + 1}, true);
      for (auto* t : {&p.wq, &p.bq, &p.wk, &p.bk, &p.w_v, &p.b_v, &p.w_g, &p.b_g, &p.w_h, &p.b_h,
                      &p.rel_bias})
        for (double& v : *t->data) v = 0.5 * dist(rng);

      Tensor hc = Tensor::zeros({r, d_m});
      for (double& v : *hc.data) v = dist(rng);
      std::vector<int> positions;
      int pos = -1;
      for (int i = 0; i < r; ++i) {
        pos += 1 + static_cast<int>(rng() % 4);
        positions.push_back(pos);
      }
      Tensor par = gau_forward(hc, positions, p, AttnMode::window_causal, w);
      WorkingMemory mem(w);
      for (int i = 0; i < r; ++i) {
        std::vector<double> row(hc.ptr() + static_cast<std::size_t>(i) * d_m,
                                hc.ptr() + static_cast<std::size_t>(i + 1) * d_m);
        auto y = gau_step(mem, row, positions[static_cast<std::size_t>(i)], p);
        for (int j = 0; j < d_m; ++j)
          worst = std::max(worst, std::abs(y[static_cast<std::size_t>(j)] - par.at(i, j)));
      }
    }
  }
  std::printf("    max |stream - parallel| = %.3g\n", worst);
  return worst < 1e-10;
}

// End-to-end streaming parity of the full model.
bool criterion_6() {
  std::mt19937_64 rng(1006);
  double worst = 0.0;
  for (int n_layers : {1, 2, 3}) {
    ModelConfig cfg;
    cfg.n_layers = n_layers;
    cfg.d_m = 8;
    cfg.vocab = 12;
    cfg.seq_len = 64;
    cfg.window = 8;
    cfg.ema_dim = 2;
    cfg.causal = true;
    cfg.head = HeadKind::lm;
    ModelParams m = model_init(cfg, 1700 + static_cast<std::uint64_t>(n_layers));
    std::vector<int> tokens;
    for (int t = 0; t < 64; ++t) tokens.push_back(static_cast<int>(rng() % 12));
    auto [par, trace] = model_forward(tokens, m);
    ModelStreamState state(m);
    for (int t = 0; t < 64; ++t) {
      auto row = model_step(state, tokens[static_cast<std::size_t>(t)], m);
      for (int o = 0; o < cfg.vocab; ++o)
        worst = std::max(worst, std::abs(row[static_cast<std::size_t>(o)] - par.at(t, o)));
    }
  }
  std::printf("    max |delta logits| = %.3g\n", worst);
  return worst < 1e-7;
}

// Gradient suite on the full tiny model plus the corrupted-backward control.
bool criterion_7() {
  TaskSpec task;
  task.kind = TaskKind::assoc_recall;
  task.seq_len = 16;
  task.vocab = 12;
  task.num_pairs = 4;
  task.seed = 7;
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_m = 8;
  cfg.vocab = task.vocab;
  cfg.seq_len = task.seq_len;
  cfg.window = 4;
  cfg.ema_dim = 2;
  cfg.causal = true;
  cfg.head = HeadKind::lm;

  ModelParams m = model_init(cfg, 1);
  Sample sample;
  auto reseed = [&](std::uint64_t seed) {
    ModelParams fresh = model_init(cfg, seed);
    assign_params(m, fresh);  // in place: grad_check handles stay valid
    sample = gen_assoc_recall(task, seed);
    auto [logits, trace] = model_forward(sample.inputs, m);
    double margin = 1.0;
    for (auto& lt : trace)
      for (double cv : lt.c) margin = std::min(margin, cv - 0.5);
    return margin;
  };
  auto loss = [&]() -> Tensor {
    auto [logits, trace] = model_forward(sample.inputs, m);
    return cross_entropy_mean(logits, sample.targets, sample.mask);
  };
  GradCheckOptions opts;
  opts.epsilon = 1e-4;
  opts.margin_threshold = 1e-3;  // 10 * epsilon
  opts.max_coords_per_group = 64;
  opts.seed = 1700;
  GradCheckReport rep = grad_check(reseed, loss, named_params(m), opts);
  if (!rep.conclusive) {
    std::printf("    no margin-safe point found\n");
    return false;
  }
  double worst = 0.0;
  std::string worst_group;
  for (const auto& g : rep.groups)
    if (g.max_rel_err > worst) {
      worst = g.max_rel_err;
      worst_group = g.group;
    }
  std::printf("    %zu groups, worst %.3g (%s), margin %.3g\n", rep.groups.size(), worst,
              worst_group.c_str(), rep.margin);
  if (worst >= 1e-4) return false;

  // Negative control: a backward rule scaled by 1.05 must be detected.
  std::mt19937_64 rng(1007);
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor w = Tensor::zeros({6}, true);
  Tensor x = Tensor::zeros({4, 6});
  for (double& v : *w.data) v = dist(rng);
  for (double& v : *x.data) v = dist(rng);
  auto corrupted_silu = [](const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape, wants_grad(a));
    for (std::int64_t i = 0; i < a.numel(); ++i) (*out.data)[i] = detail::silu_s((*a.data)[i]);
    if (out.requires_grad) {
      tape_record([a, out]() {
        for (std::int64_t i = 0; i < a.numel(); ++i) {
          const double xv = (*a.data)[i];
          const double s = detail::sigmoid_s(xv);
          (*a.grad)[i] += 1.05 * (*out.grad)[i] * (s + xv * s * (1.0 - s));
        }
      });
    }
    return out;
  };
  auto bad_loss = [&]() -> Tensor { return sum_all(corrupted_silu(matvec(x, w))); };
  GradCheckOptions bad_opts;
  bad_opts.epsilon = 1e-5;
  GradCheckReport bad = grad_check(nullptr, bad_loss, {{"w", w}}, bad_opts);
  std::printf("    corrupted backward detected at %.3g\n", bad.max_rel_err());
  return bad.max_rel_err() > 1e-2;
}

// Complexity scaling via the bench CLI: attention FLOPs proportional to r*w
// across activation rates and linear in n.
bool criterion_8() {
  const auto t0 = Clock::now();
  std::filesystem::create_directories(kTmp);
  auto config_for = [&](int n) {
    return std::string("[task]\nkind = assoc_recall\nseq_len = ") + std::to_string(n) +
           "\nvocab = 16\nnum_pairs = 4\n\n[model]\nn_layers = 1\nd_m = 16\nwindow = 8\n\n"
           "[optim]\nsteps = 1\nbatch_size = 4\neval_every = 100\neval_samples = 4\n\n"
           "[run]\nseed = 8\nreport_walltime = false\n";
  };
  write_file(std::string(kTmp) + "/bench_n256.cfg", config_for(256));
  write_file(std::string(kTmp) + "/bench_n512.cfg", config_for(512));
  if (run_cli("bench --config " + std::string(kTmp) + "/bench_n256.cfg --out " + kTmp + "/b256") != 0)
    return false;
  if (run_cli("bench --config " + std::string(kTmp) + "/bench_n512.cfg --out " + kTmp + "/b512") != 0)
    return false;

  auto rows256 = csv_column(slurp(std::string(kTmp) + "/b256/bench.csv"), "attn_flops");
  auto rows512 = csv_column(slurp(std::string(kTmp) + "/b512/bench.csv"), "attn_flops");
  if (rows256.size() != 4 || rows512.size() != 4) return false;
  if (rows256[0].second != 0.0) return false;  // p = 0 -> zero attention FLOPs

  const int w = 8;
  // flops / (r * w) constant within +-10% across p in {1/4, 1/2, 1}.
  std::vector<double> normalized;
  for (std::size_t i = 1; i < 4; ++i) {
    const double p = rows256[i].first;
    const double r = p * 256;
    normalized.push_back(rows256[i].second / (r * w));
  }
  double mean = (normalized[0] + normalized[1] + normalized[2]) / 3.0;
  double dev = 0.0;
  for (double v : normalized) dev = std::max(dev, std::abs(v - mean) / mean);
  std::printf("    flops/(r*w) deviation %.1f%%", 100.0 * dev);
  if (dev > 0.10) {
    std::printf("\n");
    return false;
  }

  // Doubling n doubles the count at fixed p, w.
  double worst_ratio_err = 0.0;
  for (std::size_t i = 1; i < 4; ++i) {
    const double ratio = rows512[i].second / rows256[i].second;
    worst_ratio_err = std::max(worst_ratio_err, std::abs(ratio - 2.0));
  }
  const double elapsed = ms_since(t0);
  std::printf(", n-doubling ratio within 2 +- %.3f, %.0f ms\n", worst_ratio_err, elapsed);
  return worst_ratio_err <= 0.2 && elapsed < 120000.0;
}

// Span unboundedness: a forced activation gap of 4w realizes an attention
// edge of original distance 4w, and a trained sparse-recall run reports a
// layer whose mean span exceeds w.
bool criterion_9() {
  // Mechanism: forced mask with gap 4w.
  {
    const int w = 8, gap = 4 * w;
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_m = 8;
    cfg.vocab = 12;
    cfg.seq_len = 3 * gap + 1;
    cfg.window = w;
    cfg.ema_dim = 2;
    cfg.causal = true;
    cfg.head = HeadKind::lm;
    ModelParams m = model_init(cfg, 9);
    std::vector<int> tokens(static_cast<std::size_t>(cfg.seq_len), 1);
    std::vector<std::vector<std::uint8_t>> forced(1);
    forced[0].assign(static_cast<std::size_t>(cfg.seq_len), 0);
    for (int t = 0; t < cfg.seq_len; t += gap) forced[0][static_cast<std::size_t>(t)] = 1;
    ForwardOptions fwd;
    fwd.forced_a = &forced;
    fwd.record_edges = true;
    auto [logits, trace] = model_forward(tokens, m, fwd);
    bool found = false;
    for (const auto& [q, keys] : trace[0].edges)
      for (int k : keys) found = found || (q - k == gap);
    std::printf("    forced gap 4w=%d edge %s", gap, found ? "realized" : "missing");
    if (!found) {
      std::printf("\n");
      return false;
    }
  }

  // Trained run: spread associative recall with a small working memory.
  std::filesystem::create_directories(kTmp);
  const int w = 8;
  write_file(std::string(kTmp) + "/span_train.cfg",
             "[task]\nkind = assoc_recall\nseq_len = 256\nvocab = 32\nnum_pairs = 8\n"
             "spread = true\n\n"
             "[model]\nn_layers = 2\nd_m = 32\nwindow = 8\nema_dim = 2\nalpha = 0.3\n\n"
             "[optim]\nsteps = 800\nbatch_size = 8\neval_every = 100\neval_samples = 50\n"
             "lr = 0.01\nschedule = none\nmax_seconds = 300\n\n"
             "[run]\nseed = 13\nreport_walltime = false\n");
  if (run_cli("train --config " + std::string(kTmp) + "/span_train.cfg --out " + kTmp + "/span_run") != 0)
    return false;
  if (run_cli("span --config " + std::string(kTmp) + "/span_train.cfg --checkpoint " + kTmp +
              "/span_run/model.ckpt --out " + kTmp + "/span_run --samples 50") != 0)
    return false;
  auto spans = csv_column(slurp(std::string(kTmp) + "/span_run/span.csv"), "mean_span");
  double best = 0.0;
  for (auto& [layer, span] : spans) best = std::max(best, span);
  std::printf(", trained max layer span %.1f (w = %d)\n", best, w);
  return best > w;
}

// Toy-task learning: associative recall reaches 99% within the budget while
// the attention-disabled ablation stays below 80%.
bool criterion_10() {
  std::filesystem::create_directories(kTmp);
  const std::string base =
      "[task]\nkind = assoc_recall\nseq_len = 64\nvocab = 32\nnum_pairs = 8\n\n"
      "[model]\nn_layers = 2\nd_m = 64\nd_v = 64\nwindow = 16\nema_dim = 2\n{OVERRIDE}\n"
      "[optim]\nsteps = 4500\nbatch_size = 16\neval_every = 250\neval_samples = 100\n"
      "lr = 0.01\ntarget_metric = 0.995\nmax_seconds = 600\n\n"
      "[run]\nseed = 10\nreport_walltime = false\n";
  auto with_override = [&](const std::string& ov) {
    std::string cfg = base;
    const std::string key = "{OVERRIDE}";
    cfg.replace(cfg.find(key), key.size(), ov);
    return cfg;
  };
  write_file(std::string(kTmp) + "/recall.cfg", with_override(""));
  write_file(std::string(kTmp) + "/recall_ssm_only.cfg",
             with_override("activation_override = all_off\n"));

  const auto t0 = Clock::now();
  if (run_cli("train --config " + std::string(kTmp) + "/recall.cfg --out " + kTmp + "/recall_run") != 0)
    return false;
  const double full_ms = ms_since(t0);
  const double acc = csv_last(slurp(std::string(kTmp) + "/recall_run/report.csv"), "metric");

  const auto t1 = Clock::now();
  if (run_cli("train --config " + std::string(kTmp) + "/recall_ssm_only.cfg --out " + kTmp +
              "/recall_ssm_run") != 0)
    return false;
  const double ssm_ms = ms_since(t1);
  const double ssm_acc = csv_last(slurp(std::string(kTmp) + "/recall_ssm_run/report.csv"), "metric");

  std::printf("    seqboat %.4f in %.0f s; pure-SSM ablation %.4f in %.0f s\n", acc,
              full_ms / 1000.0, ssm_acc, ssm_ms / 1000.0);
  return acc >= 0.99 && full_ms < 600000.0 && ssm_acc < 0.80;
}

// Determinism: identical seeds reproduce the training report byte for byte.
bool criterion_11() {
  std::filesystem::create_directories(kTmp);
  write_file(std::string(kTmp) + "/det.cfg",
             "[task]\nkind = assoc_recall\nseq_len = 32\nvocab = 16\nnum_pairs = 4\n\n"
             "[model]\nn_layers = 2\nd_m = 16\nwindow = 8\n\n"
             "[optim]\nsteps = 40\nbatch_size = 4\neval_every = 10\neval_samples = 20\n\n"
             "[run]\nseed = 11\nreport_walltime = false\n");
  if (run_cli("train --config " + std::string(kTmp) + "/det.cfg --out " + kTmp + "/det_a") != 0)
    return false;
  if (run_cli("train --config " + std::string(kTmp) + "/det.cfg --out " + kTmp + "/det_b") != 0)
    return false;
  const std::string a = slurp(std::string(kTmp) + "/det_a/report.csv");
  const std::string b = slurp(std::string(kTmp) + "/det_b/report.csv");
  if (a.empty() || a != b) return false;
  // The checkpoints agree too.
  return slurp(std::string(kTmp) + "/det_a/model.ckpt") ==
         slurp(std::string(kTmp) + "/det_b/model.ckpt");
}

struct Criterion {
  int number;
  const char* name;
  bool (*fn)();
};

const Criterion kCriteria[] = {
    {1, "routing round-trip is bit-exact", criterion_1},
    {2, "two-module routing instance is reproduced", criterion_2},
    {3, "coverage witness spans all activation subsets", criterion_3},
    {4, "SSM parallel/recurrent parity", criterion_4},
    {5, "GAU streaming/parallel parity", criterion_5},
    {6, "end-to-end streaming parity", criterion_6},
    {7, "gradient suite with negative control", criterion_7},
    {8, "attention FLOPs scale as r*w and linearly in n", criterion_8},
    {9, "attention span exceeds the working memory size", criterion_9},
    {10, "associative recall learned; pure SSM ablation fails", criterion_10},
    {11, "seeded training reports are byte-identical", criterion_11},
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);
  int failures = 0;
  for (const auto& c : kCriteria) {
    if (only != 0 && c.number != only) continue;
    const bool ok = c.fn();
    std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", c.number, c.name);
    if (!ok) ++failures;
  }
  return failures;
}
