#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <vector>

#include "seqboat/gradcheck.hpp"
#include "seqboat/optim.hpp"
#include "seqboat/tasks.hpp"
#include "seqboat/train.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

using namespace seqboat;
using testutil::randn_tensor;

namespace {

ModelConfig small_model(const TaskSpec& task, int d_m = 16, int n_layers = 2, int window = 8) {
  ModelConfig cfg;
  cfg.n_layers = n_layers;
  cfg.d_m = d_m;
  cfg.ema_dim = 2;
  cfg.window = window;
  cfg.seq_len = task.seq_len;
  cfg.vocab = task.vocab;
  cfg.causal = true;
  cfg.head = HeadKind::lm;
  return cfg;
}

}  // namespace

TEST_CASE("optimizer: zero gradients leave parameters fixed unless decay acts") {
  Tensor p = Tensor::from({1.5, -2.0}, {2}, true);
  OptimConfig oc;
  oc.weight_decay = 0.0;
  oc.schedule = LrSchedule::none;
  oc.warmup_steps = 0;
  AdamW opt({{"p", p}}, oc);
  p.zero_grad();
  opt.step();
  CHECK(p.at(0) == 1.5);
  CHECK(p.at(1) == -2.0);

  // Decay-only path shrinks by (1 - lr * wd) per step.
  Tensor q = Tensor::from({2.0}, {1}, true);
  OptimConfig od;
  od.lr = 0.1;
  od.weight_decay = 0.5;
  od.schedule = LrSchedule::none;
  AdamW opt2({{"q", q}}, od);
  q.zero_grad();
  opt2.step();
  CHECK(q.at(0) == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-14));
  q.zero_grad();
  opt2.step();
  CHECK(q.at(0) == doctest::Approx(2.0 * (1.0 - 0.05) * (1.0 - 0.05)).epsilon(1e-14));
}

TEST_CASE("optimizer: first step matches the hand-computed closed form") {
  const double g = 0.37, lr = 0.01, b1 = 0.9, b2 = 0.98, eps = 1e-8, wd = 0.02, theta = 1.2;
  Tensor p = Tensor::from({theta}, {1}, true);
  (*p.grad)[0] = g;
  OptimConfig oc;
  oc.lr = lr;
  oc.beta1 = b1;
  oc.beta2 = b2;
  oc.eps = eps;
  oc.weight_decay = wd;
  oc.clip_norm = 0.0;
  oc.schedule = LrSchedule::none;
  AdamW opt({{"p", p}}, oc);
  opt.step();
  // Bias correction makes mhat = g and vhat = g^2 on the first step.
  const double expect = theta - lr * (g / (std::abs(g) + eps) + wd * theta);
  CHECK(p.at(0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("optimizer: clipping and NaN diagnostics") {
  Tensor p = Tensor::from({0.0, 0.0}, {2}, true);
  (*p.grad)[0] = 30.0;
  (*p.grad)[1] = 40.0;  // norm 50
  OptimConfig oc;
  oc.lr = 1.0;
  oc.weight_decay = 0.0;
  oc.clip_norm = 5.0;
  oc.schedule = LrSchedule::none;
  AdamW opt({{"p", p}}, oc);
  opt.step();
  // After clipping the direction is (0.6, 0.8) * 5; Adam normalizes scale,
  // so just confirm the update is finite and the ratio is preserved.
  CHECK(std::isfinite(p.at(0)));
  CHECK(p.at(0) != 0.0);

  Tensor bad = Tensor::from({1.0}, {1}, true);
  (*bad.grad)[0] = std::numeric_limits<double>::quiet_NaN();
  AdamW opt2({{"group_xyz", bad}}, oc);
  try {
    opt2.step();
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("group_xyz") != std::string::npos);
  }
}

TEST_CASE("learning-rate schedule: warmup then decay") {
  OptimConfig oc;
  oc.lr = 1.0;
  oc.warmup_steps = 10;
  oc.total_steps = 110;
  oc.schedule = LrSchedule::linear;
  CHECK(scheduled_lr(oc, 0) == doctest::Approx(0.1));
  CHECK(scheduled_lr(oc, 9) == doctest::Approx(1.0));
  CHECK(scheduled_lr(oc, 110) == doctest::Approx(0.0));
  CHECK(scheduled_lr(oc, 60) == doctest::Approx(0.5));
  oc.schedule = LrSchedule::cosine;
  CHECK(scheduled_lr(oc, 10) == doctest::Approx(1.0));
  CHECK(scheduled_lr(oc, 110) == doctest::Approx(0.0).epsilon(1e-9));
  oc.schedule = LrSchedule::none;
  CHECK(scheduled_lr(oc, 60) == doctest::Approx(1.0));
}

TEST_CASE("cross entropy values") {
  // Uniform logits over k classes cost ln k.
  for (int k : {2, 5, 9}) {
    Tensor logits = Tensor::full({1, k}, 0.3);
    CHECK(cross_entropy_mean(logits, {k - 1}, {1}).value() ==
          doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-12));
  }
  // A growing correct-class margin drives the loss to zero.
  double last = 1e9;
  for (double margin : {2.0, 5.0, 10.0, 20.0}) {
    Tensor logits = Tensor::from({margin, 0.0, 0.0}, {1, 3});
    const double loss = cross_entropy_mean(logits, {0}, {1}).value();
    CHECK(loss < last);
    last = loss;
  }
  CHECK(last < 1e-8);
  // Random case matches a direct log-softmax evaluation.
  std::mt19937_64 rng(71);
  Tensor logits = randn_tensor(rng, {3, 5}, false);
  std::vector<int> targets = {2, 0, 4};
  std::vector<std::uint8_t> mask = {1, 0, 1};
  double expect = 0.0;
  for (int i : {0, 2}) {
    std::vector<double> row(5);
    for (int j = 0; j < 5; ++j) row[static_cast<std::size_t>(j)] = logits.at(i, j);
    auto sm = oracle::softmax_row(row);
    expect += -std::log(sm[static_cast<std::size_t>(targets[static_cast<std::size_t>(i)])]);
  }
  expect /= 2.0;
  CHECK(cross_entropy_mean(logits, targets, mask).value() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("grad_check: exact for a linear model, catches a corrupted backward") {
  std::mt19937_64 rng(72);
  Tensor w = randn_tensor(rng, {4});
  Tensor x = randn_tensor(rng, {3, 4}, false);
  auto linear_loss = [&] { return sum_all(matvec(x, w)); };
  GradCheckOptions opts;
  opts.epsilon = 1e-5;
  GradCheckReport rep = grad_check(nullptr, linear_loss, {{"w", w}}, opts);
  CHECK(rep.conclusive);
  CHECK(rep.max_rel_err() < 1e-9);

  // Negative control: a silu whose backward rule is scaled by 1.05.
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
  auto bad_loss = [&] { return sum_all(corrupted_silu(matvec(x, w))); };
  GradCheckReport bad = grad_check(nullptr, bad_loss, {{"w", w}}, opts);
  CHECK(bad.max_rel_err() > 1e-2);  // detected
}

TEST_CASE("grad_check: margin resampling and the inconclusive path") {
  int calls = 0;
  auto hopeless = [&](std::uint64_t) {
    ++calls;
    return 0.0;  // never clears the margin
  };
  Tensor w = Tensor::from({1.0}, {1}, true);
  auto loss = [&] { return sum_all(mul(w, w)); };
  GradCheckOptions opts;
  opts.margin_threshold = 1e-3;
  opts.max_resamples = 20;
  GradCheckReport rep = grad_check(hopeless, loss, {{"w", w}}, opts);
  CHECK(!rep.conclusive);
  CHECK(calls == 21);  // initial try plus max_resamples
  REQUIRE(rep.groups.size() == 1);
  CHECK(!rep.groups[0].conclusive);
}

TEST_CASE("grad_check on the full tiny model clears every group") {
  TaskSpec task;
  task.kind = TaskKind::assoc_recall;
  task.seq_len = 16;
  task.vocab = 12;
  task.num_pairs = 4;
  task.seed = 5;
  ModelConfig cfg = small_model(task, 8, 2, 4);
  ModelParams m = model_init(cfg, 5);
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
  opts.margin_threshold = 1e-3;
  opts.max_coords_per_group = 24;
  opts.seed = 31;
  GradCheckReport rep = grad_check(reseed, loss, named_params(m), opts);
  REQUIRE(rep.conclusive);
  for (const auto& g : rep.groups) {
    INFO(g.group, " err ", g.max_rel_err);
    CHECK(g.max_rel_err < 1e-4);
  }
}

TEST_CASE("training: lr = 0 keeps metrics flat; default lr reduces the loss") {
  TaskSpec task;
  task.kind = TaskKind::assoc_recall;
  task.seq_len = 24;
  task.vocab = 16;
  task.num_pairs = 4;
  task.seed = 9;
  ModelConfig cfg = small_model(task, 8, 1, 4);

  {
    ModelParams m = model_init(cfg, 1);
    TrainConfig tc;
    tc.optim.lr = 0.0;
    tc.optim.weight_decay = 0.0;
    tc.steps = 8;
    tc.eval_every = 4;
    tc.eval_samples = 16;
    tc.batch_size = 2;
    tc.report_walltime = false;
    TaskStream tr(task, false), ev(task, true);
    TrainReport rep = train(m, task, tc, tr, ev);
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].metric == rep.rows[1].metric);
  }
  {
    ModelParams m = model_init(cfg, 1);
    TrainConfig tc;
    tc.steps = 50;
    tc.eval_every = 25;
    tc.eval_samples = 8;
    tc.batch_size = 4;
    tc.report_walltime = false;
    TaskStream tr(task, false), ev(task, true);
    TrainReport rep = train(m, task, tc, tr, ev);
    REQUIRE(rep.rows.size() == 2);
    // Loss falls over the first 50 steps at the default learning rate.
    CHECK(rep.rows[1].loss < rep.rows[0].loss);
  }
}

TEST_CASE("training is deterministic: same seed, byte-identical reports") {
  TaskSpec task;
  task.kind = TaskKind::copy_task;
  task.seq_len = 17;
  task.payload_len = 8;
  task.vocab = 12;
  task.seed = 4;
  ModelConfig cfg = small_model(task, 8, 2, 4);

  auto run = [&]() {
    ModelParams m = model_init(cfg, 42);
    TrainConfig tc;
    tc.steps = 12;
    tc.eval_every = 6;
    tc.eval_samples = 10;
    tc.batch_size = 3;
    tc.report_walltime = false;
    TaskStream tr(task, false), ev(task, true);
    TrainReport rep = train(m, task, tc, tr, ev);
    return train_report_csv(rep, cfg.n_layers);
  };
  CHECK(run() == run());
}

TEST_CASE("sharded training matches single-threaded training") {
  TaskSpec task;
  task.kind = TaskKind::assoc_recall;
  task.seq_len = 24;
  task.vocab = 16;
  task.num_pairs = 4;
  task.seed = 21;
  ModelConfig cfg = small_model(task, 8, 2, 4);

  auto run = [&](int threads) {
    ModelParams m = model_init(cfg, 77);
    TrainConfig tc;
    tc.steps = 10;
    tc.eval_every = 5;
    tc.eval_samples = 12;
    tc.batch_size = 4;
    tc.threads = threads;
    tc.report_walltime = false;
    TaskStream tr(task, false), ev(task, true);
    return train(m, task, tc, tr, ev);
  };
  TrainReport single = run(1);
  TrainReport sharded = run(2);
  REQUIRE(single.rows.size() == sharded.rows.size());
  for (std::size_t i = 0; i < single.rows.size(); ++i) {
    // Gradient reduction order differs, so allow rounding-level drift.
    CHECK(sharded.rows[i].loss == doctest::Approx(single.rows[i].loss).epsilon(1e-9));
    CHECK(sharded.rows[i].metric == doctest::Approx(single.rows[i].metric).epsilon(1e-6));
    for (std::size_t l = 0; l < single.rows[i].act_rate.size(); ++l)
      CHECK(sharded.rows[i].act_rate[l] ==
            doctest::Approx(single.rows[i].act_rate[l]).epsilon(1e-9));
  }
  // And sharded runs are themselves deterministic.
  TrainReport again = run(2);
  CHECK(train_report_csv(sharded, cfg.n_layers) == train_report_csv(again, cfg.n_layers));
}

TEST_CASE("divergence aborts and restores the last good parameters") {
  TaskSpec task;
  task.kind = TaskKind::assoc_recall;
  task.seq_len = 16;
  task.vocab = 12;
  task.num_pairs = 4;
  task.seed = 2;
  ModelConfig cfg = small_model(task, 8, 1, 4);
  ModelParams m = model_init(cfg, 3);
  // An absurd learning rate with no clipping blows the loss up quickly.
  TrainConfig tc;
  tc.optim.lr = 1e6;
  tc.optim.clip_norm = 0.0;
  tc.optim.schedule = LrSchedule::none;
  tc.optim.warmup_steps = 0;
  tc.steps = 40;
  tc.eval_every = 40;
  tc.eval_samples = 4;
  tc.batch_size = 2;
  tc.report_walltime = false;
  TaskStream tr(task, false), ev(task, true);
  TrainReport rep = train(m, task, tc, tr, ev);
  CHECK(rep.diverged);
  for (auto& p : named_params(m))
    for (double v : *p.t.data) REQUIRE(std::isfinite(v));
}
