// seqboat: train, evaluate, trace, and benchmark SeqBoat models.
//
// Exit codes: 0 success, 2 config error, 1 anything else (including
// divergence during training).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "seqboat/seqboat.hpp"

namespace {

using namespace seqboat;

struct CommonArgs {
  std::string config_path;
  std::string checkpoint_path;
  std::string out_dir;
  std::int64_t seed = -1;  // -1: keep the config's seed
  int samples = 100;
};

RunConfig load_config(const CommonArgs& args) {
  RunConfig rc = parse_run_config(ConfigFile::parse_file(args.config_path));
  if (args.seed >= 0) {
    rc.seed = static_cast<std::uint64_t>(args.seed);
    rc.task.seed = rc.seed;
    rc.train.seed = rc.seed;
  }
  if (!args.out_dir.empty()) rc.out_dir = args.out_dir;
  std::filesystem::create_directories(rc.out_dir);
  return rc;
}

ModelParams build_model(const RunConfig& rc) { return model_init(rc.model, rc.seed); }

int cmd_train(const CommonArgs& args) {
  PreparedRun run = prepare_run(load_config(args));
  ModelParams model = build_model(run.rc);
  TrainReport report = train(model, run.rc.task, run.rc.train, run.train_stream, run.eval_stream);
  write_text_file(run.rc.out_dir + "/report.csv",
                  train_report_csv(report, run.rc.model.n_layers));
  save_checkpoint(run.rc.out_dir + "/model.ckpt", model);
  std::printf("steps=%d final_metric=%.6f%s\n", report.steps_run, report.final_metric,
              report.diverged ? " DIVERGED" : "");
  return report.diverged ? 1 : 0;
}

int cmd_eval(const CommonArgs& args) {
  PreparedRun run = prepare_run(load_config(args));
  ModelParams model = build_model(run.rc);
  load_checkpoint(args.checkpoint_path, model);
  double metric;
  if (run.rc.task.kind == TaskKind::char_lm) {
    metric = eval_loss(model, run.eval_stream, run.rc.train.eval_samples,
                       run.rc.train.override_mode) /
             std::log(2.0);
    std::printf("bpc=%.6f\n", metric);
  } else {
    metric = eval_accuracy(model, run.eval_stream, run.rc.train.eval_samples,
                           run.rc.train.override_mode);
    std::printf("accuracy=%.6f\n", metric);
  }
  return 0;
}

int cmd_trace(const CommonArgs& args) {
  PreparedRun run = prepare_run(load_config(args));
  ModelParams model = build_model(run.rc);
  if (!args.checkpoint_path.empty()) load_checkpoint(args.checkpoint_path, model);
  TraceSummary ts = collect_trace(model, run.eval_stream, args.samples,
                                  run.rc.train.override_mode, run.rc.config_hash);
  write_text_file(run.rc.out_dir + "/trace.json", trace_to_json(ts).dump(2) + "\n");
  std::printf("trace: %d samples, %zu layers -> %s/trace.json\n", ts.samples, ts.layers.size(),
              run.rc.out_dir.c_str());
  return 0;
}

int cmd_span(const CommonArgs& args) {
  PreparedRun run = prepare_run(load_config(args));
  ModelParams model = build_model(run.rc);
  if (!args.checkpoint_path.empty()) load_checkpoint(args.checkpoint_path, model);
  TraceSummary ts = collect_trace(model, run.eval_stream, args.samples,
                                  run.rc.train.override_mode, run.rc.config_hash);
  std::vector<double> spans = layer_spans(ts);
  write_text_file(run.rc.out_dir + "/span.csv", span_csv(spans));
  for (std::size_t l = 0; l < spans.size(); ++l)
    std::printf("layer %zu mean_span %.3f\n", l, spans[l]);
  return 0;
}

int cmd_bench(const CommonArgs& args) {
  PreparedRun run = prepare_run(load_config(args));
  ModelParams model = build_model(run.rc);
  if (!args.checkpoint_path.empty()) load_checkpoint(args.checkpoint_path, model);
  auto rows = run_bench(model, run.rc.task, run.rc.train);
  write_text_file(run.rc.out_dir + "/bench.csv", bench_csv(rows));
  for (const auto& r : rows)
    std::printf("p=%.2f attn_flops=%lld step_ms=%.3f token_us=%.3f\n", r.p, r.attn_flops,
                r.step_ms, r.token_us);
  return 0;
}

int cmd_decode(const CommonArgs& args, const std::string& prompt, int n_tokens) {
  PreparedRun run = prepare_run(load_config(args));
  ModelParams model = build_model(run.rc);
  if (!args.checkpoint_path.empty()) load_checkpoint(args.checkpoint_path, model);
  ModelStreamState state(model);

  std::vector<int> fed;
  if (run.rc.task.kind == TaskKind::char_lm) {
    const auto& corpus = run.eval_stream.corpus();
    for (unsigned char c : prompt) {
      const int id = corpus->id_of(c);
      if (id < 0) continue;  // byte not in the corpus vocabulary
      fed.push_back(id);
    }
  } else {
    for (char c : prompt)
      if (c >= '0' && c <= '9') fed.push_back(c - '0');
  }
  if (fed.empty()) fed.push_back(0);

  std::vector<double> logits;
  for (int id : fed) logits = model_step(state, id, model);
  std::string out;
  for (int t = 0; t < n_tokens; ++t) {
    int best = 0;
    for (std::size_t o = 1; o < logits.size(); ++o)
      if (logits[o] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(o);
    if (run.rc.task.kind == TaskKind::char_lm) {
      out.push_back(static_cast<char>(run.eval_stream.corpus()->byte_of(best)));
    } else {
      out += std::to_string(best) + " ";
    }
    logits = model_step(state, best, model);
  }
  std::printf("%s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SeqBoat sequence modeling laboratory"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string prompt = "";
  int n_tokens = 64;

  auto add_common = [&](CLI::App* sub, bool needs_ckpt) {
    sub->add_option("--config", args.config_path, "run configuration file")->required();
    auto* ck = sub->add_option("--checkpoint", args.checkpoint_path, "model checkpoint");
    if (needs_ckpt) ck->required();
    sub->add_option("--out", args.out_dir, "output directory");
    sub->add_option("--seed", args.seed, "override the config seed");
    sub->add_option("--samples", args.samples, "sequences to sample for analysis");
  };

  add_common(app.add_subcommand("train", "train a model; writes report.csv and model.ckpt"), false);
  add_common(app.add_subcommand("eval", "evaluate a checkpoint on the eval split"), true);
  add_common(app.add_subcommand("trace", "write the activation trace JSON"), true);
  add_common(app.add_subcommand("span", "write per-layer mean attention spans"), true);
  add_common(app.add_subcommand("bench", "FLOP and latency benchmark"), false);
  auto* decode = app.add_subcommand("decode", "greedy streaming generation");
  add_common(decode, true);
  decode->add_option("--prompt", prompt, "prompt text");
  decode->add_option("--tokens", n_tokens, "tokens to generate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("train")) return cmd_train(args);
    if (app.got_subcommand("eval")) return cmd_eval(args);
    if (app.got_subcommand("trace")) return cmd_trace(args);
    if (app.got_subcommand("span")) return cmd_span(args);
    if (app.got_subcommand("bench")) return cmd_bench(args);
    if (app.got_subcommand("decode")) return cmd_decode(args, prompt, n_tokens);
  } catch (const seqboat::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
