#pragma once

// Flat key = value run configuration with [section] headers, '#' comments
// and strict unknown-key/missing-field diagnostics carrying line numbers.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqboat/model.hpp"
#include "seqboat/tasks.hpp"
#include "seqboat/train.hpp"

namespace seqboat {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str(), path);
  }

  static ConfigFile parse_string(const std::string& text, const std::string& name = "<config>") {
    ConfigFile cfg;
    cfg.raw_ = text;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']')
          throw ConfigError(name + ":" + std::to_string(lineno) + ": unterminated section header");
        section = trim(t.substr(1, t.size() - 2));
        if (section.empty())
          throw ConfigError(name + ":" + std::to_string(lineno) + ": empty section name");
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError(name + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(t.substr(0, eq));
      const std::string value = trim(t.substr(eq + 1));
      if (key.empty())
        throw ConfigError(name + ":" + std::to_string(lineno) + ": empty key");
      if (section.empty())
        throw ConfigError(name + ":" + std::to_string(lineno) + ": key outside any [section]");
      const std::string full = section + "." + key;
      if (entries_contains(cfg.entries_, full))
        throw ConfigError(name + ":" + std::to_string(lineno) + ": duplicate key " + full);
      cfg.entries_[full] = {value, lineno};
      cfg.name_ = name;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string get_str(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end())
      throw ConfigError(name_ + ": missing required field '" + key + "'");
    used_.insert({key, true});
    return it->second.value;
  }

  std::string get_str(const std::string& key, const std::string& dflt) const {
    return has(key) ? get_str(key) : dflt;
  }

  std::int64_t get_int(const std::string& key) const { return to_int(key, get_str(key)); }
  std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
    return has(key) ? get_int(key) : dflt;
  }

  double get_double(const std::string& key) const { return to_double(key, get_str(key)); }
  double get_double(const std::string& key, double dflt) const {
    return has(key) ? get_double(key) : dflt;
  }

  bool get_bool(const std::string& key) const {
    const std::string v = get_str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(field_diag(key) + ": expected a boolean, got '" + v + "'");
  }
  bool get_bool(const std::string& key, bool dflt) const {
    return has(key) ? get_bool(key) : dflt;
  }

  // Strict mode: any key never read by the typed getters is a likely typo.
  void check_all_used() const {
    for (const auto& [key, entry] : entries_)
      if (!used_.count(key))
        throw ConfigError(name_ + ":" + std::to_string(entry.line) + ": unknown field '" + key + "'");
  }

  const std::string& raw() const { return raw_; }

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static bool entries_contains(const std::map<std::string, Entry>& m, const std::string& k) {
    return m.count(k) > 0;
  }

  std::string field_diag(const std::string& key) const {
    auto it = entries_.find(key);
    return name_ + ":" + (it != entries_.end() ? std::to_string(it->second.line) : "?") +
           ": field '" + key + "'";
  }

  std::int64_t to_int(const std::string& key, const std::string& v) const {
    try {
      std::size_t pos = 0;
      const std::int64_t r = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing");
      return r;
    } catch (const std::exception&) {
      throw ConfigError(field_diag(key) + ": expected an integer, got '" + v + "'");
    }
  }

  double to_double(const std::string& key, const std::string& v) const {
    try {
      std::size_t pos = 0;
      const double r = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing");
      return r;
    } catch (const std::exception&) {
      throw ConfigError(field_diag(key) + ": expected a number, got '" + v + "'");
    }
  }

  static std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }

  std::string name_ = "<config>";
  std::string raw_;
  std::map<std::string, Entry> entries_;
  mutable std::map<std::string, bool> used_;
};

struct RunConfig {
  TaskSpec task;
  ModelConfig model;
  TrainConfig train;
  ActivationOverride override_mode = ActivationOverride::none;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string config_hash;
};

inline std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline RunConfig parse_run_config(const ConfigFile& f) {
  RunConfig rc;
  rc.config_hash = fnv1a_hex(f.raw());

  const std::string kind = f.get_str("task.kind");
  if (kind == "assoc_recall")
    rc.task.kind = TaskKind::assoc_recall;
  else if (kind == "copy")
    rc.task.kind = TaskKind::copy_task;
  else if (kind == "char_lm")
    rc.task.kind = TaskKind::char_lm;
  else
    throw ConfigError("field 'task.kind': unknown task '" + kind + "'");

  rc.task.seq_len = static_cast<int>(f.get_int("task.seq_len"));
  rc.task.causal = f.get_bool("task.causal", true);
  rc.task.eval_pct = static_cast<int>(f.get_int("task.eval_pct", 10));
  if (rc.task.eval_pct < 1 || rc.task.eval_pct > 99)
    throw ConfigError("field 'task.eval_pct': must be in [1, 99]");
  rc.task.num_pairs = static_cast<int>(f.get_int("task.num_pairs", 8));
  rc.task.spread = f.get_bool("task.spread", false);
  rc.task.payload_len = static_cast<int>(f.get_int("task.payload_len", 8));
  rc.task.context_len = static_cast<int>(f.get_int("task.context_len", 0));
  if (rc.task.kind == TaskKind::char_lm) {
    rc.task.corpus_path = f.get_str("task.corpus");
    rc.task.vocab = 0;  // derived from the corpus
  } else {
    rc.task.vocab = static_cast<int>(f.get_int("task.vocab"));
  }

  rc.model.n_layers = static_cast<int>(f.get_int("model.n_layers"));
  rc.model.d_m = static_cast<int>(f.get_int("model.d_m"));
  rc.model.d_z = static_cast<int>(f.get_int("model.d_z", 0));
  rc.model.d_v = static_cast<int>(f.get_int("model.d_v", 0));
  rc.model.ema_dim = static_cast<int>(f.get_int("model.ema_dim", 2));
  rc.model.window = static_cast<int>(f.get_int("model.window", 0));
  rc.model.alpha = f.get_double("model.alpha", 1.0);
  rc.model.seq_len = rc.task.seq_len;
  rc.model.causal = rc.task.causal;

  const std::string fn = f.get_str("model.attn_fn", "softmax");
  if (fn == "softmax")
    rc.model.attn_fn = AttnFn::softmax;
  else if (fn == "relu2")
    rc.model.attn_fn = AttnFn::relu2;
  else
    throw ConfigError("field 'model.attn_fn': expected softmax|relu2, got '" + fn + "'");

  const std::string norm = f.get_str("model.norm", "layernorm");
  if (norm == "layernorm")
    rc.model.norm = NormKind::layernorm;
  else if (norm == "scalenorm")
    rc.model.norm = NormKind::scalenorm;
  else
    throw ConfigError("field 'model.norm': expected layernorm|scalenorm, got '" + norm + "'");

  const std::string placement = f.get_str("model.norm_placement", "pre");
  if (placement == "pre")
    rc.model.norm_placement = NormPlacement::pre;
  else if (placement == "post")
    rc.model.norm_placement = NormPlacement::post;
  else
    throw ConfigError("field 'model.norm_placement': expected pre|post, got '" + placement + "'");

  const std::string positions = f.get_str("model.positions", "original");
  if (positions == "original")
    rc.model.pos_basis = PositionBasis::original;
  else if (positions == "compressed")
    rc.model.pos_basis = PositionBasis::compressed;
  else
    throw ConfigError("field 'model.positions': expected original|compressed, got '" + positions + "'");

  const std::string head = f.get_str("model.head", "lm");
  if (head == "lm")
    rc.model.head = HeadKind::lm;
  else if (head == "classification")
    rc.model.head = HeadKind::classification;
  else
    throw ConfigError("field 'model.head': expected lm|classification, got '" + head + "'");

  const std::string ov = f.get_str("model.activation_override", "none");
  if (ov == "none")
    rc.override_mode = ActivationOverride::none;
  else if (ov == "all_on")
    rc.override_mode = ActivationOverride::all_on;
  else if (ov == "all_off")
    rc.override_mode = ActivationOverride::all_off;
  else if (ov == "every_2")
    rc.override_mode = ActivationOverride::every_2;
  else if (ov == "every_4")
    rc.override_mode = ActivationOverride::every_4;
  else if (ov == "every_8")
    rc.override_mode = ActivationOverride::every_8;
  else
    throw ConfigError("field 'model.activation_override': unknown value '" + ov + "'");

  rc.train.optim.lr = f.get_double("optim.lr", 3e-3);
  rc.train.optim.beta1 = f.get_double("optim.beta1", 0.9);
  rc.train.optim.beta2 = f.get_double("optim.beta2", 0.98);
  rc.train.optim.eps = f.get_double("optim.eps", 1e-8);
  rc.train.optim.weight_decay = f.get_double("optim.weight_decay", 0.01);
  rc.train.optim.clip_norm = f.get_double("optim.clip_norm", 1.0);
  rc.train.optim.configurator_lr_scale = f.get_double("optim.configurator_lr_scale", 1.0);
  rc.train.steps = static_cast<int>(f.get_int("optim.steps"));
  rc.train.optim.total_steps = rc.train.steps;
  const double warmup_frac = f.get_double("optim.warmup_frac", 0.05);
  rc.train.optim.warmup_steps = static_cast<int>(warmup_frac * rc.train.steps);
  const std::string sched = f.get_str("optim.schedule", "linear");
  if (sched == "linear")
    rc.train.optim.schedule = LrSchedule::linear;
  else if (sched == "cosine")
    rc.train.optim.schedule = LrSchedule::cosine;
  else if (sched == "none")
    rc.train.optim.schedule = LrSchedule::none;
  else
    throw ConfigError("field 'optim.schedule': expected linear|cosine|none, got '" + sched + "'");
  rc.train.batch_size = static_cast<int>(f.get_int("optim.batch_size", 16));
  rc.train.eval_every = static_cast<int>(f.get_int("optim.eval_every", 25));
  rc.train.eval_samples = static_cast<int>(f.get_int("optim.eval_samples", 200));
  rc.train.target_metric = f.get_double("optim.target_metric", 0.0);
  rc.train.max_seconds = f.get_double("optim.max_seconds", 0.0);
  rc.train.threads = static_cast<int>(f.get_int("optim.threads", 1));
  if (rc.train.threads < 1) throw ConfigError("field 'optim.threads': must be >= 1");

  rc.seed = static_cast<std::uint64_t>(f.get_int("run.seed", 0));
  rc.task.seed = rc.seed;
  rc.train.seed = rc.seed;
  rc.out_dir = f.get_str("run.out", ".");
  rc.train.report_walltime = f.get_bool("run.report_walltime", true);

  f.check_all_used();
  return rc;
}

// Builds streams (loading the corpus once) and finalizes the model config
// whose vocab may come from the corpus.
struct PreparedRun {
  RunConfig rc;
  TaskStream train_stream;
  TaskStream eval_stream;
};

inline PreparedRun prepare_run(RunConfig rc) {
  rc.train.override_mode = rc.override_mode;
  if (rc.task.kind == TaskKind::char_lm) {
    auto corpus = std::make_shared<CharCorpus>(rc.task.corpus_path, rc.task);
    rc.task.vocab = corpus->vocab();
    rc.model.vocab = corpus->vocab();
    TaskStream tr(rc.task, false, corpus);
    TaskStream ev(rc.task, true, corpus);
    rc.model.finalize();
    return {rc, std::move(tr), std::move(ev)};
  }
  rc.model.vocab = rc.task.vocab;
  rc.model.finalize();
  return {rc, TaskStream(rc.task, false), TaskStream(rc.task, true)};
}

}  // namespace seqboat
