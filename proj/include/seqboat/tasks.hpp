#pragma once

// Synthetic diagnostic tasks and a byte-level corpus loader.
//
// Every generator is a pure function of (spec, sample id): the id seeds a
// splitmix-derived RNG, and a hash partition of ids keeps train and eval
// streams disjoint. Samples carry inputs, per-position targets and a loss
// mask over the supervised positions.
//
// assoc_recall: key-value pairs, filler, then a query key at the end; the
//   model must emit the paired value at the last position. The spread layout
//   scatters the pairs across the sequence so that salient tokens are sparse.
// copy: payload, separator, then an echo region of pad tokens whose targets
//   repeat the payload.
// char_lm: next-byte prediction over contiguous non-overlapping windows;
//   eval windows carry a left context whose positions are unsupervised.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqboat {

enum class TaskKind { assoc_recall, copy_task, char_lm };

struct TaskSpec {
  TaskKind kind = TaskKind::assoc_recall;
  int seq_len = 64;
  int vocab = 32;
  bool causal = true;
  std::uint64_t seed = 0;
  int eval_pct = 10;  // hash-partition share of eval ids

  // assoc_recall
  int num_pairs = 8;
  bool spread = false;

  // copy
  int payload_len = 8;

  // char_lm
  std::string corpus_path;
  int context_len = 0;
};

struct Sample {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;  // 1 at supervised positions
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Hash partition of the id space; train and eval never share an id.
inline bool is_eval_id(const TaskSpec& spec, std::uint64_t id) {
  return detail::splitmix64(spec.seed ^ detail::splitmix64(id)) % 100 <
         static_cast<std::uint64_t>(spec.eval_pct);
}

// Token layout for associative recall within `vocab` symbols:
// keys [0, n_keys), values [n_keys, n_keys + n_values), filler = vocab - 1.
struct RecallLayout {
  int n_keys, n_values, filler;
};

inline RecallLayout recall_layout(const TaskSpec& spec) {
  RecallLayout lay;
  lay.n_keys = spec.vocab / 2;
  lay.n_values = spec.vocab - lay.n_keys - 1;
  lay.filler = spec.vocab - 1;
  if (lay.n_keys < spec.num_pairs)
    throw std::invalid_argument("gen_assoc_recall: vocab too small for unique keys");
  if (lay.n_values < 1) throw std::invalid_argument("gen_assoc_recall: vocab too small");
  if (spec.seq_len < 2 * spec.num_pairs + 2)
    throw std::invalid_argument("gen_assoc_recall: seq_len too short for the pairs");
  return lay;
}

inline Sample gen_assoc_recall(const TaskSpec& spec, std::uint64_t id) {
  const RecallLayout lay = recall_layout(spec);
  std::uint64_t state = detail::splitmix64(spec.seed * 0x100000001b3ULL + id);
  auto next = [&state]() {
    state = detail::splitmix64(state);
    return state;
  };

  // Unique keys by partial Fisher-Yates over the key range.
  std::vector<int> pool(static_cast<std::size_t>(lay.n_keys));
  for (int i = 0; i < lay.n_keys; ++i) pool[static_cast<std::size_t>(i)] = i;
  std::vector<int> keys(static_cast<std::size_t>(spec.num_pairs));
  for (int i = 0; i < spec.num_pairs; ++i) {
    const int j = i + static_cast<int>(next() % static_cast<std::uint64_t>(lay.n_keys - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    keys[static_cast<std::size_t>(i)] = pool[static_cast<std::size_t>(i)];
  }
  std::vector<int> values(static_cast<std::size_t>(spec.num_pairs));
  for (int& v : values) v = lay.n_keys + static_cast<int>(next() % static_cast<std::uint64_t>(lay.n_values));

  const int n = spec.seq_len;
  Sample s;
  s.inputs.assign(static_cast<std::size_t>(n), lay.filler);
  s.targets.assign(static_cast<std::size_t>(n), 0);
  s.mask.assign(static_cast<std::size_t>(n), 0);

  // Pair placement: packed just before the query, or spread evenly across
  // [0, n-2]. The spread layout makes the salient tokens sparse.
  for (int i = 0; i < spec.num_pairs; ++i) {
    int at;
    if (spec.spread) {
      at = static_cast<int>(static_cast<std::int64_t>(i) * (n - 2) / spec.num_pairs);
    } else {
      at = n - 1 - 2 * (spec.num_pairs - i);
    }
    s.inputs[static_cast<std::size_t>(at)] = keys[static_cast<std::size_t>(i)];
    s.inputs[static_cast<std::size_t>(at) + 1] = values[static_cast<std::size_t>(i)];
  }

  const int query = static_cast<int>(next() % static_cast<std::uint64_t>(spec.num_pairs));
  s.inputs[static_cast<std::size_t>(n - 1)] = keys[static_cast<std::size_t>(query)];
  s.targets[static_cast<std::size_t>(n - 1)] = values[static_cast<std::size_t>(query)];
  s.mask[static_cast<std::size_t>(n - 1)] = 1;
  return s;
}

// copy: seq_len = 2 * payload_len + 1. Tokens 0 (pad) and 1 (separator) are
// reserved; payload symbols come from [2, vocab).
inline Sample gen_copy(const TaskSpec& spec, std::uint64_t id) {
  const int len = spec.payload_len;
  if (spec.seq_len != 2 * len + 1)
    throw std::invalid_argument("gen_copy: seq_len must equal 2 * payload_len + 1");
  if (spec.vocab < 3) throw std::invalid_argument("gen_copy: vocab too small");
  std::uint64_t state = detail::splitmix64(spec.seed * 0x100000001b3ULL + id);
  auto next = [&state]() {
    state = detail::splitmix64(state);
    return state;
  };
  Sample s;
  s.inputs.assign(static_cast<std::size_t>(spec.seq_len), 0);
  s.targets.assign(static_cast<std::size_t>(spec.seq_len), 0);
  s.mask.assign(static_cast<std::size_t>(spec.seq_len), 0);
  for (int i = 0; i < len; ++i)
    s.inputs[static_cast<std::size_t>(i)] = 2 + static_cast<int>(next() % static_cast<std::uint64_t>(spec.vocab - 2));
  s.inputs[static_cast<std::size_t>(len)] = 1;  // separator
  for (int i = 0; i < len; ++i) {
    s.targets[static_cast<std::size_t>(len + 1 + i)] = s.inputs[static_cast<std::size_t>(i)];
    s.mask[static_cast<std::size_t>(len + 1 + i)] = 1;
  }
  return s;
}

// ---------------------------------------------------------------------------
// byte corpus
// ---------------------------------------------------------------------------

class CharCorpus {
 public:
  // Builds a byte-level vocabulary (sorted distinct bytes) and tiles the
  // bytes into contiguous non-overlapping windows of seq_len tokens. The
  // final eval_pct% of windows form the eval split.
  CharCorpus(const std::string& path, const TaskSpec& spec) : spec_(spec) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_char_corpus: cannot open " + path);
    std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (raw.empty()) throw std::runtime_error("load_char_corpus: empty corpus " + path);
    std::set<unsigned char> seen(raw.begin(), raw.end());
    byte_to_id_.assign(256, -1);
    for (unsigned char b : seen) {
      byte_to_id_[b] = static_cast<int>(id_to_byte_.size());
      id_to_byte_.push_back(b);
    }
    ids_.reserve(raw.size());
    for (char c : raw) ids_.push_back(byte_to_id_[static_cast<unsigned char>(c)]);

    // A window of seq_len inputs needs one extra byte for the final target.
    n_windows_ = static_cast<int>((ids_.size() - 1) / static_cast<std::size_t>(spec.seq_len));
    if (n_windows_ < 2) throw std::runtime_error("load_char_corpus: corpus shorter than two windows");
    n_eval_ = std::max(1, n_windows_ * spec.eval_pct / 100);
  }

  int vocab() const { return static_cast<int>(id_to_byte_.size()); }
  int train_windows() const { return n_windows_ - n_eval_; }
  int eval_windows() const { return n_eval_; }
  std::int64_t total_tokens() const { return static_cast<std::int64_t>(ids_.size()); }
  unsigned char byte_of(int id) const { return id_to_byte_[static_cast<std::size_t>(id)]; }
  int id_of(unsigned char b) const { return byte_to_id_[b]; }

  Sample train_sample(std::uint64_t id) const { return window(static_cast<int>(id % train_windows()), 0); }

  // Eval windows carry up to context_len unsupervised tokens of left context.
  Sample eval_sample(std::uint64_t id) const {
    const int w = train_windows() + static_cast<int>(id % n_eval_);
    return window(w, spec_.context_len);
  }

 private:
  Sample window(int w, int context) const {
    const int n = spec_.seq_len;
    const std::int64_t start = static_cast<std::int64_t>(w) * n;
    const int ctx = static_cast<int>(std::min<std::int64_t>(context, start));
    Sample s;
    const int total = ctx + n;
    s.inputs.resize(static_cast<std::size_t>(total));
    s.targets.resize(static_cast<std::size_t>(total));
    s.mask.assign(static_cast<std::size_t>(total), 0);
    for (int i = 0; i < total; ++i) {
      const std::int64_t p = start - ctx + i;
      s.inputs[static_cast<std::size_t>(i)] = ids_[static_cast<std::size_t>(p)];
      s.targets[static_cast<std::size_t>(i)] = ids_[static_cast<std::size_t>(p + 1)];
      if (i >= ctx) s.mask[static_cast<std::size_t>(i)] = 1;
    }
    return s;
  }

  TaskSpec spec_;
  std::vector<int> byte_to_id_;
  std::vector<unsigned char> id_to_byte_;
  std::vector<int> ids_;
  int n_windows_ = 0;
  int n_eval_ = 0;
};

// ---------------------------------------------------------------------------
// streams
// ---------------------------------------------------------------------------

// Deterministic sample streams over the hash-partitioned id space. The
// corpus task partitions window indices instead (contiguous tail is eval).
class TaskStream {
 public:
  TaskStream(const TaskSpec& spec, bool eval) : spec_(spec), eval_(eval) {
    if (spec.kind == TaskKind::char_lm)
      corpus_ = std::make_shared<CharCorpus>(spec.corpus_path, spec);
  }

  TaskStream(const TaskSpec& spec, bool eval, std::shared_ptr<CharCorpus> corpus)
      : spec_(spec), eval_(eval), corpus_(std::move(corpus)) {}

  int vocab() const { return corpus_ ? corpus_->vocab() : spec_.vocab; }
  const std::shared_ptr<CharCorpus>& corpus() const { return corpus_; }

  Sample next() {
    if (spec_.kind == TaskKind::char_lm) {
      const std::uint64_t id = counter_++;
      return eval_ ? corpus_->eval_sample(id) : corpus_->train_sample(id);
    }
    while (true) {
      const std::uint64_t id = counter_++;
      if (is_eval_id(spec_, id) != eval_) continue;
      return spec_.kind == TaskKind::assoc_recall ? gen_assoc_recall(spec_, id)
                                                  : gen_copy(spec_, id);
    }
  }

  void reset() { counter_ = 0; }

 private:
  TaskSpec spec_;
  bool eval_;
  std::shared_ptr<CharCorpus> corpus_;
  std::uint64_t counter_ = 0;
};

}  // namespace seqboat
