#pragma once

// Dense double-precision tensors plus a tape for reverse-mode autodiff.
//
// A Tensor is a shape and a shared buffer of row-major doubles. Tensors that
// require gradients carry a second buffer of the same size. Operations that
// participate in differentiation push a backward closure onto the thread's
// active tape; Tape::backward replays the closures in reverse recording
// order, which is a valid topological order for a define-by-run graph.
//
// Tensors are immutable after construction except for grad accumulation.
// A tape is single-threaded; independent tapes may run on separate threads.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace seqboat {

class Tensor {
 public:
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape_, bool requires_grad_ = false) {
    Tensor t;
    t.shape = std::move(shape_);
    t.data = std::make_shared<std::vector<double>>(count(t.shape), 0.0);
    t.requires_grad = requires_grad_;
    if (requires_grad_) t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
    return t;
  }

  static Tensor full(std::vector<int> shape_, double v, bool requires_grad_ = false) {
    Tensor t = zeros(std::move(shape_), requires_grad_);
    for (double& x : *t.data) x = v;
    return t;
  }

  static Tensor from(std::vector<double> values, std::vector<int> shape_, bool requires_grad_ = false) {
    if (static_cast<std::int64_t>(values.size()) != count(shape_))
      throw std::invalid_argument("Tensor::from: value count does not match shape");
    Tensor t;
    t.shape = std::move(shape_);
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    t.requires_grad = requires_grad_;
    if (requires_grad_) t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad_ = false) {
    return from({v}, {1}, requires_grad_);
  }

  std::int64_t numel() const { return data ? static_cast<std::int64_t>(data->size()) : 0; }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double* gptr() { return grad->data(); }
  const double* gptr() const { return grad->data(); }

  double& at(int i) { return (*data)[static_cast<std::size_t>(i)]; }
  double at(int i) const { return (*data)[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return (*data)[static_cast<std::size_t>(i) * shape[1] + j]; }
  double at(int i, int j) const { return (*data)[static_cast<std::size_t>(i) * shape[1] + j]; }
  double& at(int i, int j, int k) {
    return (*data)[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  double at(int i, int j, int k) const {
    return (*data)[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  // Value of a one-element tensor.
  double value() const {
    if (numel() != 1) throw std::runtime_error("Tensor::value: tensor is not a scalar");
    return (*data)[0];
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
  }

  bool all_finite() const {
    for (double v : *data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static std::int64_t count(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }
};

// View with a new shape over the same buffers. No tape op is needed: the
// gradient buffer is shared, so accumulation lands in the right place.
inline Tensor reshape(const Tensor& t, std::vector<int> new_shape) {
  if (Tensor::count(new_shape) != t.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out = t;
  out.shape = std::move(new_shape);
  return out;
}

class Tape {
 public:
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  // Seeds loss.grad with 1 and replays every recorded backward rule exactly
  // once, newest first. Gradients accumulate into the leaves' grad buffers.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw std::runtime_error("backward: loss must be a scalar");
    if (!loss.requires_grad || !loss.grad)
      throw std::runtime_error("backward: loss is detached from the tape");
    if (ran_) throw std::runtime_error("backward: tape already replayed; reset() first");
    ran_ = true;
    (*loss.grad)[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void reset() {
    ops_.clear();
    ran_ = false;
  }

  std::size_t size() const { return ops_.size(); }
  bool ran() const { return ran_; }

 private:
  std::vector<std::function<void()>> ops_;
  bool ran_ = false;
};

inline thread_local Tape* tl_active_tape = nullptr;

inline bool tape_active() { return tl_active_tape != nullptr; }

inline void tape_record(std::function<void()> fn) {
  if (tl_active_tape) tl_active_tape->record(std::move(fn));
}

// RAII activation of a tape on the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(tl_active_tape) { tl_active_tape = &tape; }
  ~TapeScope() { tl_active_tape = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Suspends recording (used inside backward rules and forward-only paths).
class NoTapeScope {
 public:
  NoTapeScope() : prev_(tl_active_tape) { tl_active_tape = nullptr; }
  ~NoTapeScope() { tl_active_tape = prev_; }
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* prev_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

inline bool wants_grad(const Tensor& t) { return tape_active() && t.requires_grad; }

}  // namespace seqboat
