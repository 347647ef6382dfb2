#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace eit {

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// Global switch for the post-op finite check. On by default; finite-difference
// sweeps turn it off for speed.
struct FiniteCheck {
  static bool& enabled() {
    static bool on = true;
    return on;
  }
};

template <typename T>
struct Storage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;         // empty until first needed
  bool requires_grad = false;  // leaf parameter / input flag
  bool tracked = false;        // participates in the active graph

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

// Value-semantic handle onto shared storage. Copies share the buffer; ops
// never mutate their inputs, so a tensor without an attached graph is an
// immutable value.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : s_(std::make_shared<Storage<T>>()) {
    for (int d : shape) {
      if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    s_->shape = std::move(shape);
    s_->data.assign(static_cast<size_t>(numel_of(s_->shape)), fill);
    s_->requires_grad = requires_grad;
    s_->tracked = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    Tensor t;
    t.s_ = std::make_shared<Storage<T>>();
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    t.s_->shape = std::move(shape);
    t.s_->data = std::move(data);
    t.s_->requires_grad = requires_grad;
    t.s_->tracked = requires_grad;
    return t;
  }

  static Tensor scalar(T value) { return full({1}, value); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int dim(int i) const { return s_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(s_->data.size()); }

  // A Tensor is a handle: const applies to the handle, not the shared
  // storage, so accessors below are const like shared_ptr's operator*.
  T* data() const { return s_->data.data(); }
  std::vector<T>& vec() const { return s_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() requires a scalar tensor");
    return s_->data[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool b) const {
    s_->requires_grad = b;
    if (b) s_->tracked = true;
  }

  bool tracked() const { return s_ && s_->tracked; }
  void mark_tracked() const { s_->tracked = true; }

  bool has_grad() const { return !s_->grad.empty(); }
  T* grad() const {
    s_->ensure_grad();
    return s_->grad.data();
  }
  const std::vector<T>& grad_vec() const { return s_->grad; }

  void zero_grad() const {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }

  std::shared_ptr<Storage<T>> storage() const { return s_; }

  // Deep copy of values only (no graph membership, no grad).
  Tensor clone_detached() const {
    Tensor t;
    t.s_ = std::make_shared<Storage<T>>();
    t.s_->shape = s_->shape;
    t.s_->data = s_->data;
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(s_->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<U>(s_->data[i]);
    return Tensor<U>::from_data(s_->shape, std::move(d));
  }

 private:
  std::shared_ptr<Storage<T>> s_;
};

// Tape of executed operations. Backward runs the recorded closures in exact
// reverse of forward append order; saved activations live in the closures as
// shared storage handles and are never written after forward.
template <typename T>
class Tape {
 public:
  Tape() : prev_(current_ptr()) { current_ptr() = this; }
  ~Tape() { current_ptr() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_ptr(); }

  void record(const char* op, std::function<void()> fn) {
    nodes_.push_back(Node{op, std::move(fn)});
  }

  size_t size() const { return nodes_.size(); }

  void backward(Tensor<T>& loss) {
    if (done_) throw NumericError("backward called twice without reset");
    if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss");
    if (!loss.tracked()) throw ShapeError("loss has no graph attached");
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
    done_ = true;
  }

  void reset() {
    nodes_.clear();
    done_ = false;
  }

 private:
  struct Node {
    const char* op;
    std::function<void()> fn;
  };

  static Tape*& current_ptr() {
    thread_local Tape* cur = nullptr;
    return cur;
  }

  std::vector<Node> nodes_;
  Tape* prev_ = nullptr;
  bool done_ = false;
};

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  if (!FiniteCheck::enabled()) return;
  const T* p = t.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(static_cast<double>(p[i])))
      throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

namespace detail {

// True when an op executed on these inputs must be recorded.
template <typename T>
inline bool tracking(const Tensor<T>& a) {
  return Tape<T>::current() != nullptr && a.tracked();
}

template <typename T>
inline bool tracking(const Tensor<T>& a, const Tensor<T>& b) {
  return Tape<T>::current() != nullptr && (a.tracked() || b.tracked());
}

template <typename T>
inline bool tracking(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
  return Tape<T>::current() != nullptr && (a.tracked() || b.tracked() || c.tracked());
}

}  // namespace detail

}  // namespace eit
