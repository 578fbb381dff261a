#pragma once

// Dense row-major f64 tensor with define-by-run reverse-mode autodiff.
//
// A Tensor is a cheap handle onto shared storage. Operations executed while a
// TapeScope is active, and with at least one input that requires gradients,
// append a backward rule to the active Tape. backward() replays the rules in
// reverse and accumulates into every tensor that requires gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vmunet/error.hpp"

namespace vmunet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) { impl_->shape = {0}; }

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    if (vmunet::numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       to_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), 0.0, requires_grad); }
  static Tensor ones(Shape shape, bool requires_grad = false) { return full(std::move(shape), 1.0, requires_grad); }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = vmunet::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor scalar(double value, bool requires_grad = false) { return Tensor({}, {value}, requires_grad); }

  const Shape& shape() const noexcept { return impl_->shape; }
  std::size_t rank() const noexcept { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const noexcept { return impl_->data.size(); }

  std::span<const double> data() const noexcept { return impl_->data; }
  /// Direct write access. Only for initialisation and optimiser updates, never inside a recorded graph.
  std::span<double> mutable_data() noexcept { return impl_->data; }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
  }

  double operator[](std::size_t flat) const { return impl_->data[flat]; }

  /// Row-major element access by multi-index.
  double at(std::initializer_list<std::size_t> index) const { return impl_->data[offset(index)]; }

  bool requires_grad() const noexcept { return impl_->requires_grad; }
  void set_requires_grad(bool flag) noexcept { impl_->requires_grad = flag; }

  bool has_grad() const noexcept { return !impl_->grad.empty(); }
  /// Accumulated gradient; zeros if nothing has flowed into this tensor.
  std::span<const double> grad() const { return impl_->ensure_grad(); }
  std::span<double> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy with no gradient history.
  Tensor detach(bool requires_grad = false) const { return Tensor(shape(), impl_->data, requires_grad); }

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  const detail::ImplPtr& impl() const noexcept { return impl_; }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw ShapeError("index rank mismatch for shape " + to_string(shape()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= impl_->shape[axis]) throw ShapeError("index out of range for shape " + to_string(shape()));
      flat = flat * impl_->shape[axis] + i;
      ++axis;
    }
    return flat;
  }

  detail::ImplPtr impl_;
};

/// Ordered record of the backward rules of executed primitives.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> rule) { rules_.push_back(std::move(rule)); }
  std::size_t size() const noexcept { return rules_.size(); }
  bool empty() const noexcept { return rules_.empty(); }
  /// Drops every rule and, with them, the intermediates they keep alive.
  void clear() noexcept { rules_.clear(); }

  void replay_backward() {
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> rules_;
};

namespace detail {

inline Tape*& active_tape_slot() noexcept {
  thread_local Tape* tape = nullptr;
  return tape;
}

template <class... Ts>
bool needs_grad(const Ts&... inputs) noexcept {
  return active_tape_slot() != nullptr && (inputs.requires_grad() || ...);
}

inline void record(std::function<void()> rule) { active_tape_slot()->record(std::move(rule)); }

inline Tensor make_result(Shape shape, std::vector<double> data, bool tracked) {
  return Tensor(std::move(shape), std::move(data), tracked);
}

#ifndef NDEBUG
inline void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}
#else
inline void check_finite(const Tensor&, const char*) {}
#endif

}  // namespace detail

/// Makes `tape` the recording target on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) noexcept : previous_(detail::active_tape_slot()) { detail::active_tape_slot() = &tape; }
  ~TapeScope() { detail::active_tape_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Seeds d(loss)/d(loss) = 1, replays the tape in reverse and clears it.
inline void backward(const Tensor& loss, Tape& tape) {
  if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) {
    tape.clear();
    return;
  }
  loss.impl()->ensure_grad()[0] += 1.0;
  tape.replay_backward();
  tape.clear();
}

}  // namespace vmunet
