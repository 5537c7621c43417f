// Dense double-precision tensors with tape-based reverse-mode differentiation.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ernet {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Raised when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorStorage {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
};

/// Shared handle to a tensor. Copies alias the same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  int64_t dim(size_t axis) const { return impl_->shape.at(axis); }
  size_t rank() const { return impl_->shape.size(); }
  int64_t numel() const { return static_cast<int64_t>(impl_->values.size()); }

  std::span<const double> values() const { return impl_->values; }
  // Writable view. Only parameters and freshly created outputs should be mutated.
  std::span<double> mutable_values() { return impl_->values; }
  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  // Allocates a zero gradient on first use.
  std::span<double> grad_buffer() const;
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const;
  Tensor detach() const;

  const TensorStorage* identity() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorStorage> impl_;
};

/// Ordered record of differentiable operations. Each entry propagates the
/// gradient of its output to its inputs; backward() replays entries in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(BackwardFn fn) { entries_.push_back(std::move(fn)); }
  void backward(Tensor& root);
  void clear() { entries_.clear(); }
  size_t size() const { return entries_.size(); }

  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<BackwardFn> entries_;
};

/// Makes a tape active on the current thread for the lifetime of the scope.
/// Operations executed without an active tape are not recorded (inference).
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// True when an op over `inputs` must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace ernet
