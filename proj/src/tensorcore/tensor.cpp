#include "ernet/tensor.hpp"

#include <sstream>

namespace ernet {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_to_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<TensorStorage>();
  const auto n = static_cast<size_t>(shape_numel(shape));
  t.impl_->shape = std::move(shape);
  t.impl_->values.assign(n, value);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_to_string(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<TensorStorage>();
  t.impl_->shape = std::move(shape);
  t.impl_->values = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

double Tensor::item() const {
  if (impl_->values.size() != 1) throw ShapeError("item() on non-scalar shape " + shape_to_string(shape()));
  return impl_->values[0];
}

std::span<double> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

Tensor Tensor::clone() const {
  Tensor t = from_values(impl_->shape, impl_->values, impl_->requires_grad);
  t.impl_->grad = impl_->grad;
  return t;
}

Tensor Tensor::detach() const { return from_values(impl_->shape, impl_->values, false); }

void Tape::backward(Tensor& root) {
  if (root.numel() != 1) throw ShapeError("backward root must be scalar, got " + shape_to_string(root.shape()));
  root.grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

}  // namespace ernet
