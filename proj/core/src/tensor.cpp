#include "pinncast/tensor.hpp"

#include <numeric>
#include <sstream>

#include "pinncast/errors.hpp"

namespace pinncast {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  check_extents(shape);
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  check_extents(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor make_tensor(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }

std::size_t Tensor::extent(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::span<const double> Tensor::grad() const {
  return impl_->grad_buffer();
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

// ---------------------------------------------------------------------------

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape::GradTape() : previous_(g_active_tape) { g_active_tape = this; }

GradTape::~GradTape() { g_active_tape = previous_; }

GradTape* GradTape::active() noexcept { return g_active_tape; }

void GradTape::record(std::shared_ptr<detail::TensorImpl> output, const char* op,
                      BackwardFn fn) {
  entries_.push_back(Entry{std::move(output), op, std::move(fn)});
}

void GradTape::rewind(std::size_t mark) {
  if (mark < entries_.size()) entries_.resize(mark);
}

std::size_t GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward() needs a single-element loss");
  }
  auto& seed = loss.impl()->grad_buffer();
  seed[0] += 1.0;

  std::size_t visited = 0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    // Entries whose output never received a gradient are unreachable from the loss.
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
    ++visited;
  }
  entries_.clear();
  return visited;
}

GradTape::Pause::Pause() : saved_(g_active_tape) { g_active_tape = nullptr; }

GradTape::Pause::~Pause() { g_active_tape = saved_; }

}  // namespace pinncast
