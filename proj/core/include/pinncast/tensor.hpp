#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pinncast {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Row-major n-dimensional array of doubles with optional gradient.
///
/// A Tensor is a cheap handle: copies share storage, as in most autograd
/// engines. Ops never mutate their inputs; only leaves (parameters) are
/// written to, by initializers and optimizers, through data_mut().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  /// Extent along `axis`; negative axes count from the end.
  std::size_t extent(int axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> data_mut() { return impl_->data; }
  double item() const;
  double at(std::size_t flat_index) const { return impl_->data.at(flat_index); }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  /// Gradient buffer; all zeros if nothing has been accumulated yet.
  std::span<const double> grad() const;
  void zero_grad();

  /// New leaf holding a copy of the values, detached from any tape.
  Tensor detach() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_tensor(std::shared_ptr<detail::TensorImpl>);

  std::shared_ptr<detail::TensorImpl> impl_;
};

Tensor make_tensor(std::shared_ptr<detail::TensorImpl> impl);

/// Ordered record of differentiable ops executed on this thread.
///
/// Constructing a tape makes it the active tape of the calling thread (the
/// previous one is restored on destruction). Ops record themselves only while
/// a tape is active and at least one input requires a gradient, so inference
/// without a tape allocates nothing for backward.
class GradTape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() noexcept;

  void record(std::shared_ptr<detail::TensorImpl> output, const char* op, BackwardFn fn);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t mark() const noexcept { return entries_.size(); }
  /// Drop every entry recorded after `mark` (used for rejected solver steps).
  void rewind(std::size_t mark);

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse, visiting each
  /// entry once. Returns the number of entries whose backward ran. The tape is
  /// cleared afterwards.
  std::size_t backward(const Tensor& loss);

  /// Suspends recording on this thread for the guard's lifetime.
  class Pause {
   public:
    Pause();
    ~Pause();
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    GradTape* saved_;
  };

 private:
  struct Entry {
    std::shared_ptr<detail::TensorImpl> output;
    const char* op;
    BackwardFn backward;
  };

  std::vector<Entry> entries_;
  GradTape* previous_;
};

}  // namespace pinncast
