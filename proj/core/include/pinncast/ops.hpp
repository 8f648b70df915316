#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "pinncast/tensor.hpp"

namespace pinncast {

/// Epsilon inside the layer-norm square root.
inline constexpr double kLayerNormEps = 1e-5;

// Shape ops. All of these copy; none aliases its input.
Tensor reshape(const Tensor& x, Shape shape);
/// General axis permutation: output axis i is input axis `axes[i]`.
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor concat_last_axis(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor pad_zero(const Tensor& x, std::size_t axis, std::size_t before, std::size_t after);

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Adds `b` to every trailing block of `a`; b.shape must equal the last
/// b.rank() extents of a (bias vectors, positional tables).
Tensor add_trailing(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
/// sum_i coeffs[i] * terms[i]; all terms share one shape.
Tensor lincomb(std::span<const Tensor> terms, std::span<const double> coeffs);
/// y = x * scale[c] + shift[c] where c indexes `axis`.
Tensor affine_along(const Tensor& x, std::size_t axis, std::span<const double> scale,
                    std::span<const double> shift);
Tensor relu(const Tensor& x);  // relu'(0) = 0
Tensor abs(const Tensor& x);   // abs'(0) = 0
Tensor square(const Tensor& x);

// Reductions to a rank-0 tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Batched matrix product a[..., m, k] @ b[..., k, n]. `b` is either rank 2
/// (shared across the batch) or has exactly the leading extents of `a`.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x @ w + bias with w of shape (in, out).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax_last(const Tensor& x);

/// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

/// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

/// Forward-pass mode shared by model components.
struct RunMode {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout

  bool dropout_active(double rate) const { return training && rate > 0.0 && rng != nullptr; }
};

Tensor maybe_dropout(const Tensor& x, double rate, const RunMode& mode);

/// True if every value is finite.
bool all_finite(std::span<const double> values);

}  // namespace pinncast
