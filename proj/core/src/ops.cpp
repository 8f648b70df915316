#include "pinncast/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <string>

#include "pinncast/errors.hpp"

namespace pinncast {

namespace {

using Impl = std::shared_ptr<detail::TensorImpl>;

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (GradTape::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

Tensor new_tensor(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return make_tensor(std::move(impl));
}

Tensor finish(Tensor out, const char* op, bool record, GradTape::BackwardFn fn) {
#ifndef NDEBUG
  if (!all_finite(out.data())) {
    throw NumericalError(std::string("non-finite output from ") + op);
  }
#endif
  if (record) {
    out.impl()->requires_grad = true;
    GradTape::active()->record(out.impl(), op, std::move(fn));
  }
  return out;
}

// Gradient sink for an input; null when that input does not need one.
double* sink(const Impl& impl) {
  return impl->requires_grad ? impl->grad_buffer().data() : nullptr;
}

std::string axis_msg(const char* op, std::size_t axis, const Shape& s) {
  return std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
         shape_str(s);
}

// Splits a shape around `axis` into (outer, extent, inner) block counts.
struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename Fwd, typename Dfdx>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Dfdx dfdx) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  const bool rec = should_record({&x});
  Impl xi = x.impl();
  return finish(new_tensor(x.shape(), std::move(out)), op, rec,
                [xi, dfdx](std::span<const double> go) {
                  double* gx = sink(xi);
                  if (!gx) return;
                  const auto& xv = xi->data;
                  for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * dfdx(xv[i]);
                });
}

// C[m,n] += A[m,k] B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// A_grad[m,k] += G[m,n] B[k,n]^T
void gemm_nt(const double* g, const double* b, double* ga, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* gai = ga + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      gai[p] += acc;
    }
  }
}

// B_grad[k,n] += A[m,k]^T G[m,n]
void gemm_tn(const double* a, const double* g, double* gb, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* gbp = gb + p * n;
      for (std::size_t j = 0; j < n; ++j) gbp[j] += av * gi[j];
    }
  }
}

}  // namespace

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  for (auto e : shape) {
    if (e == 0) throw DimensionError("reshape: zero extent in " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const bool rec = should_record({&x});
  Impl xi = x.impl();
  return finish(new_tensor(std::move(shape), std::move(out)), "reshape", rec,
                [xi](std::span<const double> go) {
                  double* gx = sink(xi);
                  if (!gx) return;
                  for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
                });
}

namespace {

// For each output flat index, the input flat index under `axes`.
std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& axes) {
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out[d]) {
        off += stride[d];
        break;
      }
      off -= stride[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto& in = x.shape();
  if (axes.size() != in.size()) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " +
                         shape_str(in));
  }
  std::vector<bool> seen(in.size(), false);
  for (auto a : axes) {
    if (a >= in.size() || seen[a]) throw DimensionError("permute: invalid axis order");
    seen[a] = true;
  }
  Shape out_shape(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out_shape[i] = in[axes[i]];

  auto map = std::make_shared<std::vector<std::size_t>>(permute_index(in, axes));
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[(*map)[i]];

  const bool rec = should_record({&x});
  Impl xi = x.impl();
  return finish(new_tensor(std::move(out_shape), std::move(out)), "permute", rec,
                [xi, map](std::span<const double> go) {
                  double* gx = sink(xi);
                  if (!gx) return;
                  for (std::size_t i = 0; i < go.size(); ++i) gx[(*map)[i]] += go[i];
                });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank < 2 for " + shape_str(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError(axis_msg("concat", axis, ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == ref[i];
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_str(ref) + " and " +
                           shape_str(s));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const AxisSplit ps = split_at(p.shape(), axis);
    const auto src = p.data();
    const std::size_t block = ps.len * ps.inner;
    for (std::size_t o = 0; o < ps.outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.begin() + static_cast<std::ptrdiff_t>(o * os.len * os.inner + offset * os.inner));
    }
    offset += ps.len;
  }

  bool rec = false;
  if (GradTape::active()) {
    rec = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  }
  std::vector<Impl> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return finish(new_tensor(std::move(out_shape), std::move(out)), "concat", rec,
                [impls, offsets, os, axis](std::span<const double> go) {
                  for (std::size_t k = 0; k < impls.size(); ++k) {
                    double* g = sink(impls[k]);
                    if (!g) continue;
                    const AxisSplit ps = split_at(impls[k]->shape, axis);
                    const std::size_t block = ps.len * ps.inner;
                    for (std::size_t o = 0; o < ps.outer; ++o) {
                      const double* src = go.data() + o * os.len * os.inner + offsets[k] * os.inner;
                      double* dst = g + o * block;
                      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                    }
                  }
                });
}

Tensor concat_last_axis(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  return concat(parts, parts.front().rank() - 1);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& in = x.shape();
  if (axis >= in.size()) throw DimensionError(axis_msg("slice", axis, in));
  if (length == 0 || start + length > in[axis]) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside axis " +
                         std::to_string(axis) + " of " + shape_str(in));
  }
  const AxisSplit is = split_at(in, axis);
  Shape out_shape = in;
  out_shape[axis] = length;
  const std::size_t block = length * is.inner;
  std::vector<double> out(is.outer * block);
  const auto xs = x.data();
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(o * is.len * is.inner + start * is.inner),
                block, out.begin() + static_cast<std::ptrdiff_t>(o * block));
  }
  const bool rec = should_record({&x});
  Impl xi = x.impl();
  return finish(new_tensor(std::move(out_shape), std::move(out)), "slice", rec,
                [xi, is, start, block](std::span<const double> go) {
                  double* gx = sink(xi);
                  if (!gx) return;
                  for (std::size_t o = 0; o < is.outer; ++o) {
                    double* dst = gx + o * is.len * is.inner + start * is.inner;
                    const double* src = go.data() + o * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                  }
                });
}

Tensor pad_zero(const Tensor& x, std::size_t axis, std::size_t before, std::size_t after) {
  const Shape& in = x.shape();
  if (axis >= in.size()) throw DimensionError(axis_msg("pad_zero", axis, in));
  const AxisSplit is = split_at(in, axis);
  Shape out_shape = in;
  out_shape[axis] += before + after;
  const std::size_t out_len = out_shape[axis];
  std::vector<double> out(shape_numel(out_shape), 0.0);
  const auto xs = x.data();
  const std::size_t block = is.len * is.inner;
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                out.begin() + static_cast<std::ptrdiff_t>(o * out_len * is.inner + before * is.inner));
  }
  const bool rec = should_record({&x});
  Impl xi = x.impl();
  return finish(new_tensor(std::move(out_shape), std::move(out)), "pad_zero", rec,
                [xi, is, before, out_len, block](std::span<const double> go) {
                  double* gx = sink(xi);
                  if (!gx) return;
                  for (std::size_t o = 0; o < is.outer; ++o) {
                    const double* src = go.data() + o * out_len * is.inner + before * is.inner;
                    double* dst = gx + o * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                  }
                });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  const bool rec = should_record({&a, &b});
  Impl ai = a.impl(), bi = b.impl();
  return finish(new_tensor(a.shape(), std::move(out)), "add", rec,
                [ai, bi](std::span<const double> go) {
                  if (double* ga = sink(ai)) {
                    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                  }
                  if (double* gb = sink(bi)) {
                    for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
                  }
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  const bool rec = should_record({&a, &b});
  Impl ai = a.impl(), bi = b.impl();
  return finish(new_tensor(a.shape(), std::move(out)), "sub", rec,
                [ai, bi](std::span<const double> go) {
                  if (double* ga = sink(ai)) {
                    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                  }
                  if (double* gb = sink(bi)) {
                    for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
                  }
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  const bool rec = should_record({&a, &b});
  Impl ai = a.impl(), bi = b.impl();
  return finish(new_tensor(a.shape(), std::move(out)), "mul", rec,
                [ai, bi](std::span<const double> go) {
                  if (double* ga = sink(ai)) {
                    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bi->data[i];
                  }
                  if (double* gb = sink(bi)) {
                    for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * ai->data[i];
                  }
                });
}

Tensor add_trailing(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  bool ok = bs.size() <= as.size();
  for (std::size_t i = 0; ok && i < bs.size(); ++i) ok = bs[i] == as[as.size() - bs.size() + i];
  if (!ok) {
    throw DimensionError("add_trailing: " + shape_str(bs) + " is not a trailing block of " +
                         shape_str(as));
  }
  const std::size_t inner = b.numel();
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % inner];
  const bool rec = should_record({&a, &b});
  Impl ai = a.impl(), bi = b.impl();
  return finish(new_tensor(as, std::move(out)), "add_trailing", rec,
                [ai, bi, inner](std::span<const double> go) {
                  if (double* ga = sink(ai)) {
                    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                  }
                  if (double* gb = sink(bi)) {
                    for (std::size_t i = 0; i < go.size(); ++i) gb[i % inner] += go[i];
                  }
                });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; },
               [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, "add_scalar", [value](double v) { return v + value; },
               [](double) { return 1.0; });
}

Tensor lincomb(std::span<const Tensor> terms, std::span<const double> coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) {
    throw DimensionError("lincomb: need one coefficient per term");
  }
  const Shape& shape = terms.front().shape();
  std::vector<double> out(shape_numel(shape), 0.0);
  bool rec = false;
  std::vector<Impl> impls;
  std::vector<double> cs(coeffs.begin(), coeffs.end());
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (terms[k].shape() != shape) {
      throw DimensionError("lincomb: shape mismatch " + shape_str(shape) + " vs " +
                           shape_str(terms[k].shape()));
    }
    impls.push_back(terms[k].impl());
    rec = rec || terms[k].requires_grad();
    if (cs[k] == 0.0) continue;
    const auto v = terms[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += cs[k] * v[i];
  }
  rec = rec && GradTape::active() != nullptr;
  return finish(new_tensor(shape, std::move(out)), "lincomb", rec,
                [impls, cs](std::span<const double> go) {
                  for (std::size_t k = 0; k < impls.size(); ++k) {
                    if (cs[k] == 0.0) continue;
                    double* g = sink(impls[k]);
                    if (!g) continue;
                    for (std::size_t i = 0; i < go.size(); ++i) g[i] += cs[k] * go[i];
                  }
                });
}

Tensor affine_along(const Tensor& x, std::size_t axis, std::span<const double> scale_by,
                    std::span<const double> shift) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError(axis_msg("affine_along", axis, s));
  if (scale_by.size() != s[axis] || shift.size() != s[axis]) {
    throw DimensionError("affine_along: coefficient count does not match axis extent of " +
                         shape_str(s));
  }
  const AxisSplit sp = split_at(s, axis);
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  std::vector<double> sc(scale_by.begin(), scale_by.end());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t c = 0; c < sp.len; ++c) {
      const std::size_t base = (o * sp.len + c) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) out[base + i] = xs[base + i] * sc[c] + shift[c];
    }
  }
  const bool rec = should_record({&x});
  Impl xi = x.impl();
  return finish(new_tensor(s, std::move(out)), "affine_along", rec,
                [xi, sp, sc](std::span<const double> go) {
                  double* gx = sink(xi);
                  if (!gx) return;
                  for (std::size_t o = 0; o < sp.outer; ++o) {
                    for (std::size_t c = 0; c < sp.len; ++c) {
                      const std::size_t base = (o * sp.len + c) * sp.inner;
                      for (std::size_t i = 0; i < sp.inner; ++i) gx[base + i] += go[base + i] * sc[c];
                    }
                  }
                });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  return unary(x, "abs", [](double v) { return std::fabs(v); },
               [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const bool rec = should_record({&x});
  Impl xi = x.impl();
  return finish(new_tensor(Shape{}, {total}), "sum", rec, [xi](std::span<const double> go) {
    double* gx = sink(xi);
    if (!gx) return;
    for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += go[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double total = 0.0;
  for (double v : x.data()) total += v;
  const bool rec = should_record({&x});
  Impl xi = x.impl();
  return finish(new_tensor(Shape{}, {total / n}), "mean", rec,
                [xi, n](std::span<const double> go) {
                  double* gx = sink(xi);
                  if (!gx) return;
                  const double g = go[0] / n;
                  for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
                });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto mismatch = [&]() {
    return DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " +
                          shape_str(bs));
  };
  if (as.size() < 2 || bs.size() < 2) throw mismatch();
  const std::size_t m = as[as.size() - 2], k = as.back();
  const std::size_t kb = bs[bs.size() - 2], n = bs.back();
  if (k != kb) throw mismatch();
  const bool shared_b = bs.size() == 2;
  if (!shared_b) {
    if (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) throw mismatch();
  }
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n, 0.0);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  if (shared_b) {
    gemm_nn(ap, bp, out.data(), batch * m, k, n);
  } else {
    for (std::size_t t = 0; t < batch; ++t) {
      gemm_nn(ap + t * m * k, bp + t * k * n, out.data() + t * m * n, m, k, n);
    }
  }
  const bool rec = should_record({&a, &b});
  Impl ai = a.impl(), bi = b.impl();
  return finish(new_tensor(std::move(out_shape), std::move(out)), "matmul", rec,
                [ai, bi, batch, m, k, n, shared_b](std::span<const double> go) {
                  const double* g = go.data();
                  const double* av = ai->data.data();
                  const double* bv = bi->data.data();
                  if (double* ga = sink(ai)) {
                    if (shared_b) {
                      gemm_nt(g, bv, ga, batch * m, k, n);
                    } else {
                      for (std::size_t t = 0; t < batch; ++t) {
                        gemm_nt(g + t * m * n, bv + t * k * n, ga + t * m * k, m, k, n);
                      }
                    }
                  }
                  if (double* gb = sink(bi)) {
                    if (shared_b) {
                      gemm_tn(av, g, gb, batch * m, k, n);
                    } else {
                      for (std::size_t t = 0; t < batch; ++t) {
                        gemm_tn(av + t * m * k, g + t * m * n, gb + t * k * n, m, k, n);
                      }
                    }
                  }
                });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return add_trailing(matmul(x, w), bias);
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError(axis_msg("softmax", axis, s));
  const AxisSplit sp = split_at(s, axis);
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double mx = xs[base];
      for (std::size_t j = 1; j < sp.len; ++j) mx = std::max(mx, xs[base + j * sp.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.len; ++j) {
        const double e = std::exp(xs[base + j * sp.inner] - mx);
        out[base + j * sp.inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t j = 0; j < sp.len; ++j) out[base + j * sp.inner] *= inv;
    }
  }
  const bool rec = should_record({&x});
  Impl xi = x.impl();
  Tensor result = new_tensor(s, std::move(out));
  std::weak_ptr<detail::TensorImpl> yw = result.impl();
  return finish(result, "softmax", rec, [xi, yw, sp](std::span<const double> go) {
    double* gx = sink(xi);
    auto yi = yw.lock();
    if (!gx || !yi) return;
    const auto& y = yi->data;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t idx = base + j * sp.inner;
          dot += go[idx] * y[idx];
        }
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t idx = base + j * sp.inner;
          gx[idx] += y[idx] * (go[idx] - dot);
        }
      }
    }
  });
}

Tensor softmax_last(const Tensor& x) { return softmax(x, x.rank() - 1); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (x.rank() < 1) throw DimensionError("layer_norm: scalar input");
  const std::size_t c = x.shape().back();
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last extent of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / c;
  const auto xs = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  auto xhat = std::make_shared<std::vector<double>>(xs.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xs.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * inv;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = h * g[j] + b[j];
    }
  }
  const bool rec = should_record({&x, &gain, &bias});
  Impl xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  return finish(new_tensor(x.shape(), std::move(out)), "layer_norm", rec,
                [xi, gi, bi, xhat, inv_std, rows, c](std::span<const double> go) {
                  double* gx = sink(xi);
                  double* gg = sink(gi);
                  double* gb = sink(bi);
                  const auto& gv = gi->data;
                  const double cn = static_cast<double>(c);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* dy = go.data() + r * c;
                    const double* h = xhat->data() + r * c;
                    if (gg || gb) {
                      for (std::size_t j = 0; j < c; ++j) {
                        if (gg) gg[j] += dy[j] * h[j];
                        if (gb) gb[j] += dy[j];
                      }
                    }
                    if (!gx) continue;
                    double mean_d = 0.0, mean_dh = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                      const double d = dy[j] * gv[j];
                      mean_d += d;
                      mean_dh += d * h[j];
                    }
                    mean_d /= cn;
                    mean_dh /= cn;
                    const double inv = (*inv_std)[r];
                    for (std::size_t j = 0; j < c; ++j) {
                      gx[r * c + j] += inv * (dy[j] * gv[j] - mean_d - h[j] * mean_dh);
                    }
                  }
                });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (auto& m : *mask) m = keep(rng) ? keep_scale : 0.0;
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * (*mask)[i];
  const bool rec = should_record({&x});
  Impl xi = x.impl();
  return finish(new_tensor(x.shape(), std::move(out)), "dropout", rec,
                [xi, mask](std::span<const double> go) {
                  double* gx = sink(xi);
                  if (!gx) return;
                  for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (*mask)[i];
                });
}

Tensor maybe_dropout(const Tensor& x, double rate, const RunMode& mode) {
  return mode.dropout_active(rate) ? dropout(x, rate, *mode.rng) : x;
}

}  // namespace pinncast
