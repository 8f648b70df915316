#include "pinncast/attention.hpp"

#include <cmath>
#include <string>

#include "pinncast/errors.hpp"
#include "pinncast/init.hpp"

namespace pinncast::attention {

void AttentionConfig::validate() const {
  if (embed_dim == 0 || num_heads == 0) throw ConfigError("attention dims must be positive");
  if (embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("attention dropout must lie in [0, 1)");
}

AttentionWeights AttentionWeights::init(const AttentionConfig& cfg, bool two_branch,
                                        std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t c = cfg.embed_dim;
  AttentionWeights w;
  w.w_qkv = trunc_normal({c, 3 * c}, 0.02, rng);
  w.b_qkv = parameter({3 * c}, 0.0);
  w.w_o = trunc_normal({two_branch ? 2 * c : c, c}, 0.02, rng);
  w.b_o = parameter({c}, 0.0);
  return w;
}

bool AttentionWeights::two_branch() const { return w_o.extent(0) == 2 * w_o.extent(1); }

QKV project_qkv(const Tensor& x, const AttentionWeights& w, const AttentionConfig& cfg,
                AttentionTrace* trace) {
  const std::size_t c = cfg.embed_dim;
  if (x.rank() != 3 || x.extent(-1) != c) {
    throw DimensionError("project_qkv: expected (B, N, " + std::to_string(c) + "), got " +
                         shape_str(x.shape()));
  }
  if (trace) ++trace->projections;
  const std::size_t b = x.extent(0), n = x.extent(1);
  const std::size_t nh = cfg.num_heads, dh = cfg.head_dim();
  // (B, N, 3C) -> (B, N, 3, N_h, d_h) -> (3, B, N_h, N, d_h)
  Tensor qkv = linear(x, w.w_qkv, w.b_qkv);
  qkv = permute(reshape(qkv, {b, n, 3, nh, dh}), {2, 0, 3, 1, 4});
  auto part = [&](std::size_t i) { return reshape(slice(qkv, 0, i, 1), {b, nh, n, dh}); };
  return QKV{part(0), part(1), part(2)};
}

Tensor patch_attention(const QKV& qkv, AttentionTrace* trace) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(qkv.q.extent(-1)));
  Tensor logits = scale(matmul(qkv.q, transpose(qkv.k)), inv_sqrt);
  Tensor probs = softmax_last(logits);
  if (trace) trace->patch_probs = probs;
  return matmul(probs, qkv.v);
}

Tensor derivative_attention(const QKV& qkv, AttentionTrace* trace) {
  const Shape& s = qkv.q.shape();
  if (s.size() != 4) throw DimensionError("derivative_attention: expected (B, N_h, N, d_h)");
  const std::size_t b = s[0], nh = s[1], n = s[2], dh = s[3];
  const std::size_t m = b * nh;
  if (m < 2) {
    throw ConfigError("derivative attention needs B * N_h >= 2 (got " + std::to_string(m) + ")");
  }
  // (B, N_h, N, d_h) -> (M, N, d_h) -> (N, M, d_h)
  auto regroup = [&](const Tensor& t) { return permute(reshape(t, {m, n, dh}), {1, 0, 2}); };
  const Tensor qs = regroup(qkv.q);
  const Tensor ks = regroup(qkv.k);
  const Tensor vs = regroup(qkv.v);

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor logits = scale(matmul(qs, transpose(ks)), inv_sqrt);  // (N, M, M)
  Tensor diff = sub(slice(logits, 1, 1, m - 1), slice(logits, 1, 0, m - 1));
  diff = pad_zero(diff, 1, 0, 1);
  Tensor probs = softmax_last(diff);
  if (trace) trace->derivative_probs = probs;

  Tensor out = matmul(probs, vs);  // (N, M, d_h)
  return reshape(permute(out, {1, 0, 2}), {b, nh, n, dh});
}

Tensor merge_heads(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("merge_heads: expected rank 4, got " + shape_str(s));
  return reshape(permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

Tensor two_branch_attention(const Tensor& x, const AttentionWeights& w,
                            const AttentionConfig& cfg, const RunMode& mode,
                            AttentionTrace* trace) {
  if (!w.two_branch()) {
    throw ConfigError("two_branch_attention needs W_o of shape (2C, C), got " +
                      shape_str(w.w_o.shape()));
  }
  const QKV qkv = project_qkv(x, w, cfg, trace);
  const Tensor pa = patch_attention(qkv, trace);
  const Tensor da = derivative_attention(qkv, trace);
  // Per-head feature concat: (B, N_h, N, 2 d_h) -> (B, N, 2C).
  const Tensor fused = merge_heads(concat_last_axis({pa, da}));
  return maybe_dropout(linear(fused, w.w_o, w.b_o), cfg.dropout, mode);
}

Tensor single_branch_attention(const Tensor& x, const AttentionWeights& w,
                               const AttentionConfig& cfg, const RunMode& mode,
                               AttentionTrace* trace) {
  if (w.w_o.extent(0) != cfg.embed_dim) {
    throw ConfigError("single_branch_attention needs W_o of shape (C, C), got " +
                      shape_str(w.w_o.shape()));
  }
  const QKV qkv = project_qkv(x, w, cfg, trace);
  const Tensor pa = merge_heads(patch_attention(qkv, trace));
  return maybe_dropout(linear(pa, w.w_o, w.b_o), cfg.dropout, mode);
}

}  // namespace pinncast::attention
