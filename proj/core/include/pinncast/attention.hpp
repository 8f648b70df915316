#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "pinncast/ops.hpp"
#include "pinncast/tensor.hpp"

namespace pinncast::attention {

struct AttentionConfig {
  std::size_t embed_dim = 1024;
  std::size_t num_heads = 16;
  double dropout = 0.1;

  std::size_t head_dim() const { return embed_dim / num_heads; }
  void validate() const;
};

/// Shared QKV projection plus the output projection. For the two-branch
/// module W_o maps the 2C concatenated per-head features back to C; the
/// single-branch baseline uses a C x C W_o.
struct AttentionWeights {
  Tensor w_qkv;  // (C, 3C)
  Tensor b_qkv;  // (3C)
  Tensor w_o;    // (2C, C) or (C, C)
  Tensor b_o;    // (C)

  static AttentionWeights init(const AttentionConfig& cfg, bool two_branch,
                               std::mt19937_64& rng);
  bool two_branch() const;
  std::vector<Tensor> parameters() const { return {w_qkv, b_qkv, w_o, b_o}; }
};

struct QKV {
  Tensor q, k, v;  // each (B, N_h, N, d_h)
};

/// Optional instrumentation filled in by the attention entry points.
struct AttentionTrace {
  int projections = 0;
  Tensor patch_probs;       // A^pa, (B, N_h, N, N)
  Tensor derivative_probs;  // A^da, (N, B*N_h, B*N_h)
};

/// One shared projection x @ W_qkv + b, split into thirds and reshaped per head.
QKV project_qkv(const Tensor& x, const AttentionWeights& w, const AttentionConfig& cfg,
                AttentionTrace* trace = nullptr);

/// softmax(q k^T / sqrt(d_h)) v over the patch axis of each sample/head.
Tensor patch_attention(const QKV& qkv, AttentionTrace* trace = nullptr);

/// Derivative branch. q, k, v are regrouped to (N, M, d_h) with the merged
/// index m = b * N_h + h; the logits S = q_s k_s^T / sqrt(d_h) are differenced
/// along the merged query axis (S[:, j+1] - S[:, j]), padded with one zero row
/// at the end, softmaxed over the key axis, applied to v_s and regrouped back
/// to (B, N_h, N, d_h). Requires M >= 2.
///
/// Note that the merged axis spans the batch: outputs for one sample depend on
/// the other samples in the same call. With B == 1 the mixing is over heads only.
Tensor derivative_attention(const QKV& qkv, AttentionTrace* trace = nullptr);

/// (B, N_h, N, d) -> (B, N, N_h * d)
Tensor merge_heads(const Tensor& x);

/// W_o [PA || DA] with the concatenation taken per head, then dropout.
Tensor two_branch_attention(const Tensor& x, const AttentionWeights& w,
                            const AttentionConfig& cfg, const RunMode& mode = {},
                            AttentionTrace* trace = nullptr);

/// Standard multi-head attention (patch branch only) with a C x C W_o.
Tensor single_branch_attention(const Tensor& x, const AttentionWeights& w,
                               const AttentionConfig& cfg, const RunMode& mode = {},
                               AttentionTrace* trace = nullptr);

}  // namespace pinncast::attention
