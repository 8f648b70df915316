#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pinncast/attention.hpp"
#include "pinncast/data.hpp"
#include "pinncast/odesolve.hpp"
#include "pinncast/ops.hpp"

namespace pinncast::model {

struct ModelConfig {
  std::size_t variables = 3;
  std::size_t height = 32;
  std::size_t width = 64;
  std::size_t patch_size = 2;
  std::size_t embed_dim = 1024;
  std::size_t depth = 4;
  std::size_t num_heads = 16;
  std::size_t mlp_ratio = 4;
  double dropout = 0.1;
  bool use_two_branch = true;
  bool use_node = true;
  /// Feed the integration time into the vector fields (off: autonomous).
  bool time_dependent_field = false;
  ode::OdeSolveConfig ode;

  void validate() const;
  std::size_t grid_rows() const { return height / patch_size; }
  std::size_t grid_cols() const { return width / patch_size; }
  std::size_t num_patches() const { return grid_rows() * grid_cols(); }
  std::size_t patch_dim() const { return variables * patch_size * patch_size; }
  attention::AttentionConfig attention() const { return {embed_dim, num_heads, dropout}; }
  bool operator==(const ModelConfig&) const = default;
};

/// (B, V, H, W) -> (B, N, V p p); patches in row-major patch order, features
/// ordered (variable, row-in-patch, col-in-patch).
Tensor patchify(const Tensor& x, std::size_t patch_size);
/// Exact inverse of patchify.
Tensor unpatchify(const Tensor& tokens, std::size_t variables, std::size_t height,
                  std::size_t width, std::size_t patch_size);

struct PatchEmbedding {
  Tensor w_patch;  // (V p p, C)
  Tensor b_patch;  // (C)
  Tensor pos;      // (N, C)
  Tensor w_lead;   // (C), multiplies lead_hours / 24
  Tensor b_lead;   // (C)

  static PatchEmbedding init(const ModelConfig& cfg, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x, double lead_hours, const ModelConfig& cfg) const;
};

/// Attention pathway and MLP pathway, each transformed, normalized, evolved
/// through its own vector field on t in [0, 1] and added back residually.
struct OdeTransformerBlock {
  attention::AttentionWeights attn;
  Tensor ln1_gain, ln1_bias;
  Tensor ln2_gain, ln2_bias;
  Tensor fc1_w, fc1_b;  // C -> mlp_ratio C
  Tensor fc2_w, fc2_b;  // mlp_ratio C -> C
  ode::VectorField attn_field;  // only when use_node
  ode::VectorField mlp_field;

  static OdeTransformerBlock init(const ModelConfig& cfg, std::mt19937_64& rng);
};

Tensor block_forward(const Tensor& h, const OdeTransformerBlock& block, const ModelConfig& cfg,
                     const RunMode& mode = {}, attention::AttentionTrace* trace = nullptr);

using NamedTensor = std::pair<std::string, Tensor>;

class Forecaster {
 public:
  Forecaster() = default;
  Forecaster(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  /// Normalized (B, V, H, W) fields at t -> normalized fields at t + lead.
  Tensor forward(const Tensor& x, double lead_hours, const RunMode& mode = {}) const;
  /// Eval-mode forecast keeping the input's metadata.
  data::GridField forecast(const data::GridField& x, double lead_hours) const;

  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  std::size_t vector_field_parameter_count() const;

  // Direct access for tests and crafted weights.
  PatchEmbedding& embedding() { return embed_; }
  std::vector<OdeTransformerBlock>& blocks() { return blocks_; }
  const std::vector<OdeTransformerBlock>& blocks() const { return blocks_; }

  /// Deep copy of all parameter values.
  Forecaster clone() const;

 private:
  ModelConfig cfg_;
  PatchEmbedding embed_;
  std::vector<OdeTransformerBlock> blocks_;
  Tensor norm_gain_, norm_bias_;
  Tensor head_w_, head_b_;  // C -> V p p
};

enum class Variant { vanilla_vit, two_branch, neural_ode, full };

inline constexpr Variant kAllVariants[] = {Variant::vanilla_vit, Variant::two_branch,
                                           Variant::neural_ode, Variant::full};

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

struct VariantSpec {
  ModelConfig model;
  bool physics_loss = false;
};

/// Architectural flags and loss choice of one ablation row.
VariantSpec ablation_variant(const ModelConfig& base, Variant v);

/// Checkpoint: "PINNCAST1\n", u64 little-endian header length, JSON header
/// (model config plus a parameter table of names, shapes and offsets), then
/// little-endian float32 parameter blobs in table order.
void save_checkpoint(const Forecaster& model, const std::filesystem::path& path,
                     const std::string& extra_json = "{}");
/// `extra_json`, when given, receives the header's free-form extra object.
Forecaster load_checkpoint(const std::filesystem::path& path, std::string* extra_json = nullptr);

}  // namespace pinncast::model
