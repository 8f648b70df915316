#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pinncast/data.hpp"
#include "pinncast/tensor.hpp"

namespace pinncast::physics {

/// Cosine-of-latitude row weights normalized to unit mean.
class LatWeights {
 public:
  LatWeights() = default;
  static LatWeights from_latitudes(std::span<const double> lats_deg);
  static LatWeights uniform(std::size_t height);

  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  std::span<const double> values() const { return w_; }

 private:
  std::vector<double> w_;
};

struct LossWeights {
  double alpha = 0.3;  // kinetic-energy penalty
  double beta = 0.8;   // advection residual penalty

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Where u, v and T live on the variable axis, and the tendency denominator
/// (the lead time, in hours).
struct PhysicsVarMap {
  std::size_t t_index = 0;
  std::size_t u_index = 1;
  std::size_t v_index = 2;
  double dt = 6.0;

  void validate(std::size_t vars) const;
};

// Differentiable losses on (B, V, H, W) tensors.

/// mean over batch, variables and grid of L(i) (pred - truth)^2.
Tensor lat_weighted_mse(const Tensor& pred, const Tensor& truth, const LatWeights& w);

/// mean over batch and grid of |KE(pred) - KE(truth)| with KE = (u^2 + v^2) / 2.
Tensor kinetic_loss(const Tensor& pred, const Tensor& truth, const PhysicsVarMap& map);

/// mean of r^2 with r = (T_pred - T_input) / dt + u dT/dx + v dT/dy, where the
/// spatial differences are first-order forward differences of T_pred on the
/// grid index (unit spacing), backward at the last column/row.
Tensor thermo_loss(const Tensor& pred, const Tensor& input, const PhysicsVarMap& map);

/// Forward difference along `axis` with a backward difference in the last position.
Tensor forward_difference(const Tensor& x, std::size_t axis);

struct LossBreakdown {
  Tensor total;
  double lat = 0.0;
  double kinetic = 0.0;
  double thermo = 0.0;
};

/// L_lat + alpha L_kinetic + beta L_thermo.
LossBreakdown combined_loss(const Tensor& pred, const Tensor& truth, const Tensor& input,
                            const LatWeights& w, const LossWeights& lw,
                            const PhysicsVarMap& map);

/// Combination with the mean-squared term taken on different (e.g. normalized)
/// tensors than the physics terms.
LossBreakdown combine(const Tensor& lat_term, const Tensor& kinetic_term,
                      const Tensor& thermo_term, const LossWeights& lw);

// Evaluation metrics (plain doubles, per variable).

/// Per sample sqrt(mean_ij L(i) err^2), averaged over samples.
std::vector<double> rmse(const data::GridField& pred, const data::GridField& truth,
                         const LatWeights& w);

enum class AccForm {
  /// L(i) in the numerator and both denominator sums; bounded by [-1, 1].
  weighted,
  /// Numerator without L(i), denominator sums weighted.
  numerator_unweighted,
};

inline constexpr double kUndefinedMetric = std::numeric_limits<double>::quiet_NaN();

/// Anomaly correlation against a per-gridpoint climatology (shape (1, V, H, W)).
/// Returns kUndefinedMetric for a variable whose anomalies are all zero.
std::vector<double> acc(const data::GridField& pred, const data::GridField& truth,
                        const data::GridField& climatology, const LatWeights& w,
                        AccForm form = AccForm::weighted);

/// Per-gridpoint mean over the batch axis.
data::GridField climatology(const data::GridField& truth);

}  // namespace pinncast::physics
