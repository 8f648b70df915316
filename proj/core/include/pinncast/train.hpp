#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pinncast/config.hpp"
#include "pinncast/data.hpp"
#include "pinncast/model.hpp"
#include "pinncast/optim.hpp"
#include "pinncast/physics.hpp"

namespace pinncast {

/// Loss of one batch. The mean-squared term compares normalized fields; the
/// kinetic and advection terms are evaluated on denormalized (physical) fields
/// with the lead time as tendency denominator.
physics::LossBreakdown batch_loss(const model::Forecaster& model, const data::Dataset& ds,
                                  data::Split split, std::span<const std::size_t> indices,
                                  double lead_hours, const physics::LossWeights& lw,
                                  const RunMode& mode = {});

/// Differentiable per-variable denormalization of a (B, V, H, W) tensor.
Tensor denormalize_tensor(const Tensor& x, const data::NormStats& stats);

struct EpochRow {
  std::size_t epoch = 0;  // 1-based
  double total = 0, lat = 0, kinetic = 0, thermo = 0;  // train means over batches
  double val_total = 0;
};

struct TrainResult {
  std::vector<EpochRow> history;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  std::size_t steps = 0;
  bool stopped_early = false;
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, const data::Dataset& ds);

  /// One optimizer step on train-split samples.
  physics::LossBreakdown step(std::span<const std::size_t> indices, double lead_hours);

  /// Full loop with early stopping on the validation total. The model holds
  /// the best-validation parameters afterwards. `on_epoch` sees every row.
  TrainResult fit(const std::function<void(const EpochRow&)>& on_epoch = {});

  /// Mean batch loss (eval mode) over a split at the given leads.
  physics::LossBreakdown mean_loss(data::Split split, std::span<const double> leads) const;

  const model::Forecaster& model() const { return model_; }
  model::Forecaster& model() { return model_; }
  const RunConfig& config() const { return cfg_; }

 private:
  double draw_lead();

  RunConfig cfg_;
  const data::Dataset* ds_;
  model::Forecaster model_;
  AdamW opt_;
  std::mt19937_64 dropout_rng_;
  std::mt19937_64 lead_rng_;
  std::size_t steps_ = 0;
};

struct MetricRow {
  std::string variable;
  double lead_hours = 0.0;
  double rmse = 0.0;
  double acc = 0.0;
};

struct EvalOptions {
  data::Split split = data::Split::test;
  std::size_t batch_size = 12;
  std::size_t threads = 1;
  physics::AccForm acc_form = physics::AccForm::weighted;
  /// Score the ground truth against itself instead of running the model.
  bool truth_as_prediction = false;
};

/// Physical-unit forecasts for every sample of a split, in sample order.
/// Batches are spread over `threads` workers; the result does not depend on
/// the thread count.
data::GridField predict_split(const model::Forecaster& model, const data::Dataset& ds,
                              data::Split split, double lead_hours, std::size_t batch_size,
                              std::size_t threads);

/// Per-variable, per-lead RMSE and ACC (climatology from the evaluated split),
/// ordered by lead then variable.
std::vector<MetricRow> evaluate(const model::Forecaster& model, const data::Dataset& ds,
                                std::span<const double> leads, const EvalOptions& opts = {});

}  // namespace pinncast
