#include "pinncast/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <thread>

#include "pinncast/errors.hpp"

namespace pinncast {

namespace {

std::size_t var_index(const std::vector<std::string>& names, const char* name,
                      std::size_t fallback) {
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? fallback : static_cast<std::size_t>(it - names.begin());
}

physics::PhysicsVarMap var_map(const data::DatasetManifest& m, double lead_hours) {
  physics::PhysicsVarMap map;
  map.t_index = var_index(m.var_names, "t2m", 0);
  map.u_index = var_index(m.var_names, "u10", 1);
  map.v_index = var_index(m.var_names, "v10", 2);
  map.dt = lead_hours;
  return map;
}

// A physics term with zero weight is still reported, but kept off the tape.
Tensor maybe_recorded(double weight, const std::function<Tensor()>& term) {
  if (weight != 0.0) return term();
  GradTape::Pause pause;
  return term();
}

void check_grid(const model::ModelConfig& mc, const data::DatasetManifest& m) {
  if (mc.variables != m.vars() || mc.height != m.height || mc.width != m.width) {
    throw ConfigError("model grid " + std::to_string(mc.variables) + "x" +
                      std::to_string(mc.height) + "x" + std::to_string(mc.width) +
                      " does not match dataset grid " + std::to_string(m.vars()) + "x" +
                      std::to_string(m.height) + "x" + std::to_string(m.width));
  }
}

}  // namespace

Tensor denormalize_tensor(const Tensor& x, const data::NormStats& stats) {
  return affine_along(x, 1, stats.std, stats.mean);
}

physics::LossBreakdown batch_loss(const model::Forecaster& model, const data::Dataset& ds,
                                  data::Split split, std::span<const std::size_t> indices,
                                  double lead_hours, const physics::LossWeights& lw,
                                  const RunMode& mode) {
  const auto& m = ds.manifest();
  const data::GridField input = ds.inputs(split, indices);
  const data::GridField target = ds.targets(split, indices, lead_hours);
  const Tensor x = data::normalize(input, m.stats).to_tensor();
  const Tensor y = data::normalize(target, m.stats).to_tensor();
  const Tensor pred = model.forward(x, lead_hours, mode);

  const auto w = physics::LatWeights::from_latitudes(m.lats);
  const auto map = var_map(m, lead_hours);
  const Tensor lat = physics::lat_weighted_mse(pred, y, w);
  const Tensor pred_phys = denormalize_tensor(pred, m.stats);
  const Tensor kin = maybe_recorded(
      lw.alpha, [&] { return physics::kinetic_loss(pred_phys, target.to_tensor(), map); });
  const Tensor thermo = maybe_recorded(
      lw.beta, [&] { return physics::thermo_loss(pred_phys, input.to_tensor(), map); });
  return physics::combine(lat, kin, thermo, lw);
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const RunConfig& cfg, const data::Dataset& ds)
    : cfg_(cfg),
      ds_(&ds),
      model_(cfg.model, cfg.seed),
      opt_(model_.parameters(), cfg.optimizer),
      dropout_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL),
      lead_rng_(cfg.seed + 1) {
  cfg_.validate();
  check_grid(cfg_.model, ds.manifest());
  if (ds.size(data::Split::train) == 0) throw ConfigError("dataset has an empty train split");
  if (cfg_.lead_sampling == LeadSampling::fixed) ds.manifest().lead_slot(cfg_.train_lead_hours);
}

double Trainer::draw_lead() {
  if (cfg_.lead_sampling == LeadSampling::fixed) return cfg_.train_lead_hours;
  const auto& leads = ds_->manifest().lead_hours;
  return leads[lead_rng_() % leads.size()];
}

physics::LossBreakdown Trainer::step(std::span<const std::size_t> indices, double lead_hours) {
  GradTape tape;
  const RunMode mode{true, &dropout_rng_};
  auto br = batch_loss(model_, *ds_, data::Split::train, indices, lead_hours,
                       cfg_.effective_loss(), mode);
  const double total = br.total.item();
  if (!std::isfinite(total)) {
    throw NumericalError("non-finite training loss");
  }
  opt_.zero_grad();
  tape.backward(br.total);
  opt_.step();
  ++steps_;
  return br;
}

physics::LossBreakdown Trainer::mean_loss(data::Split split, std::span<const double> leads) const {
  GradTape::Pause pause;
  const std::size_t n = ds_->size(split);
  if (n == 0) throw ConfigError("split '" + data::to_string(split) + "' is empty");
  const data::BatchIterator it(n, cfg_.batch_size, 0, false);
  double total = 0, lat = 0, kin = 0, thermo = 0;
  for (double lead : leads) {
    for (const auto& batch : it.epoch(0)) {
      const auto br = batch_loss(model_, *ds_, split, batch, lead, cfg_.effective_loss());
      const double k = static_cast<double>(batch.size());
      total += k * br.total.item();
      lat += k * br.lat;
      kin += k * br.kinetic;
      thermo += k * br.thermo;
    }
  }
  const double count = static_cast<double>(n * leads.size());
  physics::LossBreakdown out;
  out.total = Tensor::scalar(total / count);
  out.lat = lat / count;
  out.kinetic = kin / count;
  out.thermo = thermo / count;
  return out;
}

TrainResult Trainer::fit(const std::function<void(const EpochRow&)>& on_epoch) {
  const auto& m = ds_->manifest();
  const data::BatchIterator it(ds_->size(data::Split::train), cfg_.batch_size, cfg_.seed, true);
  std::vector<double> val_leads = cfg_.lead_sampling == LeadSampling::fixed
                                      ? std::vector<double>{cfg_.train_lead_hours}
                                      : m.lead_hours;
  auto params = model_.parameters();
  std::vector<std::vector<double>> best;

  TrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  bool budget_spent = false;
  for (std::size_t epoch = 1; epoch <= cfg_.epochs && !budget_spent; ++epoch) {
    EpochRow row;
    row.epoch = epoch;
    std::size_t batches = 0;
    for (const auto& batch : it.epoch(epoch - 1)) {
      physics::LossBreakdown br;
      try {
        br = step(batch, draw_lead());
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(steps_ + 1) + ": " + e.what());
      }
      row.total += br.total.item();
      row.lat += br.lat;
      row.kinetic += br.kinetic;
      row.thermo += br.thermo;
      ++batches;
      if (cfg_.max_steps > 0 && steps_ >= cfg_.max_steps) {
        budget_spent = true;
        break;
      }
    }
    const double nb = static_cast<double>(batches);
    row.total /= nb;
    row.lat /= nb;
    row.kinetic /= nb;
    row.thermo /= nb;
    row.val_total = mean_loss(data::Split::val, val_leads).total.item();
    if (!std::isfinite(row.val_total)) {
      throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(row);
    if (on_epoch) on_epoch(row);

    if (row.val_total < result.best_val) {
      result.best_val = row.val_total;
      result.best_epoch = epoch;
      best.clear();
      for (const auto& p : params) best.emplace_back(p.data().begin(), p.data().end());
      bad_epochs = 0;
    } else if (cfg_.patience > 0 && ++bad_epochs >= cfg_.patience) {
      result.stopped_early = true;
      break;
    }
  }
  for (std::size_t k = 0; k < params.size() && !best.empty(); ++k) {
    std::copy(best[k].begin(), best[k].end(), params[k].data_mut().begin());
  }
  result.steps = steps_;
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

data::GridField predict_split(const model::Forecaster& model, const data::Dataset& ds,
                              data::Split split, double lead_hours, std::size_t batch_size,
                              std::size_t threads) {
  const auto& m = ds.manifest();
  check_grid(model.config(), m);
  const std::size_t n = ds.size(split);
  if (n == 0) throw ConfigError("split '" + data::to_string(split) + "' is empty");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  data::GridField out(n, m.vars(), m.height, m.width, m.var_names, m.lats, m.lons);
  const auto batches = data::BatchIterator(n, batch_size, 0, false).epoch(0);
  const std::size_t per_sample = m.vars() * m.height * m.width;

  std::atomic<std::size_t> next{0};
  std::vector<std::optional<std::string>> failures(batches.size());
  auto worker = [&] {
    GradTape::Pause pause;
    for (std::size_t b = next++; b < batches.size(); b = next++) {
      try {
        const auto x = data::normalize(ds.inputs(split, batches[b]), m.stats).to_tensor();
        const Tensor pred = denormalize_tensor(model.forward(x, lead_hours), m.stats);
        std::copy(pred.data().begin(), pred.data().end(),
                  out.values.begin() + static_cast<std::ptrdiff_t>(batches[b].front() * per_sample));
      } catch (const std::exception& e) {
        failures[b] = e.what();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, batches.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& f : failures) {
    if (f) throw NumericalError("forecast failed: " + *f);
  }
  if (!all_finite(out.values)) throw NumericalError("forecast produced non-finite values");
  return out;
}

std::vector<MetricRow> evaluate(const model::Forecaster& model, const data::Dataset& ds,
                                std::span<const double> leads, const EvalOptions& opts) {
  const auto& m = ds.manifest();
  const auto w = physics::LatWeights::from_latitudes(m.lats);
  std::vector<MetricRow> rows;
  for (double lead : leads) {
    const data::GridField truth = ds.all(opts.split, m.lead_slot(lead));
    const data::GridField pred =
        opts.truth_as_prediction
            ? truth
            : predict_split(model, ds, opts.split, lead, opts.batch_size, opts.threads);
    const auto clim = physics::climatology(truth);
    const auto r = physics::rmse(pred, truth, w);
    const auto a = physics::acc(pred, truth, clim, w, opts.acc_form);
    for (std::size_t v = 0; v < m.vars(); ++v) rows.push_back({m.var_names[v], lead, r[v], a[v]});
  }
  return rows;
}

}  // namespace pinncast
