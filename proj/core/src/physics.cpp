#include "pinncast/physics.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "pinncast/errors.hpp"
#include "pinncast/ops.hpp"

namespace pinncast::physics {

LatWeights LatWeights::from_latitudes(std::span<const double> lats_deg) {
  if (lats_deg.empty()) throw ConfigError("latitude vector is empty");
  LatWeights lw;
  lw.w_.resize(lats_deg.size());
  double total = 0.0;
  for (std::size_t i = 0; i < lats_deg.size(); ++i) {
    if (!(std::fabs(lats_deg[i]) <= 90.0)) throw ConfigError("latitude outside [-90, 90]");
    lw.w_[i] = std::cos(lats_deg[i] * std::numbers::pi / 180.0);
    total += lw.w_[i];
  }
  const double mean = total / static_cast<double>(lats_deg.size());
  if (!(mean > 0.0)) throw ConfigError("latitude weights sum to zero");
  for (auto& v : lw.w_) v /= mean;
  return lw;
}

LatWeights LatWeights::uniform(std::size_t height) {
  LatWeights lw;
  lw.w_.assign(height, 1.0);
  return lw;
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("loss weights must be nonnegative");
}

void PhysicsVarMap::validate(std::size_t vars) const {
  if (t_index >= vars || u_index >= vars || v_index >= vars) {
    throw ConfigError("physics variable index out of range for " + std::to_string(vars) +
                      " variables");
  }
  if (t_index == u_index || t_index == v_index || u_index == v_index) {
    throw ConfigError("physics variable indices must be distinct");
  }
  if (!(dt > 0.0)) throw ConfigError("tendency time step must be positive");
}

namespace {

void require_fields(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": expected matching (B, V, H, W) shapes, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
}

Tensor channel(const Tensor& x, std::size_t v) { return slice(x, 1, v, 1); }

}  // namespace

Tensor lat_weighted_mse(const Tensor& pred, const Tensor& truth, const LatWeights& w) {
  require_fields("lat_weighted_mse", pred, truth);
  if (w.size() != pred.extent(2)) {
    throw DimensionError("lat_weighted_mse: " + std::to_string(w.size()) +
                         " latitude weights for " + std::to_string(pred.extent(2)) + " rows");
  }
  const std::vector<double> zero(w.size(), 0.0);
  Tensor sq = square(sub(pred, truth));
  return mean(affine_along(sq, 2, w.values(), zero));
}

Tensor kinetic_loss(const Tensor& pred, const Tensor& truth, const PhysicsVarMap& map) {
  require_fields("kinetic_loss", pred, truth);
  map.validate(pred.extent(1));
  auto ke = [&](const Tensor& x) {
    return scale(add(square(channel(x, map.u_index)), square(channel(x, map.v_index))), 0.5);
  };
  return mean(abs(sub(ke(pred), ke(truth))));
}

Tensor forward_difference(const Tensor& x, std::size_t axis) {
  const std::size_t n = x.extent(static_cast<int>(axis));
  if (n < 2) throw DimensionError("forward_difference needs at least two points along the axis");
  Tensor d = sub(slice(x, axis, 1, n - 1), slice(x, axis, 0, n - 1));
  return concat({d, slice(d, axis, n - 2, 1)}, axis);
}

Tensor thermo_loss(const Tensor& pred, const Tensor& input, const PhysicsVarMap& map) {
  require_fields("thermo_loss", pred, input);
  map.validate(pred.extent(1));
  const Tensor t_pred = channel(pred, map.t_index);
  const Tensor tendency = scale(sub(t_pred, channel(input, map.t_index)), 1.0 / map.dt);
  const Tensor dtdx = forward_difference(t_pred, 3);  // along longitude
  const Tensor dtdy = forward_difference(t_pred, 2);  // along latitude
  const Tensor residual = add(tendency, add(mul(channel(pred, map.u_index), dtdx),
                                            mul(channel(pred, map.v_index), dtdy)));
  return mean(square(residual));
}

LossBreakdown combine(const Tensor& lat_term, const Tensor& kinetic_term,
                      const Tensor& thermo_term, const LossWeights& lw) {
  lw.validate();
  LossBreakdown out;
  out.lat = lat_term.item();
  out.kinetic = kinetic_term.item();
  out.thermo = thermo_term.item();
  out.total = lincomb(std::vector<Tensor>{lat_term, kinetic_term, thermo_term},
                      std::vector<double>{1.0, lw.alpha, lw.beta});
  return out;
}

LossBreakdown combined_loss(const Tensor& pred, const Tensor& truth, const Tensor& input,
                            const LatWeights& w, const LossWeights& lw,
                            const PhysicsVarMap& map) {
  return combine(lat_weighted_mse(pred, truth, w), kinetic_loss(pred, truth, map),
                 thermo_loss(pred, input, map), lw);
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

void require_metric_shapes(const data::GridField& a, const data::GridField& b,
                           const LatWeights& w) {
  if (!a.same_grid(b)) {
    throw DimensionError("metric: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  if (w.size() != a.height) throw DimensionError("metric: latitude weights do not match grid");
}

}  // namespace

std::vector<double> rmse(const data::GridField& pred, const data::GridField& truth,
                         const LatWeights& w) {
  require_metric_shapes(pred, truth, w);
  const double cells = static_cast<double>(pred.height * pred.width);
  std::vector<double> out(pred.vars, 0.0);
  for (std::size_t v = 0; v < pred.vars; ++v) {
    double total = 0.0;
    for (std::size_t k = 0; k < pred.batch; ++k) {
      double acc_k = 0.0;
      for (std::size_t i = 0; i < pred.height; ++i) {
        for (std::size_t j = 0; j < pred.width; ++j) {
          const double e = pred.at(k, v, i, j) - truth.at(k, v, i, j);
          acc_k += w[i] * e * e;
        }
      }
      total += std::sqrt(acc_k / cells);
    }
    out[v] = total / static_cast<double>(pred.batch);
  }
  return out;
}

data::GridField climatology(const data::GridField& truth) {
  data::GridField c(1, truth.vars, truth.height, truth.width, truth.var_names, truth.lats,
                    truth.lons);
  for (std::size_t k = 0; k < truth.batch; ++k) {
    for (std::size_t v = 0; v < truth.vars; ++v) {
      for (std::size_t i = 0; i < truth.height; ++i) {
        for (std::size_t j = 0; j < truth.width; ++j) c.at(0, v, i, j) += truth.at(k, v, i, j);
      }
    }
  }
  for (auto& x : c.values) x /= static_cast<double>(truth.batch);
  return c;
}

std::vector<double> acc(const data::GridField& pred, const data::GridField& truth,
                        const data::GridField& clim, const LatWeights& w, AccForm form) {
  require_metric_shapes(pred, truth, w);
  if (clim.batch != 1 || clim.vars != pred.vars || clim.height != pred.height ||
      clim.width != pred.width) {
    throw DimensionError("acc: climatology must have shape (1, V, H, W)");
  }
  std::vector<double> out(pred.vars);
  for (std::size_t v = 0; v < pred.vars; ++v) {
    double num = 0.0, pp = 0.0, tt = 0.0;
    for (std::size_t k = 0; k < pred.batch; ++k) {
      for (std::size_t i = 0; i < pred.height; ++i) {
        for (std::size_t j = 0; j < pred.width; ++j) {
          const double c = clim.at(0, v, i, j);
          const double pa = pred.at(k, v, i, j) - c;
          const double ta = truth.at(k, v, i, j) - c;
          num += (form == AccForm::weighted ? w[i] : 1.0) * pa * ta;
          pp += w[i] * pa * pa;
          tt += w[i] * ta * ta;
        }
      }
    }
    const double den = std::sqrt(pp * tt);
    out[v] = den > 0.0 ? num / den : kUndefinedMetric;
  }
  return out;
}

}  // namespace pinncast::physics
