#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pinncast/data.hpp"
#include "pinncast/errors.hpp"
#include "pinncast/ops.hpp"
#include "pinncast/physics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace pinncast;
using testutil::randn;

namespace {

data::GridField field(std::size_t b, std::size_t v, std::vector<double> lats, std::size_t w,
                      std::vector<double> vals = {}) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < v; ++i) names.push_back("v" + std::to_string(i));
  std::vector<double> lons(w);
  for (std::size_t j = 0; j < w; ++j) lons[j] = 360.0 * static_cast<double>(j) / static_cast<double>(w);
  const std::size_t h = lats.size();
  data::GridField f(b, v, h, w, names, std::move(lats), lons);
  if (!vals.empty()) f.values = std::move(vals);
  return f;
}

data::GridField random_field(std::size_t b, std::size_t v, const std::vector<double>& lats,
                             std::size_t w, std::mt19937_64& rng) {
  auto f = field(b, v, lats, w);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& x : f.values) x = n(rng);
  return f;
}

Tensor const_tensor(Shape s, double v) { return Tensor(std::move(s), v); }

}  // namespace

TEST(LatWeights, UnitMeanForSymmetricAndAsymmetricLatitudes) {
  for (const std::vector<double>& lats :
       {data::synthetic_latitudes(16), std::vector<double>{0.0, 60.0},
        std::vector<double>{-10.0, 5.0, 33.0, 71.0, 88.0}}) {
    const auto w = physics::LatWeights::from_latitudes(lats);
    double s = 0.0;
    for (double x : w.values()) s += x;
    EXPECT_NEAR(s / static_cast<double>(w.size()), 1.0, 1e-15);
  }
  const auto w = physics::LatWeights::from_latitudes(std::vector<double>{0.0, 60.0});
  EXPECT_NEAR(w[0], 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 2.0 / 3.0, 1e-15);
}

TEST(LatWeightedMse, HandValues) {
  const auto w = physics::LatWeights::from_latitudes(std::vector<double>{0.0, 60.0});
  const Tensor truth = const_tensor({1, 1, 2, 1}, 0.0);
  const Tensor pred({1, 1, 2, 1}, std::vector<double>{1.0, 0.0});
  EXPECT_NEAR(physics::lat_weighted_mse(pred, truth, w).item(), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(physics::lat_weighted_mse(truth, truth, w).item(), 0.0);
  const auto u = physics::LatWeights::uniform(3);
  EXPECT_NEAR(physics::lat_weighted_mse(const_tensor({2, 2, 3, 4}, 1.5), const_tensor({2, 2, 3, 4}, 1.0), u)
                  .item(),
              0.25, 1e-15);
  EXPECT_THROW(physics::lat_weighted_mse(pred, const_tensor({1, 1, 2, 2}, 0.0), w), DimensionError);
}

TEST(KineticLoss, HandValuesAndSignBlindness) {
  const physics::PhysicsVarMap map;
  Tensor pred({1, 3, 2, 2}, 0.0), truth({1, 3, 2, 2}, 0.0);
  for (std::size_t c = 0; c < 4; ++c) {
    pred.data_mut()[4 + c] = 3.0;
    pred.data_mut()[8 + c] = 4.0;
  }
  EXPECT_EQ(physics::kinetic_loss(pred, truth, map).item(), 12.5);
  EXPECT_EQ(physics::kinetic_loss(pred, pred, map).item(), 0.0);
  EXPECT_EQ(physics::kinetic_loss(scale(pred, -1.0), pred, map).item(), 0.0);
  physics::PhysicsVarMap bad;
  bad.v_index = 5;
  EXPECT_THROW(physics::kinetic_loss(pred, truth, bad), ConfigError);
}

TEST(ThermoLoss, ZeroCasesAndStencil) {
  const physics::PhysicsVarMap map;
  std::mt19937_64 rng(1);
  Tensor uniform({2, 3, 4, 5}, 7.0);
  auto winds = randn({2, 3, 4, 5}, rng);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t c = 0; c < 20; ++c) winds.data_mut()[i * 60 + c] = 7.0;
  }
  EXPECT_EQ(physics::thermo_loss(winds, uniform, map).item(), 0.0);

  Tensor still = randn({2, 3, 4, 5}, rng);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t c = 20; c < 60; ++c) still.data_mut()[i * 60 + c] = 0.0;
  }
  EXPECT_EQ(physics::thermo_loss(still, still, map).item(), 0.0);

  // T = column index, u = 2, v = 0, no tendency: r = 2 * 1 everywhere.
  Tensor ramp({1, 3, 3, 4}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      ramp.data_mut()[i * 4 + j] = static_cast<double>(j);
      ramp.data_mut()[12 + i * 4 + j] = 2.0;
    }
  }
  EXPECT_DOUBLE_EQ(physics::thermo_loss(ramp, ramp, map).item(), 4.0);

  physics::PhysicsVarMap bad;
  bad.dt = 0.0;
  EXPECT_THROW(physics::thermo_loss(ramp, ramp, bad), ConfigError);
}

TEST(ForwardDifference, BackwardAtTrailingEdge) {
  const Tensor x({1, 4}, std::vector<double>{1.0, 4.0, 9.0, 16.0});
  const Tensor d = physics::forward_difference(x, 1);
  EXPECT_EQ(std::vector<double>(d.data().begin(), d.data().end()),
            (std::vector<double>{3.0, 5.0, 7.0, 7.0}));
}

TEST(CombinedLoss, CompositionAndZeroWeights) {
  physics::LossWeights lw;
  const auto parts = physics::combine(Tensor({}, 1.0), Tensor({}, 2.0), Tensor({}, 0.5), lw);
  EXPECT_NEAR(parts.total.item(), 2.0, 1e-15);

  std::mt19937_64 rng(2);
  const Tensor p = randn({2, 3, 4, 8}, rng), t = randn({2, 3, 4, 8}, rng), x = randn({2, 3, 4, 8}, rng);
  const auto w = physics::LatWeights::from_latitudes(data::synthetic_latitudes(4));
  const physics::PhysicsVarMap map;
  const auto zero = physics::combined_loss(p, t, x, w, {0.0, 0.0}, map);
  EXPECT_EQ(zero.total.item(), physics::lat_weighted_mse(p, t, w).item());

  const Tensor steady({1, 3, 4, 8}, 3.0);
  EXPECT_EQ(physics::combined_loss(steady, steady, steady, w, lw, map).total.item(), 0.0);

  const auto full = physics::combined_loss(p, t, x, w, lw, map);
  EXPECT_GE(full.lat, 0.0);
  EXPECT_GE(full.kinetic, 0.0);
  EXPECT_GE(full.thermo, 0.0);
  EXPECT_NEAR(full.total.item(), full.lat + lw.alpha * full.kinetic + lw.beta * full.thermo, 1e-12);
}

TEST(CombinedLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  Tensor p = randn({2, 3, 4, 8}, rng, 1.0, true);
  const Tensor t = randn({2, 3, 4, 8}, rng), x = randn({2, 3, 4, 8}, rng);
  const auto w = physics::LatWeights::from_latitudes(data::synthetic_latitudes(4));
  auto loss = [&] { return physics::combined_loss(p, t, x, w, {}, {}).total; };
  EXPECT_LT(testutil::fd_worst(loss, {p}, rng, 64), 1e-4);
}

TEST(Metrics, HandValues) {
  const auto w = physics::LatWeights::from_latitudes(std::vector<double>{0.0, 60.0});
  const auto truth = field(1, 1, {0.0, 60.0}, 2, {0.0, 0.0, 0.0, 0.0});
  const auto pred = field(1, 1, {0.0, 60.0}, 2, {1.0, 1.0, 0.0, 0.0});
  EXPECT_NEAR(physics::rmse(pred, truth, w)[0], std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_EQ(physics::rmse(truth, truth, w)[0], 0.0);

  std::mt19937_64 rng(4);
  const auto t = random_field(5, 2, {-45.0, 0.0, 30.0, 80.0}, 8, rng);
  const auto wt = physics::LatWeights::from_latitudes(t.lats);
  const auto clim = physics::climatology(t);
  auto neg = t;
  for (std::size_t i = 0; i < neg.values.size(); ++i) {
    neg.values[i] = 2.0 * clim.values[i % clim.values.size()] - t.values[i];
  }
  for (std::size_t v = 0; v < 2; ++v) {
    EXPECT_NEAR(physics::acc(t, t, clim, wt)[v], 1.0, 1e-12);
    EXPECT_NEAR(physics::acc(neg, t, clim, wt)[v], -1.0, 1e-12);
  }
  const auto flat = field(2, 1, {0.0, 10.0}, 2, std::vector<double>(8, 1.0));
  EXPECT_TRUE(std::isnan(physics::acc(flat, flat, physics::climatology(flat),
                                      physics::LatWeights::from_latitudes(flat.lats))[0]));
}

TEST(Metrics, AgreeWithBruteForceOnRandomPairs) {
  std::mt19937_64 rng(5);
  const std::vector<double> lats = data::synthetic_latitudes(4);
  const auto w = physics::LatWeights::from_latitudes(lats);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_field(3, 2, lats, 8, rng);
    const auto t = random_field(3, 2, lats, 8, rng);
    const auto clim = physics::climatology(t);
    const auto r = physics::rmse(p, t, w);
    const auto a = physics::acc(p, t, clim, w, physics::AccForm::weighted);
    const auto u = physics::acc(p, t, clim, w, physics::AccForm::numerator_unweighted);
    for (std::size_t v = 0; v < 2; ++v) {
      worst = std::max(worst, std::fabs(r[v] - oracle::rmse(p, t, v)));
      worst = std::max(worst, std::fabs(a[v] - oracle::acc(p, t, v, true)));
      worst = std::max(worst, std::fabs(u[v] - oracle::acc(p, t, v, false)));
      EXPECT_LE(std::fabs(a[v]), 1.0);
    }
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Metrics, ShapeMismatch) {
  std::mt19937_64 rng(6);
  const auto a = random_field(1, 2, {0.0, 10.0}, 4, rng);
  const auto b = random_field(1, 2, {0.0, 10.0}, 8, rng);
  const auto w = physics::LatWeights::from_latitudes(a.lats);
  EXPECT_THROW(physics::rmse(a, b, w), DimensionError);
}

TEST(Advection, StillAtmosphereTruthHasZeroResidual) {
  data::GeneratorParams g;
  g.height = 8;
  g.width = 16;
  g.n_samples = 4;
  g.wind_scale = 0.0;
  g.lead_hours = {6.0};
  const auto ds = data::generate_advection_dataset(g);
  const auto& m = ds.manifest();
  const std::vector<std::size_t> idx{0, 1};
  const auto x = ds.inputs(data::Split::train, idx), y = ds.targets(data::Split::train, idx, 6.0);
  EXPECT_EQ(x.values, y.values);
  EXPECT_EQ(physics::thermo_loss(y.to_tensor(), x.to_tensor(), {}).item(), 0.0);
  EXPECT_EQ(m.lead_hours, g.lead_hours);
}
