#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "pinncast/checks.hpp"
#include "pinncast/config.hpp"
#include "pinncast/errors.hpp"
#include "pinncast/optim.hpp"
#include "pinncast/train.hpp"

using namespace pinncast;

namespace {

const data::Dataset& tiny_dataset() {
  static const data::Dataset ds = [] {
    data::GeneratorParams p;
    p.seed = 5;
    p.height = 8;
    p.width = 16;
    p.n_samples = 24;
    p.lead_hours = {6.0, 12.0};
    return data::generate_advection_dataset(p);
  }();
  return ds;
}

RunConfig tiny_run() {
  RunConfig c;
  c.model = checks::micro_model_config(ode::Method::rk4_fixed);
  c.model.width = 16;
  c.model.dropout = 0.1;
  c.optimizer.lr = 1e-3;
  c.batch_size = 4;
  c.epochs = 3;
  c.seed = 17;
  return c;
}

std::vector<double> grads_of(const std::function<Tensor()>& loss, const model::Forecaster& m) {
  auto params = m.parameters();
  for (auto& p : params) p.zero_grad();
  {
    GradTape tape;
    tape.backward(loss());
  }
  std::vector<double> out;
  for (const auto& p : params) {
    if (p.has_grad()) out.insert(out.end(), p.grad().begin(), p.grad().end());
  }
  return out;
}

}  // namespace

TEST(RunConfig, JsonRoundTripAndPartialOverrides) {
  RunConfig c = tiny_run();
  c.lead_sampling = LeadSampling::uniform;
  c.loss = {0.1, 0.5};
  c.physics_loss = false;
  c.model.time_dependent_field = true;
  c.model.ode.rtol = 1e-4;
  EXPECT_EQ(run_config_from_json(to_json(c)), c);

  const auto path = std::filesystem::temp_directory_path() / "pinncast_test_run_config.json";
  save_run_config(c, path);
  EXPECT_EQ(load_run_config(path), c);
  std::filesystem::remove(path);

  const RunConfig partial = run_config_from_json(nlohmann::json::parse(R"({"epochs": 7})"));
  RunConfig want;
  want.epochs = 7;
  EXPECT_EQ(partial, want);
  EXPECT_EQ(want.optimizer.lr, 5e-5);
  EXPECT_EQ(want.batch_size, 12u);

  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"epochs": "many"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"lead_sampling": "random"})")),
               ConfigError);
  RunConfig bad;
  bad.optimizer.lr = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/run.json"), IoError);
}

TEST(AdamW, MatchesHandComputedUpdates) {
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  Tensor x({2}, std::vector<double>{1.0, -2.0});
  x.set_requires_grad();
  const Tensor c({2}, std::vector<double>{0.5, -3.0});
  AdamW opt({x}, cfg);

  double m[2] = {0, 0}, v[2] = {0, 0}, want[2] = {1.0, -2.0};
  for (int t = 1; t <= 3; ++t) {
    opt.zero_grad();
    {
      GradTape tape;
      tape.backward(sum(mul(square(x), c)));  // grad = 2 c x
    }
    opt.step();
    for (int i = 0; i < 2; ++i) {
      const double g = 2.0 * c.at(i) * want[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1.0 - std::pow(0.9, t)), vh = v[i] / (1.0 - std::pow(0.999, t));
      want[i] = want[i] * (1.0 - 0.1 * 0.01) - 0.1 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(x.at(i), want[i], 1e-14) << "step " << t;
    }
  }
  EXPECT_EQ(opt.steps(), 3u);
}

TEST(AdamW, SkipsParametersWithoutGradient) {
  Tensor a({1}, 1.0), b({1}, 1.0);
  a.set_requires_grad();
  b.set_requires_grad();
  AdamW opt({a, b}, OptimizerConfig{});
  {
    GradTape tape;
    tape.backward(sum(square(a)));
  }
  opt.step();
  EXPECT_LT(a.item(), 1.0);
  EXPECT_EQ(b.item(), 1.0);
}

TEST(BatchLoss, ZeroPhysicsWeightsLeaveOnlyTheMseGradient) {
  const auto& ds = tiny_dataset();
  const model::Forecaster m(tiny_run().model, 3);
  const std::vector<std::size_t> idx{0, 1, 2};
  const auto& man = ds.manifest();
  const auto w = physics::LatWeights::from_latitudes(man.lats);
  const auto with_zero = grads_of(
      [&] { return batch_loss(m, ds, data::Split::train, idx, 6.0, {0.0, 0.0}).total; }, m);
  const auto mse_only = grads_of(
      [&] {
        const Tensor x = data::normalize(ds.inputs(data::Split::train, idx), man.stats).to_tensor();
        const Tensor y =
            data::normalize(ds.targets(data::Split::train, idx, 6.0), man.stats).to_tensor();
        return physics::lat_weighted_mse(m.forward(x, 6.0), y, w);
      },
      m);
  ASSERT_EQ(with_zero.size(), mse_only.size());
  for (std::size_t i = 0; i < with_zero.size(); ++i) EXPECT_EQ(with_zero[i], mse_only[i]) << i;

  const auto full = batch_loss(m, ds, data::Split::train, idx, 6.0, {});
  EXPECT_GT(full.kinetic, 0.0);
  EXPECT_GT(full.thermo, 0.0);
  EXPECT_NEAR(full.total.item(), full.lat + 0.3 * full.kinetic + 0.8 * full.thermo, 1e-9);
}

TEST(Trainer, SameSeedGivesIdenticalHistoriesAndWeights) {
  const auto& ds = tiny_dataset();
  Trainer a(tiny_run(), ds), b(tiny_run(), ds);
  const auto ra = a.fit(), rb = b.fit();
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t e = 0; e < ra.history.size(); ++e) {
    EXPECT_EQ(ra.history[e].total, rb.history[e].total);
    EXPECT_EQ(ra.history[e].val_total, rb.history[e].val_total);
  }
  const auto pa = a.model().parameters(), pb = b.model().parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) {
    EXPECT_TRUE(std::equal(pa[k].data().begin(), pa[k].data().end(), pb[k].data().begin()));
  }
  EXPECT_LT(ra.history.back().total, ra.history.front().total);
}

TEST(Trainer, RestoresBestParametersAndHonorsStepCap) {
  const auto& ds = tiny_dataset();
  RunConfig cfg = tiny_run();
  cfg.epochs = 4;
  Trainer t(cfg, ds);
  const auto r = t.fit();
  const std::vector<double> lead{6.0};
  EXPECT_EQ(t.mean_loss(data::Split::val, lead).total.item(), r.best_val);
  EXPECT_EQ(r.history[r.best_epoch - 1].val_total, r.best_val);

  cfg.max_steps = 7;  // 4 batches per epoch
  Trainer capped(cfg, ds);
  const auto rc = capped.fit();
  EXPECT_EQ(rc.steps, 7u);
  EXPECT_EQ(rc.history.size(), 2u);
}

TEST(Trainer, EarlyStoppingOnFlatValidation) {
  RunConfig cfg = tiny_run();
  cfg.optimizer.lr = 1e-300;  // updates underflow: validation never improves
  cfg.optimizer.weight_decay = 0.0;
  cfg.epochs = 10;
  cfg.patience = 2;
  Trainer t(cfg, tiny_dataset());
  const auto r = t.fit();
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_EQ(r.history.size(), 3u);
}

TEST(Trainer, NonFiniteLossReportsEpochAndStep) {
  Trainer t(tiny_run(), tiny_dataset());
  t.model().parameters()[0].data_mut()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    t.fit();
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("epoch 1"), std::string::npos) << what;
    EXPECT_NE(what.find("step 1"), std::string::npos) << what;
  }
}

TEST(Trainer, RejectsMismatchedGridAndMissingLead) {
  RunConfig cfg = tiny_run();
  cfg.model.width = 8;
  EXPECT_THROW(Trainer(cfg, tiny_dataset()), ConfigError);
  cfg = tiny_run();
  cfg.train_lead_hours = 18.0;
  EXPECT_THROW(Trainer(cfg, tiny_dataset()), ConfigError);
}

TEST(Evaluate, ThreadCountDoesNotChangeForecasts) {
  const auto& ds = tiny_dataset();
  const model::Forecaster m(tiny_run().model, 8);
  const auto one = predict_split(m, ds, data::Split::train, 12.0, 3, 1);
  const auto three = predict_split(m, ds, data::Split::train, 12.0, 3, 3);
  EXPECT_EQ(one.values, three.values);
  EXPECT_EQ(one.batch, ds.size(data::Split::train));
}

TEST(Evaluate, RowsEqualDirectMetricCalls) {
  const auto& ds = tiny_dataset();
  const model::Forecaster m(tiny_run().model, 9);
  const std::vector<double> leads{12.0, 6.0};
  EvalOptions opts;
  opts.split = data::Split::val;
  opts.batch_size = 2;
  const auto rows = evaluate(m, ds, leads, opts);
  ASSERT_EQ(rows.size(), 6u);
  const auto w = physics::LatWeights::from_latitudes(ds.manifest().lats);
  for (std::size_t l = 0; l < 2; ++l) {
    const auto truth = ds.all(data::Split::val, ds.manifest().lead_slot(leads[l]));
    const auto pred = predict_split(m, ds, data::Split::val, leads[l], 2, 1);
    const auto r = physics::rmse(pred, truth, w);
    const auto a = physics::acc(pred, truth, physics::climatology(truth), w);
    for (std::size_t v = 0; v < 3; ++v) {
      const auto& row = rows[l * 3 + v];
      EXPECT_EQ(row.variable, ds.manifest().var_names[v]);
      EXPECT_EQ(row.lead_hours, leads[l]);
      EXPECT_EQ(row.rmse, r[v]);
      EXPECT_EQ(row.acc, a[v]);
    }
  }

  opts.truth_as_prediction = true;
  for (const auto& row : evaluate(m, ds, leads, opts)) {
    EXPECT_EQ(row.rmse, 0.0);
    EXPECT_NEAR(row.acc, 1.0, 1e-12);
  }
}
