#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pinncast/data.hpp"
#include "pinncast/model.hpp"
#include "pinncast/odesolve.hpp"

namespace pinncast::checks {

/// One measured quantity against its bound. By default the value must stay
/// below the bound; `at_least` flips that (used for ratios).
struct CheckRow {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  bool at_least = false;

  bool passed() const { return at_least ? value >= bound : value < bound; }
};

struct CheckReport {
  std::string suite;
  std::vector<CheckRow> rows;

  void add(std::string name, double value, double bound, bool at_least = false) {
    rows.push_back({std::move(name), value, bound, at_least});
  }
  bool passed() const;
  /// Fixed-width table, one row per check.
  std::string table() const;
};

/// V=3, 8x8 grid, patch 2, C=16, one block, two heads, no dropout.
model::ModelConfig micro_model_config(ode::Method method);

/// Finite-difference gradient check of the micro model in rk4 and dopri5 mode.
CheckReport check_grad();
/// Analytic decay, matrix-exponential oracle, tolerance refinement.
CheckReport check_ode();
/// Row sums, uniform limits and the hand-computed derivative example.
CheckReport check_attention();
/// Hand values, loss gradients and the advection oracle.
CheckReport check_physics();

/// Smooth, slowly advected blobs on a 32x64 grid (generator settings of the
/// physics-consistency oracle).
data::GeneratorParams advection_oracle_params();

struct AdvectionOracle {
  double truth_thermo = 0.0;     // thermo_loss of the ground-truth pairs
  double bound = 0.0;            // mean squared per-cell truncation bound
  double shuffled_thermo = 0.0;  // same T pairs with winds from other samples
};

/// Evaluates the advection residual of generated truth pairs at `lead_hours`
/// against the truncation bound of the stencil, whose second derivatives are
/// sampled from the closed-form field.
AdvectionOracle advection_oracle(const data::GeneratorParams& params, double lead_hours);

}  // namespace pinncast::checks
