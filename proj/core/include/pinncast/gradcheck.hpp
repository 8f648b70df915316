#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "pinncast/model.hpp"
#include "pinncast/tensor.hpp"

namespace pinncast {

struct GradCheckOptions {
  double step = 1e-5;        // central-difference half width
  double retry_step = 1e-6;  // second try for entries that straddle a kink
  double tolerance = 1e-4;   // relative error bound
  /// Entries whose analytic and numeric gradients are both below this are
  /// judged on absolute error instead (relative error is noise there).
  double abs_floor = 1e-7;
};

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  bool passed() const { return failures == 0; }
};

/// Compares tape gradients of `loss` with central differences for every
/// entry of every parameter. `loss` must be deterministic in the parameters.
GradCheckResult gradcheck(const std::function<Tensor()>& loss,
                          const std::vector<model::NamedTensor>& params,
                          const GradCheckOptions& opts = {});

}  // namespace pinncast
