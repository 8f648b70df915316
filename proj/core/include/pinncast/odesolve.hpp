#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pinncast/tensor.hpp"

namespace pinncast::ode {

enum class Method { dopri5, rk4_fixed };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct OdeSolveConfig {
  Method method = Method::dopri5;
  double rtol = 1e-5;
  double atol = 1e-6;
  int max_steps = 1000;
  double initial_step = 0.1;
  double safety = 0.9;
  double min_scale = 0.2;
  double max_scale = 10.0;
  int rk4_steps = 4;  // uniform steps used when method == rk4_fixed

  void validate() const;
  bool operator==(const OdeSolveConfig&) const = default;
};

/// Right-hand side dz/dt = f(z, t).
using Dynamics = std::function<Tensor(const Tensor& z, double t)>;

/// Two-layer perceptron f(z) = W2 relu(W1 z + b1) + b2 acting on the last
/// axis of z. Hidden width equals the state width. When `time_dependent` is
/// set, t enters the hidden pre-activation through a learned vector
/// (W1 z + b1 + t * w_time); by default the field is autonomous.
struct VectorField {
  Tensor w1, b1, w2, b2;
  Tensor w_time;  // defined only when time_dependent
  bool time_dependent = false;

  /// Truncated-normal (std 0.02) W1, zero biases. W2 is zero unless
  /// `zero_output` is false, so the default field starts as f == 0.
  static VectorField init(std::size_t width, std::mt19937_64& rng, bool zero_output = true,
                          bool time_dependent = false);

  std::size_t width() const { return w1.extent(0); }
  Tensor operator()(const Tensor& z, double t) const;
  std::vector<Tensor> parameters() const;
};

struct SolveStats {
  int accepted = 0;
  int rejected = 0;
  int evaluations = 0;
  double t_reached = 0.0;
};

/// One Dormand-Prince 5(4) step.
struct Dopri5Step {
  Tensor z_next;               // 5th-order solution
  Tensor k_last;               // f(z_next, t + h), reusable as the next k1
  std::vector<double> error;   // per component |z5 - z4|
};

/// `k1` may carry f(z, t) from the previous step (FSAL).
Dopri5Step dopri5_step(const Dynamics& f, const Tensor& z, double t, double h,
                       const Tensor& k1 = Tensor());

/// Adaptive or fixed-step solve from t0 to t1 (t1 > t0), differentiable by
/// unrolling the accepted steps on the active tape.
Tensor ode_solve(const Dynamics& f, const Tensor& z0, double t0, double t1,
                 const OdeSolveConfig& cfg, SolveStats* stats = nullptr);
Tensor ode_solve(const VectorField& field, const Tensor& z0, double t0, double t1,
                 const OdeSolveConfig& cfg, SolveStats* stats = nullptr);

/// Classical RK4 with `n_steps` uniform steps.
Tensor rk4_solve(const Dynamics& f, const Tensor& z0, double t0, double t1, int n_steps);
Tensor rk4_solve(const VectorField& field, const Tensor& z0, double t0, double t1,
                 int n_steps);

/// Scale applied to the step size after an attempt with the given error norm.
double step_scale(double error_norm, const OdeSolveConfig& cfg);

}  // namespace pinncast::ode
