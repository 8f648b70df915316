#include "pinncast/odesolve.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "pinncast/errors.hpp"
#include "pinncast/init.hpp"
#include "pinncast/ops.hpp"

namespace pinncast::ode {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr std::array<double, 7> kC = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[6][6] = {
    {1.0 / 5, 0, 0, 0, 0},
    {3.0 / 40, 9.0 / 40, 0, 0, 0},
    {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
    {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
// 5th-order weights (equal to the last tableau row, FSAL).
constexpr std::array<double, 7> kB5 = {35.0 / 384,     0.0,       500.0 / 1113, 125.0 / 192,
                                       -2187.0 / 6784, 11.0 / 84, 0.0};
// Embedded 4th-order weights.
constexpr std::array<double, 7> kB4 = {5179.0 / 57600,      0.0,           7571.0 / 16695,
                                       393.0 / 640,         -92097.0 / 339200, 187.0 / 2100,
                                       1.0 / 40};

Tensor eval_checked(const Dynamics& f, const Tensor& z, double t) {
  Tensor k = f(z, t);
  if (k.shape() != z.shape()) {
    throw DimensionError("vector field returned " + shape_str(k.shape()) + " for state " +
                         shape_str(z.shape()));
  }
  if (!all_finite(k.data())) {
    std::ostringstream os;
    os << "vector field produced non-finite values at t=" << t;
    throw NumericalError(os.str());
  }
  return k;
}

double error_norm(const std::vector<double>& err, std::span<const double> z,
                  std::span<const double> z_next, const OdeSolveConfig& cfg) {
  double acc = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    const double tol = cfg.atol + cfg.rtol * std::max(std::fabs(z[i]), std::fabs(z_next[i]));
    const double r = err[i] / tol;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

Dynamics as_dynamics(const VectorField& field) {
  return [&field](const Tensor& z, double t) { return field(z, t); };
}

}  // namespace

std::string to_string(Method m) { return m == Method::dopri5 ? "dopri5" : "rk4_fixed"; }

Method method_from_string(const std::string& name) {
  if (name == "dopri5") return Method::dopri5;
  if (name == "rk4_fixed" || name == "rk4") return Method::rk4_fixed;
  throw ConfigError("unknown ODE method '" + name + "' (expected dopri5 or rk4_fixed)");
}

void OdeSolveConfig::validate() const {
  if (!(rtol > 0.0) || !(atol > 0.0)) throw ConfigError("ODE tolerances must be positive");
  if (max_steps < 1) throw ConfigError("ODE max_steps must be >= 1");
  if (!(initial_step > 0.0)) throw ConfigError("ODE initial_step must be positive");
  if (!(safety > 0.0 && safety <= 1.0)) throw ConfigError("ODE safety factor must lie in (0, 1]");
  if (!(min_scale > 0.0 && min_scale < 1.0 && max_scale > 1.0)) {
    throw ConfigError("ODE step scale clamp must satisfy 0 < min_scale < 1 < max_scale");
  }
  if (rk4_steps < 1) throw ConfigError("rk4_steps must be >= 1");
}

VectorField VectorField::init(std::size_t width, std::mt19937_64& rng, bool zero_output,
                              bool time_dependent) {
  VectorField f;
  f.w1 = trunc_normal({width, width}, 0.02, rng);
  f.b1 = parameter({width}, 0.0);
  f.w2 = zero_output ? parameter({width, width}, 0.0) : trunc_normal({width, width}, 0.02, rng);
  f.b2 = parameter({width}, 0.0);
  f.time_dependent = time_dependent;
  if (time_dependent) f.w_time = trunc_normal({width}, 0.02, rng);
  return f;
}

Tensor VectorField::operator()(const Tensor& z, double t) const {
  Tensor pre = linear(z, w1, b1);
  if (time_dependent) pre = add_trailing(pre, scale(w_time, t));
  return linear(relu(pre), w2, b2);
}

std::vector<Tensor> VectorField::parameters() const {
  std::vector<Tensor> p{w1, b1, w2, b2};
  if (time_dependent) p.push_back(w_time);
  return p;
}

double step_scale(double error_norm, const OdeSolveConfig& cfg) {
  if (error_norm == 0.0) return cfg.max_scale;
  const double s = cfg.safety * std::pow(error_norm, -1.0 / 5.0);
  return std::clamp(s, cfg.min_scale, cfg.max_scale);
}

Dopri5Step dopri5_step(const Dynamics& f, const Tensor& z, double t, double h,
                       const Tensor& k1) {
  if (!(h > 0.0)) throw ConfigError("dopri5_step requires h > 0");
  std::vector<Tensor> k;
  k.reserve(7);
  k.push_back(k1.defined() ? k1 : eval_checked(f, z, t));

  std::vector<Tensor> terms{z};
  std::vector<double> coeffs{1.0};
  for (int s = 0; s < 6; ++s) {
    terms.resize(1);
    coeffs.resize(1);
    for (int j = 0; j <= s; ++j) {
      terms.push_back(k[static_cast<std::size_t>(j)]);
      coeffs.push_back(h * kA[s][j]);
    }
    Tensor stage = lincomb(terms, coeffs);
    if (s == 5) {
      // The last stage argument is the 5th-order solution itself.
      Tensor k7 = eval_checked(f, stage, t + h);
      k.push_back(k7);
      Dopri5Step out;
      out.z_next = stage;
      out.k_last = k7;
      out.error.assign(z.numel(), 0.0);
      for (std::size_t i = 0; i < 7; ++i) {
        const double w = h * (kB5[i] - kB4[i]);
        if (w == 0.0) continue;
        const auto kv = k[i].data();
        for (std::size_t n = 0; n < out.error.size(); ++n) out.error[n] += w * kv[n];
      }
      for (auto& e : out.error) e = std::fabs(e);
      return out;
    }
    k.push_back(eval_checked(f, stage, t + kC[static_cast<std::size_t>(s) + 1] * h));
  }
  return {};  // unreachable
}

Tensor ode_solve(const Dynamics& f, const Tensor& z0, double t0, double t1,
                 const OdeSolveConfig& cfg, SolveStats* stats) {
  cfg.validate();
  if (!(t1 > t0)) throw ConfigError("ode_solve requires t1 > t0");
  if (!all_finite(z0.data())) throw NumericalError("ode_solve: non-finite initial state");

  SolveStats local;
  SolveStats& st = stats ? *stats : local;
  st = SolveStats{};
  st.t_reached = t0;

  if (cfg.method == Method::rk4_fixed) {
    Tensor z = rk4_solve(f, z0, t0, t1, cfg.rk4_steps);
    st.accepted = cfg.rk4_steps;
    st.evaluations = 4 * cfg.rk4_steps;
    st.t_reached = t1;
    return z;
  }

  GradTape* tape = GradTape::active();
  Tensor z = z0;
  double t = t0;
  double h = std::min(cfg.initial_step, t1 - t0);
  Tensor k1 = eval_checked(f, z, t);
  st.evaluations = 1;
  int attempts = 0;

  while (t < t1) {
    if (attempts >= cfg.max_steps) {
      std::ostringstream os;
      os << "ode_solve exceeded max_steps=" << cfg.max_steps << " at t=" << t << " of [" << t0
         << ", " << t1 << "]";
      throw IntegrationError(os.str(), t);
    }
    ++attempts;
    const double remaining = t1 - t;
    const bool last = h >= remaining;
    const double h_try = last ? remaining : h;

    const std::size_t mark = tape ? tape->mark() : 0;
    Dopri5Step step = dopri5_step(f, z, t, h_try, k1);
    st.evaluations += 6;
    const double norm = error_norm(step.error, z.data(), step.z_next.data(), cfg);
    if (!std::isfinite(norm)) throw NumericalError("ode_solve: non-finite error estimate");

    if (norm <= 1.0) {
      z = step.z_next;
      k1 = step.k_last;
      t = last ? t1 : t + h_try;
      ++st.accepted;
    } else {
      if (tape) tape->rewind(mark);
      ++st.rejected;
    }
    st.t_reached = t;
    h = h_try * step_scale(norm, cfg);
    if (h <= 1e-14 * std::max(1.0, std::fabs(t))) {
      std::ostringstream os;
      os << "ode_solve step size underflow at t=" << t;
      throw IntegrationError(os.str(), t);
    }
  }
  return z;
}

Tensor ode_solve(const VectorField& field, const Tensor& z0, double t0, double t1,
                 const OdeSolveConfig& cfg, SolveStats* stats) {
  return ode_solve(as_dynamics(field), z0, t0, t1, cfg, stats);
}

Tensor rk4_solve(const Dynamics& f, const Tensor& z0, double t0, double t1, int n_steps) {
  if (n_steps < 1) throw ConfigError("rk4_solve requires n_steps >= 1");
  if (!(t1 > t0)) throw ConfigError("rk4_solve requires t1 > t0");
  const double h = (t1 - t0) / n_steps;
  Tensor z = z0;
  for (int s = 0; s < n_steps; ++s) {
    const double t = t0 + s * h;
    const Tensor k1 = eval_checked(f, z, t);
    const Tensor k2 = eval_checked(f, lincomb(std::vector<Tensor>{z, k1}, std::vector<double>{1.0, 0.5 * h}), t + 0.5 * h);
    const Tensor k3 = eval_checked(f, lincomb(std::vector<Tensor>{z, k2}, std::vector<double>{1.0, 0.5 * h}), t + 0.5 * h);
    const Tensor k4 = eval_checked(f, lincomb(std::vector<Tensor>{z, k3}, std::vector<double>{1.0, h}), t + h);
    z = lincomb(std::vector<Tensor>{z, k1, k2, k3, k4},
                std::vector<double>{1.0, h / 6.0, h / 3.0, h / 3.0, h / 6.0});
  }
  return z;
}

Tensor rk4_solve(const VectorField& field, const Tensor& z0, double t0, double t1,
                 int n_steps) {
  return rk4_solve(as_dynamics(field), z0, t0, t1, n_steps);
}

}  // namespace pinncast::ode
