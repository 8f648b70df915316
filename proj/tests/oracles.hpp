#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "pinncast/data.hpp"

// Independent reimplementations used as test oracles. They work on flat
// C-order arrays and share no code with the library.
namespace oracle {

using pinncast::data::GridField;

// Unit-mean cosine latitude weights.
inline std::vector<double> cos_weights(const std::vector<double>& lats) {
  double total = 0.0;
  for (double l : lats) total += std::cos(l * std::numbers::pi / 180.0);
  std::vector<double> w;
  for (double l : lats) w.push_back(std::cos(l * std::numbers::pi / 180.0) * lats.size() / total);
  return w;
}

// Per-sample latitude-weighted RMSE, averaged over samples.
inline double rmse(const GridField& p, const GridField& t, std::size_t var) {
  const auto w = cos_weights(p.lats);
  const std::size_t hw = p.height * p.width;
  double mean = 0.0;
  for (std::size_t k = 0; k < p.batch; ++k) {
    const std::size_t base = (k * p.vars + var) * hw;
    double s = 0.0;
    for (std::size_t c = 0; c < hw; ++c) {
      const double e = p.values[base + c] - t.values[base + c];
      s += w[c / p.width] * e * e;
    }
    mean += std::sqrt(s / static_cast<double>(hw)) / static_cast<double>(p.batch);
  }
  return mean;
}

// Anomaly correlation against the per-gridpoint mean of `t`.
inline double acc(const GridField& p, const GridField& t, std::size_t var,
                  bool weighted_numerator) {
  const auto w = cos_weights(p.lats);
  const std::size_t hw = p.height * p.width;
  std::vector<double> clim(hw, 0.0);
  for (std::size_t k = 0; k < t.batch; ++k) {
    for (std::size_t c = 0; c < hw; ++c) clim[c] += t.values[(k * t.vars + var) * hw + c] / t.batch;
  }
  double num = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t k = 0; k < p.batch; ++k) {
    for (std::size_t c = 0; c < hw; ++c) {
      const double a = p.values[(k * p.vars + var) * hw + c] - clim[c];
      const double b = t.values[(k * t.vars + var) * hw + c] - clim[c];
      const double l = w[c / p.width];
      num += (weighted_numerator ? l : 1.0) * a * b;
      pp += l * a * a;
      tt += l * b * b;
    }
  }
  return num / std::sqrt(pp * tt);
}

// Truncated Taylor series of exp(A) applied to z0, A row-major n x n.
inline std::vector<double> expm_apply(const std::vector<double>& a, const std::vector<double>& z0) {
  const std::size_t n = z0.size();
  std::vector<double> term = z0, out = z0;
  for (int k = 1; k <= 40; ++k) {
    std::vector<double> next(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) next[i] += a[i * n + j] * term[j];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] += (term[i] = next[i] / k);
  }
  return out;
}

}  // namespace oracle
