#include "pinncast/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pinncast {

namespace {

double relative_error(double a, double n, double floor) {
  const double diff = std::fabs(a - n);
  const double scale = std::max(std::fabs(a), std::fabs(n));
  if (scale < floor) return diff < floor ? 0.0 : diff / floor;
  return diff / scale;
}

}  // namespace

GradCheckResult gradcheck(const std::function<Tensor()>& loss,
                          const std::vector<model::NamedTensor>& params,
                          const GradCheckOptions& opts) {
  std::vector<Tensor> leaves;
  for (const auto& [name, p] : params) leaves.push_back(p);
  for (auto& p : leaves) p.zero_grad();
  {
    GradTape tape;
    tape.backward(loss());
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& p : leaves) analytic.emplace_back(p.grad().begin(), p.grad().end());
  for (auto& p : leaves) p.zero_grad();

  GradTape::Pause pause;
  auto central = [&](Tensor& p, std::size_t i, double h) {
    auto x = p.data_mut();
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss().item();
    x[i] = saved - h;
    const double down = loss().item();
    x[i] = saved;
    return (up - down) / (2.0 * h);
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    for (std::size_t i = 0; i < leaves[k].numel(); ++i) {
      const double a = analytic[k][i];
      double n = central(leaves[k], i, opts.step);
      double err = relative_error(a, n, opts.abs_floor);
      if (err >= opts.tolerance) {
        const double n2 = central(leaves[k], i, opts.retry_step);
        const double err2 = relative_error(a, n2, opts.abs_floor);
        if (err2 < err) {
          n = n2;
          err = err2;
        }
      }
      ++result.checked;
      if (err >= opts.tolerance) ++result.failures;
      if (err >= result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = {params[k].first, i, a, n, err};
      }
    }
  }
  return result;
}

}  // namespace pinncast
