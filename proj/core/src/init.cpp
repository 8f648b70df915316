#include "pinncast/init.hpp"

#include <cmath>

namespace pinncast {

Tensor trunc_normal(Shape shape, double std, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : t.data_mut()) {
    double s = normal(rng);
    while (std::fabs(s) > 2.0) s = normal(rng);
    v = s * std;
  }
  t.set_requires_grad(true);
  return t;
}

Tensor parameter(Shape shape, double fill) {
  Tensor t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

}  // namespace pinncast
