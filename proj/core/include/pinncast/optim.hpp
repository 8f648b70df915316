#pragma once

#include <cstddef>
#include <vector>

#include "pinncast/config.hpp"
#include "pinncast/tensor.hpp"

namespace pinncast {

/// Adam with decoupled weight decay. Parameters without an accumulated
/// gradient in a step are left untouched (their moments do not advance).
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, const OptimizerConfig& cfg);

  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace pinncast
