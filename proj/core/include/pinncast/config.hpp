#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "pinncast/data.hpp"
#include "pinncast/model.hpp"
#include "pinncast/odesolve.hpp"
#include "pinncast/physics.hpp"

namespace pinncast {

struct OptimizerConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

/// fixed: every step trains on `train_lead_hours`; uniform: each batch draws
/// one of the dataset's lead times.
enum class LeadSampling { fixed, uniform };

struct RunConfig {
  model::ModelConfig model;
  physics::LossWeights loss;
  bool physics_loss = true;  // false zeroes alpha and beta for training
  OptimizerConfig optimizer;
  std::size_t batch_size = 12;
  std::size_t epochs = 50;
  std::size_t patience = 5;
  /// Hard cap on optimizer steps (0 = unlimited), for quick runs.
  std::size_t max_steps = 0;
  std::uint64_t seed = 0;
  LeadSampling lead_sampling = LeadSampling::fixed;
  double train_lead_hours = 6.0;

  void validate() const;
  physics::LossWeights effective_loss() const {
    return physics_loss ? loss : physics::LossWeights{0.0, 0.0};
  }
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const ode::OdeSolveConfig& c);
ode::OdeSolveConfig ode_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep their defaults, so partial config files are accepted.
RunConfig run_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const data::GeneratorParams& g);
/// Partial objects keep the defaults of missing keys.
data::GeneratorParams generator_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);
/// Parsed JSON file; IoError or ConfigError naming the path.
nlohmann::json load_json_file(const std::filesystem::path& path);

}  // namespace pinncast
