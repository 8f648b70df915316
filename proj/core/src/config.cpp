#include "pinncast/config.hpp"

#include <fstream>

#include "pinncast/errors.hpp"

namespace pinncast {

using nlohmann::json;

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("AdamW betas must lie in [0, 1)");
  }
  if (!(eps > 0.0) || weight_decay < 0.0) throw ConfigError("invalid AdamW eps/weight decay");
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  optimizer.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(train_lead_hours > 0.0)) throw ConfigError("train_lead_hours must be positive");
}

json to_json(const ode::OdeSolveConfig& c) {
  return json{{"method", ode::to_string(c.method)}, {"rtol", c.rtol},
              {"atol", c.atol},                     {"max_steps", c.max_steps},
              {"initial_step", c.initial_step},     {"safety", c.safety},
              {"min_scale", c.min_scale},           {"max_scale", c.max_scale},
              {"rk4_steps", c.rk4_steps}};
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

ode::OdeSolveConfig ode_config_from_json(const json& j) {
  ode::OdeSolveConfig c;
  if (j.contains("method")) c.method = ode::method_from_string(j.at("method").get<std::string>());
  read(j, "rtol", c.rtol);
  read(j, "atol", c.atol);
  read(j, "max_steps", c.max_steps);
  read(j, "initial_step", c.initial_step);
  read(j, "safety", c.safety);
  read(j, "min_scale", c.min_scale);
  read(j, "max_scale", c.max_scale);
  read(j, "rk4_steps", c.rk4_steps);
  return c;
}

json to_json(const model::ModelConfig& c) {
  return json{{"variables", c.variables},
              {"height", c.height},
              {"width", c.width},
              {"patch_size", c.patch_size},
              {"embed_dim", c.embed_dim},
              {"depth", c.depth},
              {"num_heads", c.num_heads},
              {"mlp_ratio", c.mlp_ratio},
              {"dropout", c.dropout},
              {"use_two_branch", c.use_two_branch},
              {"use_node", c.use_node},
              {"time_dependent_field", c.time_dependent_field},
              {"ode", to_json(c.ode)}};
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  read(j, "variables", c.variables);
  read(j, "height", c.height);
  read(j, "width", c.width);
  read(j, "patch_size", c.patch_size);
  read(j, "embed_dim", c.embed_dim);
  read(j, "depth", c.depth);
  read(j, "num_heads", c.num_heads);
  read(j, "mlp_ratio", c.mlp_ratio);
  read(j, "dropout", c.dropout);
  read(j, "use_two_branch", c.use_two_branch);
  read(j, "use_node", c.use_node);
  read(j, "time_dependent_field", c.time_dependent_field);
  if (j.contains("ode")) c.ode = ode_config_from_json(j.at("ode"));
  return c;
}

json to_json(const RunConfig& c) {
  return json{{"model", to_json(c.model)},
              {"loss", {{"alpha", c.loss.alpha}, {"beta", c.loss.beta}}},
              {"physics_loss", c.physics_loss},
              {"optimizer",
               {{"lr", c.optimizer.lr},
                {"beta1", c.optimizer.beta1},
                {"beta2", c.optimizer.beta2},
                {"eps", c.optimizer.eps},
                {"weight_decay", c.optimizer.weight_decay}}},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"patience", c.patience},
              {"max_steps", c.max_steps},
              {"seed", c.seed},
              {"lead_sampling", c.lead_sampling == LeadSampling::fixed ? "fixed" : "uniform"},
              {"train_lead_hours", c.train_lead_hours}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("loss")) {
      read(j.at("loss"), "alpha", c.loss.alpha);
      read(j.at("loss"), "beta", c.loss.beta);
    }
    read(j, "physics_loss", c.physics_loss);
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      read(o, "lr", c.optimizer.lr);
      read(o, "beta1", c.optimizer.beta1);
      read(o, "beta2", c.optimizer.beta2);
      read(o, "eps", c.optimizer.eps);
      read(o, "weight_decay", c.optimizer.weight_decay);
    }
    read(j, "batch_size", c.batch_size);
    read(j, "epochs", c.epochs);
    read(j, "patience", c.patience);
    read(j, "max_steps", c.max_steps);
    read(j, "seed", c.seed);
    if (j.contains("lead_sampling")) {
      const auto s = j.at("lead_sampling").get<std::string>();
      if (s == "fixed") {
        c.lead_sampling = LeadSampling::fixed;
      } else if (s == "uniform") {
        c.lead_sampling = LeadSampling::uniform;
      } else {
        throw ConfigError("lead_sampling must be 'fixed' or 'uniform'");
      }
    }
    read(j, "train_lead_hours", c.train_lead_hours);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
  return c;
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(load_json_file(path));
}

json to_json(const data::GeneratorParams& g) {
  return json{{"seed", g.seed},
              {"height", g.height},
              {"width", g.width},
              {"n_samples", g.n_samples},
              {"n_blobs", g.n_blobs},
              {"wind_scale", g.wind_scale},
              {"blob_sigma_min", g.blob_sigma_min},
              {"blob_sigma_max", g.blob_sigma_max},
              {"blob_amp_min", g.blob_amp_min},
              {"blob_amp_max", g.blob_amp_max},
              {"background", g.background},
              {"lead_hours", g.lead_hours},
              {"val_fraction", g.val_fraction},
              {"test_fraction", g.test_fraction}};
}

data::GeneratorParams generator_config_from_json(const json& j) {
  data::GeneratorParams g;
  try {
    read(j, "seed", g.seed);
    read(j, "height", g.height);
    read(j, "width", g.width);
    read(j, "n_samples", g.n_samples);
    read(j, "n_blobs", g.n_blobs);
    read(j, "wind_scale", g.wind_scale);
    read(j, "blob_sigma_min", g.blob_sigma_min);
    read(j, "blob_sigma_max", g.blob_sigma_max);
    read(j, "blob_amp_min", g.blob_amp_min);
    read(j, "blob_amp_max", g.blob_amp_max);
    read(j, "background", g.background);
    read(j, "lead_hours", g.lead_hours);
    read(j, "val_fraction", g.val_fraction);
    read(j, "test_fraction", g.test_fraction);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid generator config: ") + e.what());
  }
  return g;
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace pinncast
