#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "pinncast/errors.hpp"
#include "pinncast/model.hpp"

namespace pinncast::cli {

using nlohmann::json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return kNumerical;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const IoError*>(&e)) return kUsage;
  return kInvariant;
}

void init_logging() {
  auto level = spdlog::level::info;
  std::string bad;
  if (const char* env = std::getenv("PINNCAST_LOG")) {
    const std::string v = env;
    if (v == "error") {
      level = spdlog::level::err;
    } else if (v == "debug") {
      level = spdlog::level::debug;
    } else if (v != "info" && !v.empty()) {
      bad = v;
    }
  }
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(level);
  if (!bad.empty()) spdlog::warn("PINNCAST_LOG='{}' not recognized, using info", bad);
}

namespace {

// Shortest text that reads back to the same double.
std::string num(double x) {
  if (std::isnan(x)) return "nan";
  return fmt::format("{}", x);
}

fs::path dataset_stem(fs::path p) {
  const auto ext = p.extension();
  if (ext == ".manifest" || ext == ".bin") p.replace_extension();
  return p;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  }
}

void adopt_grid(RunConfig& cfg, const data::DatasetManifest& m) {
  cfg.model.variables = m.vars();
  cfg.model.height = m.height;
  cfg.model.width = m.width;
}

std::vector<double> monitored_leads(const RunConfig& cfg, const data::DatasetManifest& m) {
  return cfg.lead_sampling == LeadSampling::fixed ? std::vector<double>{cfg.train_lead_hours}
                                                  : m.lead_hours;
}

// Blue-white-red ramp between lo and hi.
void write_ppm(const fs::path& path, const data::GridField& f, std::size_t v, double lo,
               double hi) {
  std::string out = fmt::format("P6\n{} {}\n255\n", f.width, f.height);
  const double span = hi > lo ? hi - lo : 1.0;
  // Row 0 is the northernmost latitude; the image puts north on top.
  for (std::size_t i = 0; i < f.height; ++i) {
    for (std::size_t j = 0; j < f.width; ++j) {
      const double s = std::clamp((f.at(0, v, i, j) - lo) / span, 0.0, 1.0);
      const auto ch = [](double c) { return static_cast<char>(std::lround(255.0 * c)); };
      const double r = s < 0.5 ? 2 * s : 1.0;
      const double b = s < 0.5 ? 1.0 : 2 * (1 - s);
      const double g = std::min(r, b);
      out += ch(r);
      out += ch(g);
      out += ch(b);
    }
  }
  write_text(path, out);
}

struct TrainedRun {
  TrainResult result;
  model::Forecaster model;
  physics::LossBreakdown val;
  physics::LossBreakdown test;
};

TrainedRun train_run(RunConfig cfg, const data::Dataset& ds, const fs::path& out_dir) {
  const auto& m = ds.manifest();
  adopt_grid(cfg, m);
  cfg.validate();
  ensure_dir(out_dir);
  save_run_config(cfg, out_dir / kConfigName);

  Trainer trainer(cfg, ds);
  spdlog::info("training {} parameters ({} in vector fields), {} train samples, batch {}",
               trainer.model().parameter_count(), trainer.model().vector_field_parameter_count(),
               ds.size(data::Split::train), cfg.batch_size);

  const fs::path log_path = out_dir / kTrainLogName;
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot write " + log_path.string());
  log << "epoch,L_total,L_lat,L_kinetic,L_thermo,val_L_total\n";
  auto result = trainer.fit([&](const EpochRow& r) {
    log << r.epoch << ',' << num(r.total) << ',' << num(r.lat) << ',' << num(r.kinetic) << ','
        << num(r.thermo) << ',' << num(r.val_total) << '\n';
    log.flush();
    spdlog::info("epoch {:3d}  L_total {:.6g}  L_lat {:.6g}  val {:.6g}", r.epoch, r.total, r.lat,
                 r.val_total);
  });
  if (!log) throw IoError("failed writing " + log_path.string());
  if (result.stopped_early) spdlog::info("early stop after epoch {}", result.history.size());

  json extra{{"run_config", to_json(cfg)},
             {"best_epoch", result.best_epoch},
             {"best_val_L_total", result.best_val},
             {"steps", result.steps},
             {"dataset_checksum", m.checksum}};
  model::save_checkpoint(trainer.model(), out_dir / kCheckpointName, extra.dump());
  spdlog::info("best epoch {} (val {:.6g}) saved to {}", result.best_epoch, result.best_val,
               (out_dir / kCheckpointName).string());

  const auto leads = monitored_leads(cfg, m);
  TrainedRun run{std::move(result), trainer.model().clone(), {}, {}};
  run.val = trainer.mean_loss(data::Split::val, leads);
  if (ds.size(data::Split::test) > 0) run.test = trainer.mean_loss(data::Split::test, leads);
  return run;
}

}  // namespace

std::vector<double> parse_leads(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || !(v > 0.0)) {
      throw ConfigError("invalid lead time '" + item + "' in '" + text + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("no lead times given");
  return out;
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& text) {
  const auto x = text.find('x');
  auto parse = [&](const std::string& s) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw ConfigError("invalid grid '" + text + "' (expected HxW, e.g. 16x32)");
    }
    return static_cast<std::size_t>(std::stoul(s));
  };
  if (x == std::string::npos) throw ConfigError("invalid grid '" + text + "' (expected HxW)");
  return {parse(text.substr(0, x)), parse(text.substr(x + 1))};
}

std::string manifest_summary(const data::DatasetManifest& m) {
  std::string vars;
  for (const auto& v : m.var_names) vars += (vars.empty() ? "" : ",") + v;
  std::string leads;
  for (double l : m.lead_hours) leads += (leads.empty() ? "" : ",") + num(l);
  return fmt::format(
      "grid {}x{}  vars {}  leads {} h  samples {} (train {}, val {}, test {})  crc32 {:08x}",
      m.height, m.width, vars, leads, m.samples(), m.train.count, m.val.count, m.test.count,
      m.checksum);
}

data::DatasetManifest cmd_generate(const data::GeneratorParams& params, const fs::path& out) {
  params.validate();
  const auto stem = dataset_stem(out);
  const auto parent = stem.has_parent_path() ? stem.parent_path() : fs::path(".");
  // Fail before spending time on generation.
  if (!fs::is_directory(parent)) throw IoError("output directory does not exist: " + parent.string());
  const auto ds = data::generate_advection_dataset(params);
  data::save_dataset(ds, stem);
  spdlog::info("wrote {}.manifest / .bin", dataset_stem(out).string());
  return ds.manifest();
}

TrainResult cmd_train(RunConfig cfg, const fs::path& dataset, const fs::path& out_dir) {
  const auto ds = data::load_dataset(dataset_stem(dataset));
  return train_run(std::move(cfg), ds, out_dir).result;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "variable,lead_hours,rmse,acc\n";
  for (const auto& r : rows) {
    out += r.variable + ',' + num(r.lead_hours) + ',' + num(r.rmse) + ',' + num(r.acc) + '\n';
  }
  return out;
}

std::string train_log_csv(const std::vector<EpochRow>& rows) {
  std::string out = "epoch,L_total,L_lat,L_kinetic,L_thermo,val_L_total\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{}\n", r.epoch, num(r.total), num(r.lat), num(r.kinetic),
                       num(r.thermo), num(r.val_total));
  }
  return out;
}

std::optional<RunConfig> checkpoint_run_config(const fs::path& checkpoint) {
  std::string extra;
  model::load_checkpoint(checkpoint, &extra);
  const auto j = json::parse(extra);
  if (!j.contains("run_config")) return std::nullopt;
  return run_config_from_json(j.at("run_config"));
}

std::vector<MetricRow> cmd_eval(const EvalArgs& args) {
  const auto ds = data::load_dataset(dataset_stem(args.dataset));
  std::string extra = "{}";
  const auto model = model::load_checkpoint(args.checkpoint, &extra);
  const auto header = json::parse(extra);

  EvalOptions opts;
  opts.split = args.split;
  opts.threads = args.threads;
  opts.truth_as_prediction = args.truth_as_prediction;
  // Derivative attention mixes samples within a batch, so forecasts are only
  // reproducible with the batch size used in training.
  if (header.contains("run_config")) {
    opts.batch_size = run_config_from_json(header.at("run_config")).batch_size;
  }
  const auto& m = ds.manifest();
  if (header.contains("dataset_checksum") && header.at("dataset_checksum") != m.checksum) {
    spdlog::warn("checkpoint was trained on a dataset with a different checksum");
  }
  spdlog::info("evaluating {} split ({} samples) at {} lead times, batch {}",
               data::to_string(args.split), ds.size(args.split), args.leads.size(),
               opts.batch_size);

  const auto rows = evaluate(model, ds, args.leads, opts);
  write_text(args.out_csv, metrics_csv(rows));
  for (const auto& r : rows) {
    spdlog::info("{:>5s} {:5g} h  rmse {:.6g}  acc {:.6g}", r.variable, r.lead_hours, r.rmse,
                 r.acc);
  }

  if (args.dump_dir) {
    ensure_dir(*args.dump_dir);
    const std::vector<std::size_t> first{0};
    const auto x = ds.inputs(args.split, first);
    for (double lead : args.leads) {
      const auto truth = ds.targets(args.split, first, lead);
      const auto pred = args.truth_as_prediction ? truth : model.forecast(x, lead);
      for (std::size_t v = 0; v < m.vars(); ++v) {
        double lo = truth.at(0, v, 0, 0), hi = lo;
        for (std::size_t i = 0; i < m.height; ++i) {
          for (std::size_t j = 0; j < m.width; ++j) {
            lo = std::min(lo, truth.at(0, v, i, j));
            hi = std::max(hi, truth.at(0, v, i, j));
          }
        }
        const auto stem = fmt::format("lead{}_{}", num(lead), m.var_names[v]);
        write_ppm(*args.dump_dir / (stem + "_pred.ppm"), pred, v, lo, hi);
        write_ppm(*args.dump_dir / (stem + "_truth.ppm"), truth, v, lo, hi);
      }
    }
  }
  return rows;
}

std::string comparison_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,physics_loss,best_epoch,val_lat_rmse,test_L_kinetic,test_L_thermo\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{}\n", r.name, r.physics_loss ? 1 : 0, r.best_epoch,
                       num(r.val_lat_rmse), num(r.test_kinetic), num(r.test_thermo));
  }
  return out;
}

std::vector<AblationRow> cmd_ablate(const AblateArgs& args) {
  const auto ds = data::load_dataset(dataset_stem(args.dataset));
  if (ds.size(data::Split::test) == 0) throw ConfigError("ablation needs a non-empty test split");
  ensure_dir(args.out_dir);

  struct Run {
    std::string name;
    model::VariantSpec spec;
  };
  std::vector<Run> runs;
  for (auto v : model::kAllVariants) {
    runs.push_back({model::to_string(v), model::ablation_variant(args.base.model, v)});
  }
  if (args.mse_control) {
    auto spec = model::ablation_variant(args.base.model, model::Variant::full);
    spec.physics_loss = false;
    runs.push_back({"full_mse_only", spec});
  }

  std::vector<AblationRow> rows;
  for (const auto& run : runs) {
    RunConfig cfg = args.base;
    cfg.model = run.spec.model;
    cfg.physics_loss = run.spec.physics_loss;
    const fs::path dir = args.out_dir / run.name;
    spdlog::info("ablation run '{}'", run.name);
    const auto trained = train_run(cfg, ds, dir);

    EvalOptions opts;
    opts.batch_size = cfg.batch_size;
    opts.threads = args.threads;
    write_text(dir / "metrics.csv", metrics_csv(evaluate(trained.model, ds, args.leads, opts)));

    AblationRow row;
    row.name = run.name;
    row.physics_loss = cfg.physics_loss;
    row.best_epoch = trained.result.best_epoch;
    row.val_lat_rmse = std::sqrt(trained.val.lat);
    row.test_kinetic = trained.test.kinetic;
    row.test_thermo = trained.test.thermo;
    rows.push_back(row);
  }
  write_text(args.out_dir / "comparison.csv", comparison_csv(rows));
  return rows;
}

std::vector<checks::CheckReport> cmd_check(const std::string& mode) {
  std::vector<checks::CheckReport> out;
  const bool all = mode == "all";
  if (!all && mode != "grad" && mode != "ode" && mode != "attention" && mode != "physics") {
    throw ConfigError("unknown check '" + mode + "' (expected grad, ode, attention, physics or all)");
  }
  if (all || mode == "ode") out.push_back(checks::check_ode());
  if (all || mode == "attention") out.push_back(checks::check_attention());
  if (all || mode == "physics") out.push_back(checks::check_physics());
  if (all || mode == "grad") out.push_back(checks::check_grad());
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  const auto parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) throw IoError("output directory does not exist: " + parent.string());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace pinncast::cli
