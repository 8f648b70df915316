#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "commands.hpp"

using namespace pinncast;

namespace {

struct TrainFlags {
  std::string config;
  std::string dataset;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> lead_sampling;
  std::optional<double> train_lead;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> max_steps;
};

void add_train_flags(CLI::App* app, TrainFlags& f) {
  app->add_option("--config", f.config, "run config (JSON); missing keys keep defaults")
      ->check(CLI::ExistingFile);
  app->add_option("--dataset", f.dataset, "dataset stem or .manifest path")->required();
  app->add_option("--out", f.out, "output directory")->required();
  app->add_option("--seed", f.seed, "overrides the config seed");
  app->add_option("--lead-sampling", f.lead_sampling, "fixed or uniform")
      ->check(CLI::IsMember({"fixed", "uniform"}));
  app->add_option("--train-lead", f.train_lead, "lead time (hours) for fixed sampling");
  app->add_option("--epochs", f.epochs, "overrides the config epoch budget");
  app->add_option("--max-steps", f.max_steps, "cap on optimizer steps (0 = none)");
}

RunConfig run_config(const TrainFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.lead_sampling) {
    cfg.lead_sampling = *f.lead_sampling == "uniform" ? LeadSampling::uniform : LeadSampling::fixed;
  }
  if (f.train_lead) cfg.train_lead_hours = *f.train_lead;
  if (f.epochs) cfg.epochs = *f.epochs;
  if (f.max_steps) cfg.max_steps = *f.max_steps;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  cli::init_logging();
  CLI::App app{"Continuous-depth transformer forecaster with physics-constrained training"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic advection dataset");
  std::string gen_config, gen_out, gen_grid, gen_leads;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_samples;
  gen->add_option("--config", gen_config, "generator settings (JSON)")->check(CLI::ExistingFile);
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--grid", gen_grid, "HxW, e.g. 16x32");
  gen->add_option("--samples", gen_samples, "number of samples");
  gen->add_option("--lead-times", gen_leads, "comma-separated lead hours");
  gen->add_option("--out", gen_out, "output stem (writes <stem>.manifest and <stem>.bin)")
      ->required();

  // train
  auto* train = app.add_subcommand("train", "train a forecaster");
  TrainFlags train_flags;
  add_train_flags(train, train_flags);

  // eval
  auto* eval = app.add_subcommand("eval", "RMSE / ACC per variable and lead time");
  cli::EvalArgs eval_args;
  std::string eval_leads = "6,12,18,24,36", eval_split = "test", eval_dump;
  eval->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--dataset", eval_args.dataset, "dataset stem or .manifest path")->required();
  eval->add_option("--out", eval_args.out_csv, "metrics CSV path")->required();
  eval->add_option("--lead-times", eval_leads, "comma-separated lead hours")->capture_default_str();
  eval->add_option("--split", eval_split, "train, val or test")->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--device-threads", eval_args.threads, "forecast worker threads")->capture_default_str()
      ->check(CLI::PositiveNumber);
  eval->add_flag("--truth-as-prediction", eval_args.truth_as_prediction,
                 "score the truth against itself (debug)");
  eval->add_option("--dump-dir", eval_dump, "write PPM images of the first sample");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train and compare the four ablation variants");
  TrainFlags ablate_flags;
  add_train_flags(ablate, ablate_flags);
  std::string ablate_leads = "6,12,18,24,36";
  std::size_t ablate_threads = 1;
  bool mse_control = false;
  ablate->add_option("--lead-times", ablate_leads, "evaluation lead hours")->capture_default_str();
  ablate->add_option("--device-threads", ablate_threads, "evaluation worker threads")->capture_default_str()
      ->check(CLI::PositiveNumber);
  ablate->add_flag("--with-mse-control", mse_control,
                   "also train the full architecture without physics terms");

  // check
  auto* check = app.add_subcommand("check", "run an invariant suite");
  std::string check_mode;
  check->add_option("mode", check_mode, "grad, ode, attention, physics or all")
      ->required()
      ->check(CLI::IsMember({"grad", "ode", "attention", "physics", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  try {
    if (*gen) {
      data::GeneratorParams p =
          gen_config.empty() ? data::GeneratorParams{}
                             : generator_config_from_json(load_json_file(gen_config));
      if (gen_seed) p.seed = *gen_seed;
      if (!gen_grid.empty()) std::tie(p.height, p.width) = cli::parse_grid(gen_grid);
      if (gen_samples) p.n_samples = *gen_samples;
      if (!gen_leads.empty()) p.lead_hours = cli::parse_leads(gen_leads);
      std::cout << cli::manifest_summary(cli::cmd_generate(p, gen_out)) << '\n';
    } else if (*train) {
      const auto result = cli::cmd_train(run_config(train_flags), train_flags.dataset,
                                         train_flags.out);
      std::cout << "best epoch " << result.best_epoch << " of " << result.history.size()
                << ", val L_total " << result.best_val << '\n';
    } else if (*eval) {
      eval_args.leads = cli::parse_leads(eval_leads);
      eval_args.split = data::split_from_string(eval_split);
      if (!eval_dump.empty()) eval_args.dump_dir = eval_dump;
      const auto rows = cli::cmd_eval(eval_args);
      std::cout << cli::metrics_csv(rows);
    } else if (*ablate) {
      cli::AblateArgs a;
      a.base = run_config(ablate_flags);
      a.dataset = ablate_flags.dataset;
      a.out_dir = ablate_flags.out;
      a.leads = cli::parse_leads(ablate_leads);
      a.threads = ablate_threads;
      a.mse_control = mse_control;
      std::cout << cli::comparison_csv(cli::cmd_ablate(a));
    } else if (*check) {
      bool ok = true;
      for (const auto& report : cli::cmd_check(check_mode)) {
        std::cout << report.table() << '\n';
        ok = ok && report.passed();
      }
      std::cout << (ok ? "all checks passed" : "CHECK FAILED") << '\n';
      return ok ? cli::kOk : cli::kInvariant;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return cli::exit_code_for(e);
  }
  return cli::kOk;
}
