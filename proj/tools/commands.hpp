#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pinncast/checks.hpp"
#include "pinncast/config.hpp"
#include "pinncast/data.hpp"
#include "pinncast/train.hpp"

namespace pinncast::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kInvariant = 2, kNumerical = 3 };

/// Maps a library error to the process exit status.
int exit_code_for(const std::exception& e);

/// Sets the stderr logger level from PINNCAST_LOG (error, info, debug).
void init_logging();

inline const std::vector<double> kDefaultLeads{6, 12, 18, 24, 36};

/// Parses "6,12,18".
std::vector<double> parse_leads(const std::string& text);
/// Parses "16x32" into (height, width).
std::pair<std::size_t, std::size_t> parse_grid(const std::string& text);

std::string manifest_summary(const data::DatasetManifest& m);

// generate ------------------------------------------------------------------

/// Writes `<out>.manifest` and `<out>.bin`; `out`'s directory must exist.
data::DatasetManifest cmd_generate(const data::GeneratorParams& params, const fs::path& out);

// train ---------------------------------------------------------------------

inline constexpr const char* kCheckpointName = "model.ckpt";
inline constexpr const char* kTrainLogName = "train_log.csv";
inline constexpr const char* kConfigName = "config.json";

/// The model grid is taken from the dataset. Writes config.json,
/// train_log.csv and the best-validation checkpoint into `out_dir`.
TrainResult cmd_train(RunConfig cfg, const fs::path& dataset, const fs::path& out_dir);

// eval ----------------------------------------------------------------------

struct EvalArgs {
  fs::path checkpoint;
  fs::path dataset;
  std::vector<double> leads = kDefaultLeads;
  fs::path out_csv;
  data::Split split = data::Split::test;
  std::size_t threads = 1;
  bool truth_as_prediction = false;
  /// When set, writes predicted and true fields of the first sample as PPM.
  std::optional<fs::path> dump_dir;
};

/// Metrics CSV with header `variable,lead_hours,rmse,acc`.
std::vector<MetricRow> cmd_eval(const EvalArgs& args);

std::string metrics_csv(const std::vector<MetricRow>& rows);
std::string train_log_csv(const std::vector<EpochRow>& rows);

// ablate --------------------------------------------------------------------

struct AblationRow {
  std::string name;
  bool physics_loss = false;
  std::size_t best_epoch = 0;
  double val_lat_rmse = 0.0;   // sqrt of the val-split lat-weighted MSE (normalized units)
  double test_kinetic = 0.0;   // kinetic-energy error on the test split (physical units)
  double test_thermo = 0.0;
};

struct AblateArgs {
  RunConfig base;
  fs::path dataset;
  fs::path out_dir;
  std::vector<double> leads = kDefaultLeads;
  std::size_t threads = 1;
  /// Adds a fifth run: the full architecture trained without physics terms.
  bool mse_control = false;
};

/// Trains each variant under the same seed and budget, evaluates it, and
/// writes `<out>/<variant>/` run directories plus `<out>/comparison.csv`.
std::vector<AblationRow> cmd_ablate(const AblateArgs& args);

std::string comparison_csv(const std::vector<AblationRow>& rows);

// check ---------------------------------------------------------------------

/// mode: grad, ode, attention, physics or all.
std::vector<checks::CheckReport> cmd_check(const std::string& mode);

/// Reads a checkpoint's training config from its extra header, if present.
std::optional<RunConfig> checkpoint_run_config(const fs::path& checkpoint);

/// Whole file as a string; IoError naming the path on failure.
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace pinncast::cli
