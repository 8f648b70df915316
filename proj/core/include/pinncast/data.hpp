#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <string>
#include <vector>

#include "pinncast/tensor.hpp"

namespace pinncast::data {

/// A batch of gridded fields laid out (batch, variables, lat, lon).
struct GridField {
  std::size_t batch = 0, vars = 0, height = 0, width = 0;
  std::vector<double> values;
  std::vector<std::string> var_names;
  std::vector<double> lats;  // degrees, one per row
  std::vector<double> lons;  // degrees, one per column

  GridField() = default;
  GridField(std::size_t b, std::size_t v, std::size_t h, std::size_t w,
            std::vector<std::string> names, std::vector<double> lat, std::vector<double> lon);

  std::size_t index(std::size_t b, std::size_t v, std::size_t i, std::size_t j) const {
    return ((b * vars + v) * height + i) * width + j;
  }
  double& at(std::size_t b, std::size_t v, std::size_t i, std::size_t j) {
    return values[index(b, v, i, j)];
  }
  double at(std::size_t b, std::size_t v, std::size_t i, std::size_t j) const {
    return values[index(b, v, i, j)];
  }

  Shape shape() const { return {batch, vars, height, width}; }
  /// Throws on inconsistent metadata, |lat| > 90, or non-finite values.
  void validate() const;
  bool same_grid(const GridField& other) const;

  Tensor to_tensor() const;
  /// Values from `t` (shape (B, V, H, W)) with this field's metadata.
  GridField with_values(const Tensor& t) const;
};

/// Per-variable z-score statistics.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  void validate(std::size_t vars) const;
  bool operator==(const NormStats&) const = default;
};

GridField normalize(const GridField& x, const NormStats& stats);
GridField denormalize(const GridField& x, const NormStats& stats);

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& name);

/// Parameters of the synthetic advection generator. Winds are in grid cells
/// per hour, blob widths in grid cells.
struct GeneratorParams {
  std::uint64_t seed = 0;
  std::size_t height = 16;
  std::size_t width = 32;
  std::size_t n_samples = 256;
  std::size_t n_blobs = 4;
  double wind_scale = 0.1;
  double blob_sigma_min = 3.0;
  double blob_sigma_max = 6.0;
  double blob_amp_min = 2.0;
  double blob_amp_max = 8.0;
  double background = 280.0;
  std::vector<double> lead_hours{6, 12, 18, 24, 36};
  double val_fraction = 0.15;
  double test_fraction = 0.15;

  void validate() const;
  bool operator==(const GeneratorParams&) const = default;
};

struct SplitInfo {
  std::size_t first = 0;   // index of the first sample
  std::size_t count = 0;
  std::uint64_t byte_offset = 0;
  bool operator==(const SplitInfo&) const = default;
};

struct DatasetManifest {
  std::uint32_t format_version = 1;
  std::size_t height = 0, width = 0;
  std::vector<std::string> var_names;
  std::vector<double> lats, lons;
  /// Slot 0 of every sample is the state at t; slot s > 0 is t + lead_hours[s-1].
  std::vector<double> lead_hours;
  double time_step_hours = 0.0;
  SplitInfo train, val, test;
  NormStats stats;  // computed on the train split only
  bool synthetic = false;
  GeneratorParams generator;
  std::uint32_t checksum = 0;  // CRC-32 of the .bin payload

  std::size_t vars() const { return var_names.size(); }
  std::size_t slots() const { return lead_hours.size() + 1; }
  std::size_t samples() const { return train.count + val.count + test.count; }
  std::size_t values_per_sample() const { return slots() * vars() * height * width; }
  const SplitInfo& split(Split s) const;
  /// Slot index of `lead`, or throws ConfigError if the dataset lacks it.
  std::size_t lead_slot(double lead) const;
  void validate() const;
};

/// In-memory dataset: 32-bit values in C order (sample, slot, V, H, W).
class Dataset {
 public:
  Dataset() = default;
  Dataset(DatasetManifest manifest, std::vector<float> values);

  const DatasetManifest& manifest() const { return manifest_; }
  std::span<const float> values() const { return values_; }

  std::size_t size(Split s) const { return manifest_.split(s).count; }
  /// Fields at `slot` for the given split-relative sample indices.
  GridField slot_field(Split s, std::span<const std::size_t> indices, std::size_t slot) const;
  GridField inputs(Split s, std::span<const std::size_t> indices) const {
    return slot_field(s, indices, 0);
  }
  GridField targets(Split s, std::span<const std::size_t> indices, double lead) const {
    return slot_field(s, indices, manifest_.lead_slot(lead));
  }
  /// Every sample of a split at one slot.
  GridField all(Split s, std::size_t slot) const;

 private:
  DatasetManifest manifest_;
  std::vector<float> values_;
};

/// Statistics of all train-split values, both time slots included.
NormStats compute_train_stats(const DatasetManifest& manifest, std::span<const float> values);

/// Closed-form description of one generated sample.
struct Blob {
  double x0, y0, sigma_x, sigma_y, amplitude;
};
struct AdvectionSample {
  std::vector<Blob> blobs;
  double background = 0.0;
  // u(y) = s (cu + au sin(ku 2 pi y / H + pu)),  v(x) = s (cv + av cos(kv 2 pi x / W + pv))
  double scale = 0.0, cu = 0, au = 0, pu = 0, cv = 0, av = 0, pv = 0;
  double ku = 1, kv = 1;
  std::size_t height = 0, width = 0;

  double u(double y) const;
  double v(double x) const;
  /// Departure point of the trajectory arriving at (x, y) after `dt` hours.
  std::pair<double, double> departure(double x, double y, double dt) const;
  double temperature0(double x, double y) const;
  /// T(x, y, t) = T0(departure(x, y, t)).
  double temperature(double x, double y, double t) const;
};

AdvectionSample advection_sample(const GeneratorParams& params, std::size_t index);

/// Variable order of generated data.
inline const std::vector<std::string> kAdvectionVars{"t2m", "u10", "v10"};

std::vector<double> synthetic_latitudes(std::size_t height);
std::vector<double> synthetic_longitudes(std::size_t width);

Dataset generate_advection_dataset(const GeneratorParams& params);

/// Writes `<stem>.manifest` and `<stem>.bin`. The parent directory must exist.
void save_dataset(const Dataset& ds, const std::filesystem::path& stem);
Dataset load_dataset(const std::filesystem::path& stem);

std::uint32_t crc32(std::span<const unsigned char> bytes);

/// Seeded per-epoch permutation batching. The final partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t seed, bool shuffle = true);

  std::size_t batches_per_epoch() const;
  std::vector<std::vector<std::size_t>> epoch(std::size_t epoch_index) const;

 private:
  std::size_t n_, batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
};

}  // namespace pinncast::data
