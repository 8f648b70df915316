#include "pinncast/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/crc.hpp>
#include <nlohmann/json.hpp>

#include "pinncast/errors.hpp"

namespace pinncast::data {

using nlohmann::json;

// ---------------------------------------------------------------------------
// GridField

GridField::GridField(std::size_t b, std::size_t v, std::size_t h, std::size_t w,
                     std::vector<std::string> names, std::vector<double> lat,
                     std::vector<double> lon)
    : batch(b),
      vars(v),
      height(h),
      width(w),
      values(b * v * h * w, 0.0),
      var_names(std::move(names)),
      lats(std::move(lat)),
      lons(std::move(lon)) {}

void GridField::validate() const {
  if (values.size() != batch * vars * height * width) {
    throw DimensionError("GridField holds " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape()));
  }
  if (var_names.size() != vars) throw DimensionError("GridField var_names/vars mismatch");
  if (lats.size() != height || lons.size() != width) {
    throw DimensionError("GridField latitude/longitude vectors do not match the grid");
  }
  for (double lat : lats) {
    if (!(std::fabs(lat) <= 90.0)) throw ConfigError("latitude outside [-90, 90]");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericalError("GridField contains non-finite values");
  }
}

bool GridField::same_grid(const GridField& o) const {
  return batch == o.batch && vars == o.vars && height == o.height && width == o.width;
}

Tensor GridField::to_tensor() const { return Tensor(shape(), values); }

GridField GridField::with_values(const Tensor& t) const {
  if (t.shape() != Shape{batch, vars, height, width}) {
    throw DimensionError("with_values: tensor " + shape_str(t.shape()) + " vs field " +
                         shape_str(shape()));
  }
  GridField out = *this;
  out.values.assign(t.data().begin(), t.data().end());
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

void NormStats::validate(std::size_t n_vars) const {
  if (mean.size() != n_vars || std.size() != n_vars) {
    throw ConfigError("normalization stats cover " + std::to_string(mean.size()) +
                      " variables, field has " + std::to_string(n_vars));
  }
  for (double s : std) {
    if (!(s > 0.0)) throw ConfigError("normalization std must be positive");
  }
}

namespace {

GridField per_variable(const GridField& x, const NormStats& stats, bool forward) {
  stats.validate(x.vars);
  GridField out = x;
  const std::size_t plane = x.height * x.width;
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t v = 0; v < x.vars; ++v) {
      double* p = out.values.data() + (b * x.vars + v) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        p[i] = forward ? (p[i] - stats.mean[v]) / stats.std[v] : p[i] * stats.std[v] + stats.mean[v];
      }
    }
  }
  return out;
}

}  // namespace

GridField normalize(const GridField& x, const NormStats& stats) {
  return per_variable(x, stats, true);
}

GridField denormalize(const GridField& x, const NormStats& stats) {
  return per_variable(x, stats, false);
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "'");
}

// ---------------------------------------------------------------------------
// Manifest

void GeneratorParams::validate() const {
  if (height < 8 || width < 8) throw ConfigError("generator grid must be at least 8x8");
  if (n_samples == 0) throw ConfigError("generator needs at least one sample");
  if (wind_scale < 0.0) throw ConfigError("wind_scale must be nonnegative");
  if (!(blob_sigma_min > 0.0 && blob_sigma_max >= blob_sigma_min)) {
    throw ConfigError("invalid blob width range");
  }
  if (blob_amp_max < blob_amp_min || blob_amp_min < 0.0) throw ConfigError("invalid blob amplitude range");
  if (lead_hours.empty()) throw ConfigError("generator needs at least one lead time");
  for (double l : lead_hours) {
    if (!(l > 0.0)) throw ConfigError("lead times must be positive");
  }
  if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction >= 1.0) {
    throw ConfigError("invalid split fractions");
  }
}

const SplitInfo& DatasetManifest::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

std::size_t DatasetManifest::lead_slot(double lead) const {
  for (std::size_t i = 0; i < lead_hours.size(); ++i) {
    if (lead_hours[i] == lead) return i + 1;
  }
  std::ostringstream os;
  os << "dataset has no lead time " << lead << "h (available:";
  for (double l : lead_hours) os << ' ' << l;
  os << ')';
  throw ConfigError(os.str());
}

void DatasetManifest::validate() const {
  if (height == 0 || width == 0 || var_names.empty()) throw FormatError("manifest: empty grid");
  if (lats.size() != height || lons.size() != width) {
    throw FormatError("manifest: coordinate vectors do not match the grid");
  }
  if (lead_hours.empty()) throw FormatError("manifest: no lead times");
  if (train.first != 0 || val.first != train.count || test.first != train.count + val.count) {
    throw FormatError("manifest: splits are not contiguous");
  }
  const std::uint64_t per = values_per_sample() * sizeof(float);
  if (train.byte_offset != 0 || val.byte_offset != val.first * per ||
      test.byte_offset != test.first * per) {
    throw FormatError("manifest: split byte offsets inconsistent with layout");
  }
  stats.validate(vars());
}

namespace {

json split_json(const SplitInfo& s) {
  return json{{"first", s.first}, {"count", s.count}, {"byte_offset", s.byte_offset}};
}

SplitInfo split_from_json(const json& j) {
  SplitInfo s;
  j.at("first").get_to(s.first);
  j.at("count").get_to(s.count);
  j.at("byte_offset").get_to(s.byte_offset);
  return s;
}

json generator_json(const GeneratorParams& g) {
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

GeneratorParams generator_from_json(const json& j) {
  GeneratorParams g;
  j.at("seed").get_to(g.seed);
  j.at("height").get_to(g.height);
  j.at("width").get_to(g.width);
  j.at("n_samples").get_to(g.n_samples);
  j.at("n_blobs").get_to(g.n_blobs);
  j.at("wind_scale").get_to(g.wind_scale);
  j.at("blob_sigma_min").get_to(g.blob_sigma_min);
  j.at("blob_sigma_max").get_to(g.blob_sigma_max);
  j.at("blob_amp_min").get_to(g.blob_amp_min);
  j.at("blob_amp_max").get_to(g.blob_amp_max);
  j.at("background").get_to(g.background);
  j.at("lead_hours").get_to(g.lead_hours);
  j.at("val_fraction").get_to(g.val_fraction);
  j.at("test_fraction").get_to(g.test_fraction);
  return g;
}

constexpr const char* kManifestMagic = "PINNCAST-DATASET";

json manifest_json(const DatasetManifest& m) {
  json j{{"magic", kManifestMagic},
         {"format_version", m.format_version},
         {"layout", "sample,slot,var,lat,lon float32 little-endian"},
         {"height", m.height},
         {"width", m.width},
         {"variables", m.var_names},
         {"lats", m.lats},
         {"lons", m.lons},
         {"lead_hours", m.lead_hours},
         {"time_step_hours", m.time_step_hours},
         {"splits", {{"train", split_json(m.train)}, {"val", split_json(m.val)}, {"test", split_json(m.test)}}},
         {"stats", {{"mean", m.stats.mean}, {"std", m.stats.std}}},
         {"synthetic", m.synthetic},
         {"checksum_crc32", m.checksum}};
  if (m.synthetic) j["generator"] = generator_json(m.generator);
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  if (!j.is_object() || j.value("magic", std::string()) != kManifestMagic) {
    throw FormatError("manifest: bad magic");
  }
  DatasetManifest m;
  j.at("format_version").get_to(m.format_version);
  if (m.format_version != 1) {
    throw FormatError("manifest: unsupported format version " + std::to_string(m.format_version));
  }
  j.at("height").get_to(m.height);
  j.at("width").get_to(m.width);
  j.at("variables").get_to(m.var_names);
  j.at("lats").get_to(m.lats);
  j.at("lons").get_to(m.lons);
  j.at("lead_hours").get_to(m.lead_hours);
  j.at("time_step_hours").get_to(m.time_step_hours);
  const json& s = j.at("splits");
  m.train = split_from_json(s.at("train"));
  m.val = split_from_json(s.at("val"));
  m.test = split_from_json(s.at("test"));
  j.at("stats").at("mean").get_to(m.stats.mean);
  j.at("stats").at("std").get_to(m.stats.std);
  j.at("synthetic").get_to(m.synthetic);
  if (m.synthetic) m.generator = generator_from_json(j.at("generator"));
  j.at("checksum_crc32").get_to(m.checksum);
  return m;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(DatasetManifest manifest, std::vector<float> values)
    : manifest_(std::move(manifest)), values_(std::move(values)) {
  if (values_.size() != manifest_.samples() * manifest_.values_per_sample()) {
    throw LengthError("dataset payload holds " + std::to_string(values_.size()) +
                      " values, manifest expects " +
                      std::to_string(manifest_.samples() * manifest_.values_per_sample()));
  }
}

GridField Dataset::slot_field(Split s, std::span<const std::size_t> indices,
                              std::size_t slot) const {
  const auto& m = manifest_;
  const SplitInfo& info = m.split(s);
  if (slot >= m.slots()) throw ConfigError("slot index out of range");
  GridField out(indices.size(), m.vars(), m.height, m.width, m.var_names, m.lats, m.lons);
  const std::size_t block = m.vars() * m.height * m.width;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= info.count) {
      throw ConfigError("sample index " + std::to_string(indices[b]) + " outside " +
                        to_string(s) + " split");
    }
    const std::size_t sample = info.first + indices[b];
    const float* src = values_.data() + (sample * m.slots() + slot) * block;
    std::copy_n(src, block, out.values.begin() + static_cast<std::ptrdiff_t>(b * block));
  }
  return out;
}

GridField Dataset::all(Split s, std::size_t slot) const {
  std::vector<std::size_t> idx(size(s));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return slot_field(s, idx, slot);
}

NormStats compute_train_stats(const DatasetManifest& m, std::span<const float> values) {
  const std::size_t plane = m.height * m.width;
  NormStats st;
  st.mean.assign(m.vars(), 0.0);
  st.std.assign(m.vars(), 0.0);
  const double count = static_cast<double>(m.train.count * m.slots() * plane);
  for (std::size_t v = 0; v < m.vars(); ++v) {
    double acc = 0.0;
    for (std::size_t n = 0; n < m.train.count; ++n) {
      for (std::size_t s = 0; s < m.slots(); ++s) {
        const float* p = values.data() + ((n * m.slots() + s) * m.vars() + v) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
    }
    const double mu = acc / count;
    double sq = 0.0;
    for (std::size_t n = 0; n < m.train.count; ++n) {
      for (std::size_t s = 0; s < m.slots(); ++s) {
        const float* p = values.data() + ((n * m.slots() + s) * m.vars() + v) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
    }
    st.mean[v] = mu;
    st.std[v] = std::sqrt(sq / count);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Synthetic advection generator

double AdvectionSample::u(double y) const {
  return scale * (cu + au * std::sin(ku * 2.0 * std::numbers::pi * y / static_cast<double>(height) + pu));
}

double AdvectionSample::v(double x) const {
  return scale * (cv + av * std::cos(kv * 2.0 * std::numbers::pi * x / static_cast<double>(width) + pv));
}

std::pair<double, double> AdvectionSample::departure(double x, double y, double dt) const {
  // Integrate the trajectory backwards: dX/ds = -u(Y), dY/ds = -v(X).
  constexpr int kSubsteps = 64;
  const double h = dt / kSubsteps;
  for (int s = 0; s < kSubsteps; ++s) {
    const double k1x = -u(y), k1y = -v(x);
    const double k2x = -u(y + 0.5 * h * k1y), k2y = -v(x + 0.5 * h * k1x);
    const double k3x = -u(y + 0.5 * h * k2y), k3y = -v(x + 0.5 * h * k2x);
    const double k4x = -u(y + h * k3y), k4y = -v(x + h * k3x);
    x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
  }
  return {x, y};
}

double AdvectionSample::temperature0(double x, double y) const {
  double t = background;
  for (const Blob& b : blobs) {
    const double dx = (x - b.x0) / b.sigma_x;
    const double dy = (y - b.y0) / b.sigma_y;
    t += b.amplitude * std::exp(-0.5 * (dx * dx + dy * dy));
  }
  return t;
}

double AdvectionSample::temperature(double x, double y, double t) const {
  if (t == 0.0 || scale == 0.0) return temperature0(x, y);
  const auto [x0, y0] = departure(x, y, t);
  return temperature0(x0, y0);
}

AdvectionSample advection_sample(const GeneratorParams& p, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(p.seed), static_cast<std::uint32_t>(p.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  AdvectionSample s;
  s.height = p.height;
  s.width = p.width;
  s.background = p.background;
  for (std::size_t b = 0; b < p.n_blobs; ++b) {
    Blob blob{};
    blob.x0 = uniform(0.0, static_cast<double>(p.width));
    blob.y0 = uniform(0.0, static_cast<double>(p.height));
    blob.sigma_x = uniform(p.blob_sigma_min, p.blob_sigma_max);
    blob.sigma_y = uniform(p.blob_sigma_min, p.blob_sigma_max);
    blob.amplitude = uniform(p.blob_amp_min, p.blob_amp_max) * (unit(rng) < 0.5 ? -1.0 : 1.0);
    s.blobs.push_back(blob);
  }
  // Mean flow of magnitude 0.6 s in a random direction plus a sinusoidal
  // shear of at most 0.4 s per component, so |u|, |v| <= s.
  const double theta = uniform(0.0, 2.0 * std::numbers::pi);
  s.scale = p.wind_scale;
  s.cu = 0.6 * std::cos(theta);
  s.cv = 0.6 * std::sin(theta);
  s.au = uniform(0.0, 0.4);
  s.av = uniform(0.0, 0.4);
  s.pu = uniform(0.0, 2.0 * std::numbers::pi);
  s.pv = uniform(0.0, 2.0 * std::numbers::pi);
  s.ku = unit(rng) < 0.5 ? 1.0 : 2.0;
  s.kv = unit(rng) < 0.5 ? 1.0 : 2.0;
  return s;
}

std::vector<double> synthetic_latitudes(std::size_t height) {
  constexpr double kEdge = 87.1875;
  std::vector<double> lats(height);
  for (std::size_t i = 0; i < height; ++i) {
    lats[i] = height == 1 ? 0.0
                          : -kEdge + 2.0 * kEdge * static_cast<double>(i) /
                                         static_cast<double>(height - 1);
  }
  return lats;
}

std::vector<double> synthetic_longitudes(std::size_t width) {
  std::vector<double> lons(width);
  for (std::size_t j = 0; j < width; ++j) lons[j] = 360.0 * static_cast<double>(j) / static_cast<double>(width);
  return lons;
}

Dataset generate_advection_dataset(const GeneratorParams& p) {
  p.validate();
  DatasetManifest m;
  m.height = p.height;
  m.width = p.width;
  m.var_names = kAdvectionVars;
  m.lats = synthetic_latitudes(p.height);
  m.lons = synthetic_longitudes(p.width);
  m.lead_hours = p.lead_hours;
  m.time_step_hours = *std::min_element(p.lead_hours.begin(), p.lead_hours.end());
  m.synthetic = true;
  m.generator = p;

  const auto n = p.n_samples;
  const auto n_test = static_cast<std::size_t>(std::llround(p.test_fraction * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(p.val_fraction * static_cast<double>(n)));
  if (n_test + n_val >= n) throw ConfigError("split fractions leave no training samples");
  const std::uint64_t per = m.values_per_sample() * sizeof(float);
  m.train = {0, n - n_val - n_test, 0};
  m.val = {m.train.count, n_val, m.train.count * per};
  m.test = {m.train.count + n_val, n_test, (m.train.count + n_val) * per};

  const std::size_t h = p.height, w = p.width, plane = h * w, vars = m.vars();
  std::vector<float> values(n * m.values_per_sample());
  for (std::size_t sidx = 0; sidx < n; ++sidx) {
    const AdvectionSample s = advection_sample(p, sidx);
    for (std::size_t slot = 0; slot < m.slots(); ++slot) {
      const double t = slot == 0 ? 0.0 : p.lead_hours[slot - 1];
      float* base = values.data() + (sidx * m.slots() + slot) * vars * plane;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const double x = static_cast<double>(j), y = static_cast<double>(i);
          base[0 * plane + i * w + j] = static_cast<float>(s.temperature(x, y, t));
          base[1 * plane + i * w + j] = static_cast<float>(s.u(y));
          base[2 * plane + i * w + j] = static_cast<float>(s.v(x));
        }
      }
    }
  }
  m.stats = compute_train_stats(m, values);
  // A variable that is constant over the train split (e.g. zero wind) is
  // centered only.
  for (auto& sd : m.stats.std) {
    if (!(sd > 0.0)) sd = 1.0;
  }
  std::vector<unsigned char> bytes(values.size() * sizeof(float));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  m.checksum = crc32(bytes);
  return Dataset(std::move(m), std::move(values));
}

std::uint32_t crc32(std::span<const unsigned char> bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

// ---------------------------------------------------------------------------
// Persistence

void save_dataset(const Dataset& ds, const std::filesystem::path& stem) {
  const auto parent = stem.has_parent_path() ? stem.parent_path() : std::filesystem::path(".");
  if (!std::filesystem::is_directory(parent)) {
    throw IoError("output directory does not exist: " + parent.string());
  }
  const auto vals = ds.values();
  std::vector<unsigned char> bytes(vals.size() * sizeof(float));
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(vals[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  DatasetManifest m = ds.manifest();
  m.checksum = crc32(bytes);

  const auto bin_path = with_suffix(stem, ".bin");
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write " + bin_path.string());
  bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!bin) throw IoError("failed writing " + bin_path.string());

  const auto man_path = with_suffix(stem, ".manifest");
  std::ofstream man(man_path, std::ios::trunc);
  if (!man) throw IoError("cannot write " + man_path.string());
  man << manifest_json(m).dump(2) << '\n';
  if (!man) throw IoError("failed writing " + man_path.string());
}

Dataset load_dataset(const std::filesystem::path& stem) {
  const auto man_path = with_suffix(stem, ".manifest");
  std::ifstream man(man_path);
  if (!man) throw IoError("cannot open " + man_path.string());
  DatasetManifest m;
  try {
    m = manifest_from_json(json::parse(man));
  } catch (const json::exception& e) {
    throw FormatError("corrupt manifest " + man_path.string() + ": " + e.what());
  }
  m.validate();

  const auto bin_path = with_suffix(stem, ".bin");
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open " + bin_path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)),
                                   std::istreambuf_iterator<char>());
  const std::uint64_t expected = m.samples() * m.values_per_sample() * sizeof(float);
  if (bytes.size() != expected) {
    throw LengthError(bin_path.string() + " holds " + std::to_string(bytes.size()) +
                      " bytes, manifest expects " + std::to_string(expected));
  }
  if (crc32(bytes) != m.checksum) throw FormatError("checksum mismatch for " + bin_path.string());
  std::vector<float> values(bytes.size() / sizeof(float));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    values[i] = std::bit_cast<float>(u);
  }
  return Dataset(std::move(m), std::move(values));
}

// ---------------------------------------------------------------------------
// Batching

BatchIterator::BatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                             bool shuffle)
    : n_(n), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (n_ + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch(std::size_t epoch_index) const {
  std::vector<std::size_t> order(n_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(epoch_index), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n_; i += batch_size_) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n_, i + batch_size_)));
  }
  return batches;
}

}  // namespace pinncast::data
