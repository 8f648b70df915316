#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>

#include "pinncast/data.hpp"
#include "pinncast/errors.hpp"

using namespace pinncast;
namespace fs = std::filesystem;

namespace {

data::GeneratorParams small_params(std::uint64_t seed = 3) {
  data::GeneratorParams p;
  p.seed = seed;
  p.height = 8;
  p.width = 16;
  p.n_samples = 20;
  p.lead_hours = {6.0, 12.0};
  return p;
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("pinncast_test_data_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& f, const std::string& s) {
  std::ofstream(f, std::ios::binary | std::ios::trunc) << s;
}

}  // namespace

TEST(Crc32, StandardCheckValue) {
  const std::string s = "123456789";
  EXPECT_EQ(data::crc32({reinterpret_cast<const unsigned char*>(s.data()), s.size()}), 0xCBF43926u);
}

TEST(Generator, DeterministicAndSeedSensitive) {
  const auto a = data::generate_advection_dataset(small_params());
  const auto b = data::generate_advection_dataset(small_params());
  const auto c = data::generate_advection_dataset(small_params(4));
  ASSERT_EQ(a.values().size(), b.values().size());
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  EXPECT_FALSE(std::equal(a.values().begin(), a.values().end(), c.values().begin()));
  EXPECT_EQ(a.manifest().stats, b.manifest().stats);
}

TEST(Generator, LayoutSplitsAndWindBounds) {
  const auto p = small_params();
  const auto ds = data::generate_advection_dataset(p);
  const auto& m = ds.manifest();
  EXPECT_EQ(m.var_names, data::kAdvectionVars);
  EXPECT_EQ(m.slots(), 3u);
  EXPECT_EQ(m.samples(), 20u);
  EXPECT_EQ(m.val.count, 3u);
  EXPECT_EQ(m.test.count, 3u);
  EXPECT_EQ(m.lats.front(), -87.1875);
  EXPECT_EQ(m.lats.back(), 87.1875);
  EXPECT_EQ(ds.values().size(), 20u * 3 * 3 * 8 * 16);
  EXPECT_THROW(m.lead_slot(18.0), ConfigError);

  // Winds are identical in every slot and bounded by wind_scale.
  for (data::Split s : {data::Split::train, data::Split::val, data::Split::test}) {
    const auto x = ds.all(s, 0), y = ds.all(s, 2);
    for (std::size_t k = 0; k < x.batch; ++k) {
      for (std::size_t v = 1; v < 3; ++v) {
        for (std::size_t i = 0; i < 8; ++i) {
          for (std::size_t j = 0; j < 16; ++j) {
            EXPECT_EQ(x.at(k, v, i, j), y.at(k, v, i, j));
            EXPECT_LE(std::fabs(x.at(k, v, i, j)), p.wind_scale * (1.0 + 1e-6));
          }
        }
      }
    }
  }
}

TEST(Generator, ZeroWindKeepsTemperature) {
  auto p = small_params();
  p.wind_scale = 0.0;
  const auto ds = data::generate_advection_dataset(p);
  const auto x = ds.all(data::Split::train, 0), y = ds.all(data::Split::train, 2);
  EXPECT_EQ(x.values, y.values);
}

TEST(Generator, TemperatureWithinBlobBounds) {
  const auto p = small_params();
  const auto ds = data::generate_advection_dataset(p);
  const double bound = p.background + static_cast<double>(p.n_blobs) * p.blob_amp_max;
  const double lower = p.background - static_cast<double>(p.n_blobs) * p.blob_amp_max;
  const auto x = ds.all(data::Split::train, 1);
  for (std::size_t k = 0; k < x.batch; ++k) {
    for (std::size_t c = 0; c < 8 * 16; ++c) {
      const double t = x.values[k * 3 * 128 + c];
      EXPECT_LE(t, bound);
      EXPECT_GE(t, lower);
    }
  }
}

TEST(Normalize, RoundTripCenteringAndTrainStats) {
  const auto ds = data::generate_advection_dataset(small_params());
  const auto& m = ds.manifest();
  const auto x = ds.all(data::Split::val, 1);
  const auto back = data::denormalize(data::normalize(x, m.stats), m.stats);
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    EXPECT_NEAR(back.values[i], x.values[i], 1e-12 * std::fabs(x.values[i]));
  }

  auto constant = x;
  for (std::size_t k = 0; k < x.batch; ++k) {
    for (std::size_t v = 0; v < 3; ++v) {
      for (std::size_t c = 0; c < 128; ++c) constant.values[(k * 3 + v) * 128 + c] = m.stats.mean[v];
    }
  }
  for (double v : data::normalize(constant, m.stats).values) EXPECT_EQ(v, 0.0);

  for (std::size_t v = 0; v < 3; ++v) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < m.slots(); ++s) {
      const auto z = data::normalize(ds.all(data::Split::train, s), m.stats);
      for (std::size_t k = 0; k < z.batch; ++k) {
        for (std::size_t c = 0; c < 128; ++c, ++count) sum += z.values[(k * 3 + v) * 128 + c];
      }
    }
    EXPECT_LT(std::fabs(sum / static_cast<double>(count)), 1e-10) << v;
  }

  data::NormStats bad = m.stats;
  bad.std[1] = 0.0;
  EXPECT_THROW(data::normalize(x, bad), ConfigError);
}

TEST(Persistence, RoundTripIsBitExactAndFilesAreStable) {
  const auto dir = temp_dir("roundtrip");
  const auto ds = data::generate_advection_dataset(small_params());
  data::save_dataset(ds, dir / "a");
  const auto back = data::load_dataset(dir / "a");
  EXPECT_TRUE(std::equal(ds.values().begin(), ds.values().end(), back.values().begin(),
                         back.values().end(), [](float x, float y) {
                           return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
                         }));
  EXPECT_EQ(back.manifest().stats, ds.manifest().stats);
  EXPECT_EQ(back.manifest().generator, ds.manifest().generator);
  EXPECT_EQ(back.manifest().lats, ds.manifest().lats);
  EXPECT_NE(back.manifest().checksum, 0u);

  data::save_dataset(back, dir / "b");
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
  EXPECT_EQ(slurp(dir / "a.manifest"), slurp(dir / "b.manifest"));
  fs::remove_all(dir);
}

TEST(Persistence, Errors) {
  const auto dir = temp_dir("errors");
  const auto ds = data::generate_advection_dataset(small_params());
  EXPECT_THROW(data::save_dataset(ds, dir / "missing" / "x"), IoError);
  EXPECT_THROW(data::load_dataset(dir / "nothing"), IoError);

  data::save_dataset(ds, dir / "d");
  const std::string bin = slurp(dir / "d.bin"), man = slurp(dir / "d.manifest");

  spit(dir / "d.bin", bin.substr(0, bin.size() - 4));
  EXPECT_THROW(data::load_dataset(dir / "d"), LengthError);

  std::string flipped = bin;
  flipped[100] = static_cast<char>(flipped[100] ^ 0x01);
  spit(dir / "d.bin", flipped);
  EXPECT_THROW(data::load_dataset(dir / "d"), FormatError);

  spit(dir / "d.bin", bin);
  spit(dir / "d.manifest", "{ not json");
  EXPECT_THROW(data::load_dataset(dir / "d"), FormatError);
  std::string wrong_magic = man;
  wrong_magic.replace(wrong_magic.find("PINNCAST"), 8, "XXXXXXXX");
  spit(dir / "d.manifest", wrong_magic);
  EXPECT_THROW(data::load_dataset(dir / "d"), FormatError);

  spit(dir / "d.manifest", man);
  EXPECT_NO_THROW(data::load_dataset(dir / "d"));
  fs::remove_all(dir);
}

TEST(Batching, CountsDeterminismAndCoverage) {
  const data::BatchIterator it(23, 5, 9), same(23, 5, 9), other(23, 5, 10);
  EXPECT_EQ(it.batches_per_epoch(), 5u);
  const auto e0 = it.epoch(0);
  ASSERT_EQ(e0.size(), 5u);
  EXPECT_EQ(e0.back().size(), 3u);
  EXPECT_EQ(e0, same.epoch(0));
  EXPECT_NE(e0, it.epoch(1));
  EXPECT_NE(e0, other.epoch(0));
  std::set<std::size_t> seen;
  for (const auto& b : e0) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen.size(), 23u);

  const auto ordered = data::BatchIterator(7, 7, 1, false).epoch(3);
  std::vector<std::size_t> iota(7);
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  EXPECT_EQ(ordered, (std::vector<std::vector<std::size_t>>{iota}));
  EXPECT_THROW(data::BatchIterator(3, 0, 1), ConfigError);
}

TEST(GridField, ValidationAndSlicing) {
  const auto ds = data::generate_advection_dataset(small_params());
  const std::vector<std::size_t> idx{2, 0};
  const auto x = ds.inputs(data::Split::test, idx);
  EXPECT_EQ(x.shape(), (Shape{2, 3, 8, 16}));
  EXPECT_EQ(x.lats, ds.manifest().lats);
  const auto all = ds.all(data::Split::test, 0);
  for (std::size_t c = 0; c < 3 * 128; ++c) {
    EXPECT_EQ(x.values[c], all.values[2 * 3 * 128 + c]);
    EXPECT_EQ(x.values[3 * 128 + c], all.values[c]);
  }
  EXPECT_THROW(ds.inputs(data::Split::test, std::vector<std::size_t>{3}), ConfigError);

  auto bad = x;
  bad.lats[0] = 95.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = x;
  bad.values[5] = std::nan("");
  EXPECT_THROW(bad.validate(), NumericalError);
  bad = x;
  bad.values.pop_back();
  EXPECT_THROW(bad.validate(), DimensionError);
  EXPECT_THROW(data::split_from_string("holdout"), ConfigError);
}
