#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <json.hpp>

#include "snnrtrl/errors.hpp"
#include "snnrtrl/taskgen.hpp"

using namespace snnrtrl;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("snnrtrl_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

void check_split_sizes(const TrialSet& set, const SplitSpec& split) {
  const double n = static_cast<double>(set.size());
  CHECK(std::abs(static_cast<double>(set.indices(Split::train).size()) - split.train * n) <= 1.0);
  CHECK(std::abs(static_cast<double>(set.indices(Split::valid).size()) - split.valid * n) <= 1.0);
  CHECK(set.indices(Split::train).size() + set.indices(Split::valid).size() + set.indices(Split::test).size() ==
        set.size());
  std::set<std::size_t> seen;
  for (Split s : {Split::train, Split::valid, Split::test}) {
    for (std::size_t i : set.indices(s)) CHECK(seen.insert(i).second);
  }
}

}  // namespace

TEST_CASE("latency encoding") {
  Eigen::VectorXd v(3);
  v << 0.5, 1.0, 0.0;
  const Raster r = latency_encode(v, 100);
  CHECK(r.at(50, 0));
  CHECK(r.at(0, 1));
  CHECK(r.at(99, 2));
  CHECK(r.spike_count() == 3);

  const Raster silent = latency_encode(v, 100, true);
  CHECK(silent.spike_count() == 2);
  for (int t = 0; t < 100; ++t) CHECK_FALSE(silent.at(t, 2));

  // half-way points round to the even step
  Eigen::VectorXd h(1);
  h << 0.5;
  CHECK(latency_encode(h, 4).at(2, 0));  // 1.5 -> 2
  CHECK(latency_encode(h, 6).at(2, 0));  // 2.5 -> 2

  Eigen::VectorXd bad(1);
  bad << 1.5;
  CHECK_THROWS_AS(latency_encode(bad, 10), ParameterError);
  bad << -0.1;
  CHECK_THROWS_AS(latency_encode(bad, 10), ParameterError);
}

TEST_CASE("randman with one frequency is a sinusoid of the latent coordinate") {
  RandmanSpec spec;
  spec.manifold_dim = 1;
  spec.smoothness = 1;
  spec.embedding_dim = 6;
  spec.n_classes = 2;
  spec.seed = 17;
  const RandmanModel model = randman_model(spec);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double x = unit(rng);
    const int c = trial % 2;
    const Raster r = randman_sample(model, c, {x});
    for (int i = 0; i < 6; ++i) {
      const double a = model.amplitude[model.index(c, i, 0, 0)];
      const double p = model.phase[model.index(c, i, 0, 0)];
      const double value = (a * std::sin(2.0 * std::numbers::pi * x + p) + std::abs(a)) / (2.0 * std::abs(a));
      const int step = static_cast<int>(std::nearbyint(value * (spec.steps() - 1)));
      CHECK(r.at(step, i));
    }
  }
}

TEST_CASE("randman emits one spike per input neuron") {
  RandmanSpec spec;
  spec.samples_per_class = 20;
  const TrialSet set = randman_generate(spec);
  CHECK(set.size() == 80);
  CHECK(set.steps == 50);
  for (const Raster& r : set.rasters) {
    CHECK(r.steps() == 50);
    for (int i = 0; i < r.channels(); ++i) {
      int n = 0;
      for (int t = 0; t < r.steps(); ++t) n += r.at(t, i);
      CHECK(n == 1);
    }
  }
}

TEST_CASE("randman samples depend only on class and latent point") {
  RandmanSpec spec;
  spec.seed = 4;
  const RandmanModel model = randman_model(spec);
  const std::vector<double> x{0.3, 0.71};
  CHECK(randman_sample(model, 2, x) == randman_sample(model, 2, x));
  CHECK(randman_sample(randman_model(spec), 2, x) == randman_sample(model, 2, x));
}

TEST_CASE("single-class randman labels everything 0") {
  RandmanSpec spec;
  spec.n_classes = 1;
  spec.samples_per_class = 15;
  for (int l : randman_generate(spec).labels) CHECK(l == 0);
}

TEST_CASE("randman rejects a window shorter than dt") {
  RandmanSpec spec;
  spec.time_window = 0.5;
  CHECK_THROWS_AS(randman_generate(spec), ConfigError);
  spec = RandmanSpec{};
  spec.embedding_dim = 1;
  CHECK_THROWS_AS(randman_model(spec), ConfigError);
}

TEST_CASE("generators are deterministic in their seed") {
  RandmanSpec rs;
  rs.samples_per_class = 10;
  const TrialSet a = randman_generate(rs), b = randman_generate(rs);
  CHECK(a.rasters == b.rasters);
  CHECK(a.labels == b.labels);
  CHECK(a.splits == b.splits);
  rs.seed = 1;
  CHECK_FALSE(randman_generate(rs).rasters == a.rasters);

  MemoryTaskSpec ms;
  ms.gap = 7;
  ms.samples_per_class = 10;
  CHECK(memory_stress_task(ms).rasters == memory_stress_task(ms).rasters);

  LatencySpec ls;
  ls.samples_per_class = 10;
  CHECK(latency_task(ls).rasters == latency_task(ls).rasters);

  TrackingSpec ts;
  ts.trials = 6;
  const TrialSet t1 = tracking_task(ts), t2 = tracking_task(ts);
  CHECK(t1.rasters == t2.rasters);
  CHECK(t1.target_rasters == t2.target_rasters);
}

TEST_CASE("splits are disjoint and proportional") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> frac(0.0, 0.5);
  std::uniform_int_distribution<int> count(1, 40);
  for (int trial = 0; trial < 40; ++trial) {
    RandmanSpec spec;
    spec.samples_per_class = count(rng);
    spec.split.train = frac(rng);
    spec.split.valid = frac(rng);
    spec.seed = static_cast<std::uint64_t>(trial);
    check_split_sizes(randman_generate(spec), spec.split);
  }
  TrialSet set;
  set.rasters.resize(4);
  CHECK_THROWS_AS(assign_splits(set, SplitSpec{0.8, 0.5}, 0), ConfigError);
}

TEST_CASE("memory task layout") {
  MemoryTaskSpec spec;
  spec.gap = 0;
  spec.noise_rate = 0.0;
  spec.samples_per_class = 5;
  spec.n_classes = 4;
  const TrialSet set = memory_stress_task(spec);
  CHECK(set.steps == spec.cue_steps + spec.query_steps);
  const int recall = spec.n_in - 1;
  for (const Raster& r : set.rasters) {
    for (int t = 0; t < r.steps(); ++t) {
      CHECK(r.at(t, recall) == (t >= spec.cue_steps));
      if (t >= spec.cue_steps) {
        for (int i = 0; i < recall; ++i) CHECK_FALSE(r.at(t, i));
      }
    }
  }

  spec.gap = 12;
  const TrialSet gapped = memory_stress_task(spec);
  CHECK(gapped.steps == spec.cue_steps + 12 + spec.query_steps);
  for (const Raster& r : gapped.rasters) {
    for (int t = spec.cue_steps; t < spec.query_start(); ++t) {
      for (int i = 0; i < spec.n_in; ++i) CHECK_FALSE(r.at(t, i));
    }
  }

  const auto patterns = memory_cue_patterns(spec);
  CHECK(patterns.size() == 4);
  for (std::size_t a = 0; a < patterns.size(); ++a) {
    for (std::size_t b = a + 1; b < patterns.size(); ++b) CHECK(patterns[a] != patterns[b]);
  }
}

TEST_CASE("tracking targets are teacher spikes") {
  TrackingSpec spec;
  spec.trials = 5;
  const TrialSet set = tracking_task(spec);
  CHECK(set.target_rasters.size() == 5);
  CHECK(set.target_rasters[0].channels() == spec.n_out);
  CHECK(set.target_rasters[0].steps() == spec.steps);
  std::int64_t spikes = 0;
  for (const auto& r : set.target_rasters) spikes += r.spike_count();
  CHECK(spikes > 0);
}

TEST_CASE("dataset bundle round trip") {
  MemoryTaskSpec spec;
  spec.samples_per_class = 4;
  spec.gap = 3;
  const TrialSet set = memory_stress_task(spec);
  const auto dir = scratch_dir("bundle");
  save_dataset(dir, set, R"({"kind":"memory","gap":3})");
  const TrialSet back = load_dataset(dir);
  CHECK(back.rasters == set.rasters);
  CHECK(back.labels == set.labels);
  CHECK(back.splits == set.splits);
  CHECK(back.steps == set.steps);
  CHECK(back.n_classes == set.n_classes);
  CHECK(read_labels(dir / "labels.txt") == set.labels);
  const auto meta = nlohmann::json::parse(read_dataset_meta(dir));
  CHECK(meta["generator"]["gap"] == 3);

  auto edited = meta;
  edited["version"] = 99;
  std::ofstream(dir / "meta.json") << edited.dump();
  CHECK_THROWS_AS(load_dataset(dir), IoError);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_dataset(dir), IoError);
}

TEST_CASE("tracking bundle keeps the targets") {
  TrackingSpec spec;
  spec.trials = 3;
  const TrialSet set = tracking_task(spec);
  const auto dir = scratch_dir("tracking");
  save_dataset(dir, set, "");
  CHECK(load_dataset(dir).target_rasters == set.target_rasters);
  std::filesystem::remove_all(dir);
}

TEST_CASE("label files") {
  const auto dir = scratch_dir("labels");
  std::filesystem::create_directories(dir);
  write_labels(dir / "l.txt", {2, 0, 1});
  CHECK(read_labels(dir / "l.txt") == std::vector<int>{2, 0, 1});
  std::ofstream(dir / "bad.txt") << "0 1\n2 0\n";
  CHECK_THROWS_AS(read_labels(dir / "bad.txt"), IoError);
  std::ofstream(dir / "junk.txt") << "0 1\nx\n";
  CHECK_THROWS_AS(read_labels(dir / "junk.txt"), IoError);
  std::filesystem::remove_all(dir);
}
