#include "snnrtrl/taskgen.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "snnrtrl/errors.hpp"
#include "snnrtrl/neuron.hpp"
#include "snnrtrl/util.hpp"

namespace snnrtrl {

namespace {

constexpr int kDatasetMajorVersion = 1;

// Round half to even, independent of the caller's rounding mode.
int round_half_even(double x) {
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double r = std::nearbyint(x);
  std::fesetround(saved);
  return static_cast<int>(r);
}

std::mt19937_64 rng_for(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(derive_seed(seed, stream));
}

}  // namespace

std::vector<std::size_t> TrialSet::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

void assign_splits(TrialSet& set, const SplitSpec& spec, std::uint64_t seed) {
  if (spec.train < 0 || spec.valid < 0 || spec.train + spec.valid > 1.0 + 1e-12) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  const std::size_t n = set.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = rng_for(seed, 0x5eed5u);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train * static_cast<double>(n)));
  const auto n_valid = std::min(n - n_train,
                                static_cast<std::size_t>(std::llround(spec.valid * static_cast<double>(n))));
  set.splits.assign(n, Split::test);
  for (std::size_t r = 0; r < n; ++r) {
    if (r < n_train) {
      set.splits[order[r]] = Split::train;
    } else if (r < n_train + n_valid) {
      set.splits[order[r]] = Split::valid;
    }
  }
}

int RandmanSpec::steps() const { return static_cast<int>(std::floor(time_window / dt + 1e-9)); }

std::size_t RandmanModel::index(int c, int i, int d, int f) const {
  return ((static_cast<std::size_t>(c) * spec.embedding_dim + i) * spec.manifold_dim + d) *
             spec.smoothness + f;
}

double RandmanModel::value(int c, int i, const std::vector<double>& x) const {
  double s = 0.0;
  double bound = 0.0;
  for (int d = 0; d < spec.manifold_dim; ++d) {
    for (int f = 0; f < spec.smoothness; ++f) {
      const std::size_t at = index(c, i, d, f);
      s += amplitude[at] * std::sin(2.0 * std::numbers::pi * (f + 1) * x[static_cast<std::size_t>(d)] + phase[at]);
      bound += std::abs(amplitude[at]);
    }
  }
  if (bound == 0.0) return 0.5;
  return (s + bound) / (2.0 * bound);
}

int RandmanModel::spike_step(int c, int i, const std::vector<double>& x) const {
  return round_half_even(value(c, i, x) * (spec.steps() - 1));
}

RandmanModel randman_model(const RandmanSpec& spec) {
  if (spec.manifold_dim < 1) throw ConfigError("randman: manifold_dim must be >= 1");
  if (spec.embedding_dim < spec.manifold_dim) {
    throw ConfigError("randman: embedding_dim must be >= manifold_dim");
  }
  if (spec.smoothness < 1) throw ConfigError("randman: smoothness must be >= 1");
  if (spec.n_classes < 1) throw ConfigError("randman: n_classes must be >= 1");
  if (!(spec.dt > 0.0) || spec.time_window < spec.dt) {
    throw ConfigError("randman: time_window must be at least one dt");
  }
  RandmanModel model;
  model.spec = spec;
  const std::size_t n = static_cast<std::size_t>(spec.n_classes) * spec.embedding_dim *
                        spec.manifold_dim * spec.smoothness;
  model.amplitude.resize(n);
  model.phase.resize(n);
  auto rng = rng_for(spec.seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int i = 0; i < spec.embedding_dim; ++i) {
      for (int d = 0; d < spec.manifold_dim; ++d) {
        for (int f = 0; f < spec.smoothness; ++f) {
          const std::size_t at = model.index(c, i, d, f);
          model.amplitude[at] = normal(rng) / (f + 1);
          model.phase[at] = angle(rng);
        }
      }
    }
  }
  return model;
}

Raster randman_sample(const RandmanModel& model, int c, const std::vector<double>& x) {
  Raster r(model.spec.steps(), model.spec.embedding_dim);
  for (int i = 0; i < model.spec.embedding_dim; ++i) r.set(model.spike_step(c, i, x), i);
  return r;
}

TrialSet randman_generate(const RandmanSpec& spec) {
  const RandmanModel model = randman_model(spec);
  TrialSet set;
  set.task = "randman";
  set.steps = spec.steps();
  set.channels = spec.embedding_dim;
  set.n_classes = spec.n_classes;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int s = 0; s < spec.samples_per_class; ++s) {
      auto rng = rng_for(spec.seed, 1 + static_cast<std::uint64_t>(c) * spec.samples_per_class + s);
      std::vector<double> x(static_cast<std::size_t>(spec.manifold_dim));
      for (auto& v : x) v = unit(rng);
      set.rasters.push_back(randman_sample(model, c, x));
      set.labels.push_back(c);
    }
  }
  assign_splits(set, spec.split, spec.seed);
  return set;
}

Raster latency_encode(const Eigen::VectorXd& values, int t_max, bool silent_zero) {
  if (t_max < 1) throw ParameterError("latency_encode: t_max must be >= 1");
  Raster r(t_max, static_cast<int>(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ParameterError("latency_encode: value " + std::to_string(v) + " outside [0, 1]");
    }
    if (silent_zero && v == 0.0) continue;
    r.set(round_half_even((1.0 - v) * (t_max - 1)), static_cast<int>(i));
  }
  return r;
}

TrialSet latency_task(const LatencySpec& spec) {
  if (spec.n_classes < 1 || spec.n_in < 1) throw ConfigError("latency task: empty shape");
  TrialSet set;
  set.task = "latency";
  set.steps = spec.t_max;
  set.channels = spec.n_in;
  set.n_classes = spec.n_classes;
  auto proto_rng = rng_for(spec.seed, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::VectorXd> protos;
  for (int c = 0; c < spec.n_classes; ++c) {
    Eigen::VectorXd p(spec.n_in);
    for (int i = 0; i < spec.n_in; ++i) p[i] = unit(proto_rng);
    protos.push_back(p);
  }
  std::normal_distribution<double> jitter(0.0, spec.jitter);
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int s = 0; s < spec.samples_per_class; ++s) {
      auto rng = rng_for(spec.seed, 1 + static_cast<std::uint64_t>(c) * spec.samples_per_class + s);
      Eigen::VectorXd v = protos[static_cast<std::size_t>(c)];
      for (int i = 0; i < spec.n_in; ++i) v[i] = std::clamp(v[i] + jitter(rng), 0.0, 1.0);
      set.rasters.push_back(latency_encode(v, spec.t_max));
      set.labels.push_back(c);
    }
  }
  assign_splits(set, spec.split, spec.seed);
  return set;
}

std::vector<std::vector<int>> memory_cue_patterns(const MemoryTaskSpec& spec) {
  const int n_cue = spec.n_in - 1;
  if (n_cue < 1) throw ConfigError("memory task: need at least one cue channel besides the recall channel");
  if (spec.n_classes < 1) throw ConfigError("memory task: n_classes must be >= 1");
  const int min_distance = std::max(1, n_cue / 4);
  auto rng = rng_for(spec.seed, 0);
  std::bernoulli_distribution on(spec.cue_rate);
  std::vector<std::vector<int>> patterns;
  for (int tries = 0; static_cast<int>(patterns.size()) < spec.n_classes; ++tries) {
    if (tries > 10000) throw ConfigError("memory task: cannot draw distinct cue patterns");
    std::vector<int> p(static_cast<std::size_t>(n_cue));
    for (auto& b : p) b = on(rng) ? 1 : 0;
    bool ok = true;
    for (const auto& q : patterns) {
      int d = 0;
      for (int i = 0; i < n_cue; ++i) d += p[static_cast<std::size_t>(i)] != q[static_cast<std::size_t>(i)];
      ok = ok && d >= min_distance;
    }
    if (ok) patterns.push_back(std::move(p));
  }
  return patterns;
}

TrialSet memory_stress_task(const MemoryTaskSpec& spec) {
  if (spec.gap < 0) throw ConfigError("memory task: gap must be >= 0");
  if (spec.cue_steps < 1 || spec.query_steps < 1) {
    throw ConfigError("memory task: cue and query windows must be non-empty");
  }
  const auto patterns = memory_cue_patterns(spec);
  const int n_cue = spec.n_in - 1;
  TrialSet set;
  set.task = "memory";
  set.steps = spec.steps();
  set.channels = spec.n_in;
  set.n_classes = spec.n_classes;
  std::bernoulli_distribution flip(spec.flip);
  std::bernoulli_distribution fire(0.5);
  std::bernoulli_distribution noise(spec.noise_rate);
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int s = 0; s < spec.samples_per_class; ++s) {
      auto rng = rng_for(spec.seed, 1 + static_cast<std::uint64_t>(c) * spec.samples_per_class + s);
      std::vector<int> cue = patterns[static_cast<std::size_t>(c)];
      for (auto& b : cue) {
        if (flip(rng)) b = 1 - b;
      }
      Raster r(set.steps, spec.n_in);
      for (int t = 0; t < set.steps; ++t) {
        for (int i = 0; i < spec.n_in; ++i) {
          bool spike = spec.noise_rate > 0.0 && noise(rng);
          if (t < spec.cue_steps && i < n_cue && cue[static_cast<std::size_t>(i)]) spike = spike || fire(rng);
          if (t >= spec.query_start() && i == n_cue) spike = true;
          if (spike) r.set(t, i);
        }
      }
      set.rasters.push_back(std::move(r));
      set.labels.push_back(c);
    }
  }
  assign_splits(set, spec.split, spec.seed);
  return set;
}

TrialSet tracking_task(const TrackingSpec& spec) {
  if (spec.n_in < 1 || spec.n_out < 1 || spec.steps < 1 || spec.trials < 1) {
    throw ConfigError("tracking task: empty shape");
  }
  NetworkTemplate teacher;
  teacher.n_in = spec.n_in;
  teacher.layers = {LayerTemplate{}};
  teacher.layers[0].k = spec.n_out;
  teacher.layers[0].scale_mode = InputScaleMode::unit;
  teacher.mode = ArchMode::FF;
  teacher.init_gain = spec.teacher_gain;
  const NetworkSpec net = build_network(teacher, derive_seed(spec.seed, 0));
  TrialSet set;
  set.task = "tracking";
  set.steps = spec.steps;
  set.channels = spec.n_in;
  set.n_classes = 0;
  std::bernoulli_distribution fire(spec.input_rate);
  for (int n = 0; n < spec.trials; ++n) {
    auto rng = rng_for(spec.seed, 1 + static_cast<std::uint64_t>(n));
    Raster in(spec.steps, spec.n_in);
    for (int t = 0; t < spec.steps; ++t) {
      for (int i = 0; i < spec.n_in; ++i) {
        if (fire(rng)) in.set(t, i);
      }
    }
    const Trajectory traj = rollout(net, in);
    Raster out(spec.steps, spec.n_out);
    for (int t = 0; t < spec.steps; ++t) {
      for (int i = 0; i < spec.n_out; ++i) {
        if (traj.steps[static_cast<std::size_t>(t)][0].s[i] != 0.0) out.set(t, i);
      }
    }
    set.rasters.push_back(std::move(in));
    set.target_rasters.push_back(std::move(out));
    set.labels.push_back(0);
  }
  assign_splits(set, spec.split, spec.seed);
  return set;
}

void write_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << ' ' << labels[i] << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<int> labels;
  long long id = 0;
  int label = 0;
  while (in >> id >> label) {
    if (id != static_cast<long long>(labels.size())) {
      throw IoError(path.string() + ": trial ids must be consecutive from 0");
    }
    labels.push_back(label);
  }
  if (!in.eof()) throw IoError(path.string() + ": malformed line after trial " + std::to_string(labels.size()));
  return labels;
}

namespace {

std::string trial_name(std::size_t i, const char* prefix) {
  std::string id = std::to_string(i);
  if (id.size() < 5) id.insert(0, 5 - id.size(), '0');
  return prefix + id + ".snnr";
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const TrialSet& set, const std::string& meta_json) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "trials", ec);
  if (ec) throw IoError("cannot create " + (dir / "trials").string() + ": " + ec.message());
  nlohmann::ordered_json meta;
  meta["format"] = "snnrtrl-dataset";
  meta["version"] = kDatasetMajorVersion;
  meta["task"] = set.task;
  meta["steps"] = set.steps;
  meta["channels"] = set.channels;
  meta["n_classes"] = set.n_classes;
  meta["n_trials"] = set.size();
  meta["has_targets"] = !set.target_rasters.empty();
  meta["generator"] = meta_json.empty() ? nlohmann::ordered_json::object()
                                        : nlohmann::ordered_json::parse(meta_json);
  std::vector<std::string> splits;
  for (auto s : set.splits) splits.push_back(to_string(s));
  meta["splits"] = splits;
  {
    std::ofstream out(dir / "meta.json");
    if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
    out << meta.dump(2) << '\n';
  }
  write_labels(dir / "labels.txt", set.labels);
  for (std::size_t i = 0; i < set.size(); ++i) {
    save_raster(dir / "trials" / trial_name(i, ""), set.rasters[i]);
    if (!set.target_rasters.empty()) {
      save_raster(dir / "trials" / trial_name(i, "target_"), set.target_rasters[i]);
    }
  }
}

std::string read_dataset_meta(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError("cannot open " + (dir / "meta.json").string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

TrialSet load_dataset(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_dataset_meta(dir));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError((dir / "meta.json").string() + ": " + e.what());
  }
  if (meta.value("format", "") != "snnrtrl-dataset") throw IoError("not a dataset bundle: " + dir.string());
  if (meta.value("version", -1) != kDatasetMajorVersion) {
    throw IoError("unsupported dataset version " + meta.value("version", nlohmann::json()).dump());
  }
  TrialSet set;
  set.task = meta.at("task").get<std::string>();
  set.steps = meta.at("steps").get<int>();
  set.channels = meta.at("channels").get<int>();
  set.n_classes = meta.at("n_classes").get<int>();
  const auto n = meta.at("n_trials").get<std::size_t>();
  set.labels = read_labels(dir / "labels.txt");
  if (set.labels.size() != n) throw IoError("labels.txt does not match n_trials");
  for (const auto& s : meta.at("splits")) set.splits.push_back(split_from_string(s.get<std::string>()));
  if (set.splits.size() != n) throw IoError("split list does not match n_trials");
  const bool targets = meta.value("has_targets", false);
  for (std::size_t i = 0; i < n; ++i) {
    set.rasters.push_back(load_raster(dir / "trials" / trial_name(i, "")));
    if (targets) set.target_rasters.push_back(load_raster(dir / "trials" / trial_name(i, "target_")));
  }
  return set;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw IoError("unknown split '" + s + "'");
}

}  // namespace snnrtrl
