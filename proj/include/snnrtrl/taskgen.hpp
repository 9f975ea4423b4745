#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "snnrtrl/raster.hpp"

namespace snnrtrl {

enum class Split { train, valid, test };

struct SplitSpec {
  double train = 0.6;
  double valid = 0.2;  // test gets the rest
};

struct TrialSet {
  std::string task;
  int steps = 0;
  int channels = 0;
  int n_classes = 0;
  std::vector<Raster> rasters;
  std::vector<int> labels;
  std::vector<Split> splits;
  // Optional target spike trains (regression tasks), one per trial.
  std::vector<Raster> target_rasters;

  std::size_t size() const { return rasters.size(); }
  std::vector<std::size_t> indices(Split split) const;
};

// Seeded shuffle, then the first round(n*train) trials are train, the next
// round(n*valid) valid, the rest test.
void assign_splits(TrialSet& set, const SplitSpec& spec, std::uint64_t seed);

// Smooth random manifold task: one random smooth map per class from the
// latent cube [0,1]^manifold_dim to one spike time per input neuron.
struct RandmanSpec {
  int n_classes = 4;
  int manifold_dim = 2;
  int embedding_dim = 20;
  int smoothness = 3;   // number of Fourier frequencies per latent dimension
  int samples_per_class = 250;
  double time_window = 50.0;  // ms
  double dt = 1.0;            // ms
  std::uint64_t seed = 0;
  SplitSpec split;

  int steps() const;
};

// Coefficients of the per-class maps. value(c, i, x) lies in [0, 1]; the
// spike of neuron i falls on step round_half_even((steps-1) * value).
struct RandmanModel {
  RandmanSpec spec;
  // Indexed [class][neuron][dim][freq]
  std::vector<double> amplitude;
  std::vector<double> phase;

  std::size_t index(int c, int i, int d, int f) const;
  double value(int c, int i, const std::vector<double>& x) const;
  int spike_step(int c, int i, const std::vector<double>& x) const;
};

RandmanModel randman_model(const RandmanSpec& spec);
Raster randman_sample(const RandmanModel& model, int c, const std::vector<double>& x);
TrialSet randman_generate(const RandmanSpec& spec);

// One spike per neuron at round_half_even((1 - v) * (t_max - 1)).
// silent_zero drops the spike of neurons with v == 0.
Raster latency_encode(const Eigen::VectorXd& values, int t_max, bool silent_zero = false);

// Static patterns pushed through latency coding: each class has a random
// prototype in [0,1]^n, samples add Gaussian jitter.
struct LatencySpec {
  int n_classes = 2;
  int n_in = 20;
  int t_max = 30;
  int samples_per_class = 100;
  double jitter = 0.05;
  std::uint64_t seed = 0;
  SplitSpec split;
};

TrialSet latency_task(const LatencySpec& spec);

// Cue / gap / query task. A class-specific spike pattern is shown during the
// first cue_steps, followed by gap silent steps, then a query window in
// which a dedicated recall channel fires every step. The label has to be
// reported during the query window.
struct MemoryTaskSpec {
  int gap = 0;
  int n_classes = 2;
  int n_in = 20;           // includes the recall channel
  int cue_steps = 10;
  int query_steps = 5;
  double cue_rate = 0.5;   // fraction of cue channels active in a prototype
  double flip = 0.05;      // per-sample probability of flipping a cue bit
  double noise_rate = 0.02; // background spike probability per channel and step
  int samples_per_class = 100;
  std::uint64_t seed = 0;
  SplitSpec split;

  int steps() const { return cue_steps + gap + query_steps; }
  int query_start() const { return cue_steps + gap; }
};

TrialSet memory_stress_task(const MemoryTaskSpec& spec);
// Class prototypes (n_classes x (n_in - 1) binary), Hamming-distinct.
std::vector<std::vector<int>> memory_cue_patterns(const MemoryTaskSpec& spec);

// Regression task: inputs are random Poisson rasters and targets are the
// output spikes of a fixed random teacher network.
struct TrackingSpec {
  int n_in = 10;
  int n_out = 4;
  int steps = 50;
  int trials = 40;
  double input_rate = 0.2;
  double teacher_gain = 3.0;
  std::uint64_t seed = 0;
  SplitSpec split;
};

TrialSet tracking_task(const TrackingSpec& spec);

// Dataset bundle: meta.json, labels.txt and trials/NNNNN.snnr (+ target_NNNNN.snnr).
void save_dataset(const std::filesystem::path& dir, const TrialSet& set, const std::string& meta_json);
TrialSet load_dataset(const std::filesystem::path& dir);
std::string read_dataset_meta(const std::filesystem::path& dir);

// Label file: one "trial_id label" per line.
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);
std::vector<int> read_labels(const std::filesystem::path& path);

std::string to_string(Split split);
Split split_from_string(const std::string& s);

}  // namespace snnrtrl
