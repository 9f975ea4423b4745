#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "snnrtrl/engines.hpp"
#include "snnrtrl/losses.hpp"
#include "snnrtrl/neuron.hpp"
#include "snnrtrl/raster.hpp"

namespace testutil {

using namespace snnrtrl;

inline Raster random_raster(int T, int n, double rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution fire(rate);
  Raster r(T, n);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) {
      if (fire(rng)) r.set(t, i);
    }
  }
  return r;
}

inline const std::vector<HeadKind>& all_heads() {
  static const std::vector<HeadKind> heads{HeadKind::van_rossum, HeadKind::local_mse,
                                           HeadKind::step_readout_ce, HeadKind::sum_readout_ce,
                                           HeadKind::max_readout_ce};
  return heads;
}

struct Case {
  NetworkSpec net;
  Raster input;
  LossProgram program;
  Target target;
};

struct CaseOptions {
  int k = 4;
  int n = 3;
  int T = 10;
  ArchMode mode = ArchMode::RC;
  HeadKind head = HeadKind::van_rossum;
  int layers = 1;
  double tau_syn = 0.0;
  bool zero_recurrent = false;
  double beta_ro = 0.8;
  double gain = 3.0;
  InputScaleMode scale_mode = InputScaleMode::unit;
  KernelKind kernel = KernelKind::exponential;
  int n_classes = 3;
};

inline Case make_case(const CaseOptions& o, std::uint64_t seed) {
  NetworkTemplate tmpl;
  tmpl.n_in = o.n;
  tmpl.layers.clear();
  for (int l = 0; l < o.layers; ++l) {
    LayerTemplate lt;
    lt.k = o.k;
    lt.scale_mode = o.scale_mode;
    lt.tau_syn = o.tau_syn;
    tmpl.layers.push_back(lt);
  }
  tmpl.mode = o.mode;
  tmpl.init_gain = o.gain;
  tmpl.recurrent_gain = 1.0;
  const bool readout = o.head != HeadKind::van_rossum;
  tmpl.n_readout = readout ? o.n_classes : 0;
  Case c;
  c.net = build_network(tmpl, seed);
  if (o.zero_recurrent) {
    for (auto& layer : c.net.layers) {
      if (layer.has_recurrent()) layer.V.setZero();
    }
  }
  c.input = random_raster(o.T, o.n, 0.4, seed * 7 + 1);
  c.program.head = o.head;
  c.program.kernel.kind = o.kernel;
  c.program.kernel.tau = 5.0;
  c.program.kernel.tau_rise = 2.0;
  c.program.readout.n_classes = o.n_classes;
  c.program.readout.beta_ro = o.beta_ro;
  std::mt19937_64 rng(seed * 13 + 5);
  std::normal_distribution<double> g(0.0, 1.0);
  if (o.head == HeadKind::van_rossum) {
    const Raster tgt = random_raster(o.T, o.k, 0.3, seed * 11 + 3);
    Eigen::MatrixXd spikes(o.T, o.k);
    for (int t = 0; t < o.T; ++t) spikes.row(t) = tgt.row(t).transpose();
    c.target = spike_train_target(spikes, c.program.kernel);
  } else if (o.head == HeadKind::local_mse) {
    c.target.stream = Eigen::MatrixXd::NullaryExpr(o.T, o.n_classes, [&] { return g(rng); });
  } else {
    c.target.label = static_cast<int>(seed % static_cast<std::uint64_t>(o.n_classes));
  }
  return c;
}

inline GradientReport grad_of(EngineKind kind, const Case& c, const GradOptions& opts = {}) {
  return compute_gradient(kind, c.net, c.input, c.program, c.target, opts);
}

inline double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace testutil
