#include "snnrtrl/neuron.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>

#include "snnrtrl/errors.hpp"
#include "snnrtrl/util.hpp"

namespace snnrtrl {

double LIFParams::input_scale() const {
  return input_scale_mode == InputScaleMode::one_minus_beta ? 1.0 - beta : 1.0;
}

LIFParams make_lif_params(double tau_mem, double dt, double threshold, InputScaleMode mode) {
  if (!(tau_mem > 0.0)) throw ParameterError("tau_mem must be > 0, got " + std::to_string(tau_mem));
  if (!(dt > 0.0)) throw ParameterError("dt must be > 0, got " + std::to_string(dt));
  if (!(threshold > 0.0)) throw ParameterError("threshold must be > 0");
  LIFParams p;
  p.tau_mem = tau_mem;
  p.dt = dt;
  p.beta = std::exp(-dt / tau_mem);
  p.threshold = threshold;
  p.input_scale_mode = mode;
  return p;
}

double surrogate_deriv(double x, const SurrogateSpec& spec) {
  switch (spec.kind) {
    case SurrogateKind::fast_sigmoid: {
      const double d = 1.0 + spec.slope * std::abs(x);
      return 1.0 / (d * d);
    }
    case SurrogateKind::rectangular:
      return std::abs(x) < 0.5 / spec.slope ? 1.0 : 0.0;
    case SurrogateKind::arctan_like: {
      const double a = std::numbers::pi * spec.slope * x;
      return 1.0 / (1.0 + a * a);
    }
  }
  return 0.0;
}

Eigen::VectorXd surrogate_deriv(const Eigen::VectorXd& u, const SurrogateSpec& spec,
                                double threshold) {
  Eigen::VectorXd out(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) out[i] = surrogate_deriv(u[i] - threshold, spec);
  return out;
}

double smooth_spike(double x, const SurrogateSpec& spec) {
  switch (spec.kind) {
    case SurrogateKind::fast_sigmoid:
      return 1.0 / spec.slope + x / (1.0 + spec.slope * std::abs(x));
    case SurrogateKind::rectangular: {
      const double w = 0.5 / spec.slope;
      return std::clamp(x + w, 0.0, 2.0 * w);
    }
    case SurrogateKind::arctan_like: {
      const double a = std::numbers::pi * spec.slope;
      return 0.5 / spec.slope + std::atan(a * x) / a;
    }
  }
  return 0.0;
}

void validate_compartments(const MultiCompartmentSpec& spec) {
  if (spec.m < 1) throw SpecError("compartment count must be >= 1");
  if (spec.coupling.rows() != spec.m || spec.coupling.cols() != spec.m) {
    throw SpecError("coupling must be " + std::to_string(spec.m) + "x" + std::to_string(spec.m));
  }
  if (spec.spike_compartment < 0 || spec.spike_compartment >= spec.m) {
    throw SpecError("spike_compartment out of range");
  }
  const Eigen::EigenSolver<Eigen::MatrixXd> es(spec.coupling, false);
  const double radius = es.eigenvalues().cwiseAbs().maxCoeff();
  if (!(radius < 1.0)) {
    throw SpecError("coupling spectral radius " + std::to_string(radius) + " is not < 1");
  }
}

Eigen::MatrixXd selector_matrix(int k, int m, int spike_compartment) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(k, m * k);
  for (int i = 0; i < k; ++i) P(i, i * m + spike_compartment) = 1.0;
  return P;
}

void check_selector(const Eigen::MatrixXd& selector, int m) {
  if (m < 1 || selector.cols() != selector.rows() * m) {
    throw SpecError("selector must be k x (m*k)");
  }
  for (Eigen::Index i = 0; i < selector.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < selector.cols(); ++j) {
      const double v = selector(i, j);
      if (v != 0.0 && v != 1.0) throw SpecError("selector entries must be binary");
      if (v == 1.0 && j / m != i) throw SpecError("selector row selects another neuron's compartment");
      sum += v;
    }
    if (sum != 1.0) {
      throw SpecError("selector row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
  }
}

MultiCompartmentSpec current_based_compartments(double beta, double beta_syn) {
  MultiCompartmentSpec spec;
  spec.m = 2;
  spec.coupling.resize(2, 2);
  spec.coupling << beta, 1.0, 0.0, beta_syn;
  spec.spike_compartment = 0;
  return spec;
}

Eigen::MatrixXd LayerSpec::coupling() const {
  if (compartments) return compartments->coupling;
  return Eigen::MatrixXd::Constant(1, 1, lif.beta);
}

void validate_network(const NetworkSpec& net) {
  if (net.layers.empty()) throw ShapeError("network has no layers");
  int n_prev = net.n_in;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    const std::string where = "layer " + std::to_string(l) + ": ";
    if (layer.k <= 0) throw ShapeError(where + "k must be positive");
    if (layer.compartments) validate_compartments(*layer.compartments);
    const int mk = layer.state_size();
    if (layer.W.rows() != mk || layer.W.cols() != n_prev) {
      throw ShapeError(where + "W must be " + std::to_string(mk) + "x" + std::to_string(n_prev));
    }
    if (net.mode == ArchMode::FF && layer.has_recurrent()) {
      throw SpecError(where + "FF mode forbids recurrent weights");
    }
    if (layer.has_recurrent() && (layer.V.rows() != mk || layer.V.cols() != layer.k)) {
      throw ShapeError(where + "V must be " + std::to_string(mk) + "x" + std::to_string(layer.k));
    }
    auto check_mask = [&](const Eigen::MatrixXd& w, const Eigen::MatrixXd& mask, const char* name) {
      if (mask.size() == 0) return;
      if (mask.rows() != w.rows() || mask.cols() != w.cols()) {
        throw ShapeError(where + name + " mask shape mismatch");
      }
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (mask.data()[i] == 0.0 && w.data()[i] != 0.0) {
          throw SpecError(where + name + " has a nonzero masked entry");
        }
      }
    };
    check_mask(layer.W, layer.W_mask, "W");
    if (layer.has_recurrent()) check_mask(layer.V, layer.V_mask, "V");
    n_prev = layer.k;
  }
  if (net.readout.size() > 0 && net.readout.cols() != net.k_out()) {
    throw ShapeError("readout must have k_out columns");
  }
}

void apply_masks(NetworkSpec& net) {
  for (auto& layer : net.layers) {
    if (layer.W_mask.size() > 0) layer.W = layer.W.cwiseProduct(layer.W_mask);
    if (layer.has_recurrent() && layer.V_mask.size() > 0) {
      layer.V = layer.V.cwiseProduct(layer.V_mask);
    }
  }
}

Eigen::VectorXd LayerState::compartment(int c, int m) const {
  const Eigen::Index k = u.size() / m;
  Eigen::VectorXd out(k);
  for (Eigen::Index i = 0; i < k; ++i) out[i] = u[i * m + c];
  return out;
}

LayerState initial_state(const LayerSpec& layer) {
  LayerState s;
  s.u = Eigen::VectorXd::Zero(layer.state_size());
  s.s = Eigen::VectorXd::Zero(layer.k);
  s.t = -1;
  return s;
}

namespace {

LayerState advance(const LayerState& prev, const Eigen::MatrixXd& coupling, int spike_comp,
                   double threshold, double scale, const Eigen::MatrixXd& W,
                   const Eigen::MatrixXd& V, const Eigen::VectorXd& s_in,
                   const Eigen::VectorXd& s_rec, const SurrogateSpec& surrogate, bool smooth) {
  const Eigen::Index m = coupling.rows();
  const Eigen::Index mk = prev.u.size();
  const Eigen::Index k = mk / m;
  if (s_in.size() != W.cols()) {
    throw ShapeError("input of length " + std::to_string(s_in.size()) + " does not match W with " +
                     std::to_string(W.cols()) + " columns");
  }
  if (W.rows() != mk) throw ShapeError("W rows do not match state size");
  if (s_rec.size() != k) throw ShapeError("recurrent spike vector has wrong length");
  if (prev.s.size() != k) throw ShapeError("state spike vector has wrong length");

  Eigen::VectorXd post_reset = prev.u;
  for (Eigen::Index i = 0; i < k; ++i) post_reset[i * m + spike_comp] -= threshold * prev.s[i];

  Eigen::VectorXd drive = W * s_in;
  if (V.size() > 0) {
    if (V.rows() != mk || V.cols() != k) throw ShapeError("V has wrong shape");
    drive.noalias() += V * s_rec;
  }

  LayerState next;
  next.u.resize(mk);
  for (Eigen::Index i = 0; i < k; ++i) {
    next.u.segment(i * m, m).noalias() = coupling * post_reset.segment(i * m, m);
  }
  next.u += scale * drive;
  next.s.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double x = next.u[i * m + spike_comp] - threshold;
    next.s[i] = smooth ? smooth_spike(x, surrogate) : (x >= 0.0 ? 1.0 : 0.0);
  }
  next.t = prev.t + 1;
  return next;
}

}  // namespace

LayerState lif_step(const LayerState& state, const LIFParams& params, const Eigen::MatrixXd& W,
                    const Eigen::MatrixXd& V, const Eigen::VectorXd& s_in,
                    const Eigen::VectorXd& s_rec) {
  const Eigen::MatrixXd coupling = Eigen::MatrixXd::Constant(1, 1, params.beta);
  return advance(state, coupling, 0, params.threshold, params.input_scale(), W, V, s_in, s_rec,
                 SurrogateSpec{}, false);
}

LayerState multi_compartment_step(const LayerState& state, const MultiCompartmentSpec& spec,
                                  const LIFParams& params, const Eigen::MatrixXd& W,
                                  const Eigen::MatrixXd& V, const Eigen::VectorXd& s_in) {
  validate_compartments(spec);
  return advance(state, spec.coupling, spec.spike_compartment, params.threshold,
                 params.input_scale(), W, V, s_in, state.s, SurrogateSpec{}, false);
}

LayerState layer_step(const LayerSpec& layer, const LayerState& prev, const Eigen::VectorXd& x,
                      const SurrogateSpec& surrogate, const DynamicsOptions& opts) {
  return advance(prev, layer.coupling(), layer.spike_compartment(), layer.threshold(),
                 layer.scale(), layer.W, layer.V, x, prev.s, surrogate, opts.smooth);
}

Eigen::VectorXd spiking_potential(const LayerSpec& layer, const Eigen::VectorXd& u) {
  const int m = layer.m();
  const int c = layer.spike_compartment();
  Eigen::VectorXd out(layer.k);
  for (int i = 0; i < layer.k; ++i) out[i] = u[i * m + c];
  return out;
}

NetworkState initial_network_state(const NetworkSpec& net) {
  NetworkState state;
  state.reserve(net.layers.size());
  for (const auto& layer : net.layers) state.push_back(initial_state(layer));
  return state;
}

NetworkState network_step(const NetworkSpec& net, const NetworkState& prev,
                          const Eigen::VectorXd& x, const DynamicsOptions& opts) {
  NetworkState next;
  next.reserve(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Eigen::VectorXd& in = l == 0 ? x : next[l - 1].s;
    next.push_back(layer_step(net.layers[l], prev[l], in, net.surrogate, opts));
  }
  return next;
}

Trajectory rollout(const NetworkSpec& net, const Raster& input, const DynamicsOptions& opts) {
  if (input.channels() != net.n_in) {
    throw ShapeError("raster has " + std::to_string(input.channels()) + " channels, network expects " +
                     std::to_string(net.n_in));
  }
  Trajectory traj;
  traj.steps.reserve(static_cast<std::size_t>(input.steps()));
  NetworkState state = initial_network_state(net);
  for (int t = 0; t < input.steps(); ++t) {
    state = network_step(net, state, input.row(t), opts);
    traj.steps.push_back(state);
  }
  return traj;
}

std::vector<Eigen::VectorXd> output_spikes(const Trajectory& traj) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(traj.steps.size());
  for (const auto& step : traj.steps) out.push_back(step.back().s);
  return out;
}

NetworkSpec build_network(const NetworkTemplate& tmpl, std::uint64_t seed) {
  if (tmpl.layers.empty()) throw ConfigError("network needs at least one layer");
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](int rows, int cols, double stddev) {
    Eigen::MatrixXd w(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) w(r, c) = stddev * normal(rng);
    }
    return w;
  };

  NetworkSpec net;
  net.n_in = tmpl.n_in;
  net.surrogate = tmpl.surrogate;
  net.mode = tmpl.mode;
  int n_prev = tmpl.n_in;
  for (const auto& lt : tmpl.layers) {
    LayerSpec layer;
    layer.k = lt.k;
    layer.lif = make_lif_params(lt.tau_mem, lt.dt, lt.threshold, lt.scale_mode);
    if (lt.tau_syn > 0.0) {
      layer.compartments = current_based_compartments(layer.lif.beta, std::exp(-lt.dt / lt.tau_syn));
    }
    const int m = layer.m();
    const int mk = m * lt.k;
    layer.W = gaussian(mk, n_prev, tmpl.init_gain / std::sqrt(static_cast<double>(n_prev)));
    // Multi-compartment inputs land in the last compartment only.
    if (m > 1) {
      layer.W_mask = Eigen::MatrixXd::Zero(mk, n_prev);
      for (int i = 0; i < lt.k; ++i) layer.W_mask.row(i * m + m - 1).setOnes();
    }
    if (tmpl.mode != ArchMode::FF) {
      layer.V = gaussian(mk, lt.k,
                         tmpl.init_gain * tmpl.recurrent_gain / std::sqrt(static_cast<double>(lt.k)));
      layer.V_mask = Eigen::MatrixXd::Ones(mk, lt.k);
      for (int i = 0; i < lt.k; ++i) {
        for (int c = 0; c < m; ++c) {
          if (m > 1 && c != m - 1) layer.V_mask.row(i * m + c).setZero();
          if (!tmpl.self_connections) layer.V_mask(i * m + c, i) = 0.0;
        }
      }
    }
    net.layers.push_back(std::move(layer));
    n_prev = lt.k;
  }
  if (tmpl.n_readout > 0) {
    net.readout = gaussian(tmpl.n_readout, n_prev,
                           tmpl.readout_gain / std::sqrt(static_cast<double>(n_prev)));
  }
  apply_masks(net);
  validate_network(net);
  return net;
}

std::string to_string(ArchMode mode) {
  switch (mode) {
    case ArchMode::FF: return "FF";
    case ArchMode::RC: return "RC";
    case ArchMode::RD: return "RD";
  }
  return "?";
}

ArchMode arch_mode_from_string(const std::string& s) {
  if (s == "FF") return ArchMode::FF;
  if (s == "RC") return ArchMode::RC;
  if (s == "RD") return ArchMode::RD;
  throw ConfigError("unknown architecture mode '" + s + "' (expected FF, RC or RD)");
}

std::string to_string(SurrogateKind kind) {
  switch (kind) {
    case SurrogateKind::fast_sigmoid: return "fast_sigmoid";
    case SurrogateKind::rectangular: return "rectangular";
    case SurrogateKind::arctan_like: return "arctan_like";
  }
  return "?";
}

SurrogateKind surrogate_kind_from_string(const std::string& s) {
  if (s == "fast_sigmoid") return SurrogateKind::fast_sigmoid;
  if (s == "rectangular") return SurrogateKind::rectangular;
  if (s == "arctan_like") return SurrogateKind::arctan_like;
  throw ConfigError("unknown surrogate kind '" + s + "'");
}

std::string to_string(InputScaleMode mode) {
  return mode == InputScaleMode::one_minus_beta ? "one_minus_beta" : "unit";
}

InputScaleMode input_scale_mode_from_string(const std::string& s) {
  if (s == "one_minus_beta") return InputScaleMode::one_minus_beta;
  if (s == "unit") return InputScaleMode::unit;
  throw ConfigError("unknown input_scale_mode '" + s + "'");
}

}  // namespace snnrtrl
