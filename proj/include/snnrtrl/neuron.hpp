#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "snnrtrl/raster.hpp"

namespace snnrtrl {

enum class InputScaleMode { one_minus_beta, unit };

// Discrete-time leaky integrate-and-fire constants. beta is derived from
// tau_mem and dt and must not be set by hand.
struct LIFParams {
  double tau_mem = 10.0;  // ms
  double dt = 1.0;        // ms
  double beta = 0.0;
  double u_rest = 0.0;
  double resistance = 1.0;
  double threshold = 1.0;
  InputScaleMode input_scale_mode = InputScaleMode::one_minus_beta;

  // Factor in front of the synaptic drive: (1 - beta) or 1.
  double input_scale() const;
};

LIFParams make_lif_params(double tau_mem, double dt, double threshold = 1.0,
                          InputScaleMode mode = InputScaleMode::one_minus_beta);

enum class SurrogateKind { fast_sigmoid, rectangular, arctan_like };

struct SurrogateSpec {
  SurrogateKind kind = SurrogateKind::fast_sigmoid;
  double slope = 10.0;
};

// sigma'(x) with x = u - threshold. Peak value 1 at x = 0.
double surrogate_deriv(double x, const SurrogateSpec& spec);
Eigen::VectorXd surrogate_deriv(const Eigen::VectorXd& u, const SurrogateSpec& spec,
                                double threshold);

// Antiderivative of surrogate_deriv shifted to be non-negative. Used as the
// actual activation in smooth-forward verification runs.
double smooth_spike(double x, const SurrogateSpec& spec);

// Neurons with m state variables each. The extended state is neuron-major:
// compartment c of neuron i lives at index i*m + c.
struct MultiCompartmentSpec {
  int m = 1;
  Eigen::MatrixXd coupling;  // m x m, shared by every neuron of the layer
  int spike_compartment = 0;
};

// Throws SpecError for bad shapes, out-of-range indices, or a coupling
// matrix with spectral radius >= 1.
void validate_compartments(const MultiCompartmentSpec& spec);

// Binary k x (m*k) matrix P with P(i, i*m + c) = 1.
Eigen::MatrixXd selector_matrix(int k, int m, int spike_compartment);

// Throws SpecError unless every row of P holds exactly one 1 (all other
// entries 0) and that 1 lies inside the row's own neuron block.
void check_selector(const Eigen::MatrixXd& selector, int m);

// Current-based synapse neuron: compartments (U, I) with coupling
// [[beta, 1], [0, beta_syn]], spikes read from U, inputs land in I.
MultiCompartmentSpec current_based_compartments(double beta, double beta_syn);

enum class ArchMode { FF, RC, RD };

struct LayerSpec {
  int k = 0;
  LIFParams lif;
  std::optional<MultiCompartmentSpec> compartments;
  Eigen::MatrixXd W;       // (m*k) x n_prev
  Eigen::MatrixXd V;       // (m*k) x k, empty when the layer has no recurrence
  Eigen::MatrixXd W_mask;  // same shape as W (1 active, 0 inactive); empty = dense
  Eigen::MatrixXd V_mask;

  int m() const { return compartments ? compartments->m : 1; }
  int state_size() const { return m() * k; }
  int n_prev() const { return static_cast<int>(W.cols()); }
  bool has_recurrent() const { return V.size() > 0; }
  int spike_compartment() const { return compartments ? compartments->spike_compartment : 0; }
  double scale() const { return lif.input_scale(); }
  double threshold() const { return lif.threshold; }
  // Per-neuron m x m implicit transition (beta for plain LIF).
  Eigen::MatrixXd coupling() const;
  // Number of trainable scalars in W and V.
  int param_count() const { return static_cast<int>(W.size() + V.size()); }
};

struct NetworkSpec {
  int n_in = 0;
  std::vector<LayerSpec> layers;
  SurrogateSpec surrogate;
  ArchMode mode = ArchMode::RC;
  // Readout weights (n_out x k_last); empty when the loss reads spikes directly.
  Eigen::MatrixXd readout;

  int k_out() const { return layers.empty() ? 0 : layers.back().k; }
};

// Shape and mode checks: FF has no V anywhere, masked entries are zero.
void validate_network(const NetworkSpec& net);

// Zeroes masked entries of W and V in place.
void apply_masks(NetworkSpec& net);

struct LayerState {
  Eigen::VectorXd u;  // extended membrane state, length m*k, stored before reset
  Eigen::VectorXd s;  // spikes, length k
  int t = -1;

  // Values of compartment c for every neuron (e.g. the synaptic current).
  Eigen::VectorXd compartment(int c, int m) const;
};

LayerState initial_state(const LayerSpec& layer);

struct DynamicsOptions {
  // Replace the hard threshold by smooth_spike (verification only).
  bool smooth = false;
};

// One Euler step of a single-compartment layer:
//   u' = beta * (u - threshold * s_rec) + scale * (W s_in + V s_rec)
//   s' = Theta(u' - threshold)
// state.s must equal s_rec for the reset to refer to the right spikes; u' is
// returned before its own reset. V may be empty.
LayerState lif_step(const LayerState& state, const LIFParams& params, const Eigen::MatrixXd& W,
                    const Eigen::MatrixXd& V, const Eigen::VectorXd& s_in,
                    const Eigen::VectorXd& s_rec);

// Multi-compartment generalisation: U' = A (U - thr * P^T S) + scale (W s_in + V S),
// S' = Theta(P U' - thr), with A block diagonal built from spec.coupling.
LayerState multi_compartment_step(const LayerState& state, const MultiCompartmentSpec& spec,
                                  const LIFParams& params, const Eigen::MatrixXd& W,
                                  const Eigen::MatrixXd& V, const Eigen::VectorXd& s_in);

// Layer update used by every engine: the single forward path.
LayerState layer_step(const LayerSpec& layer, const LayerState& prev, const Eigen::VectorXd& x,
                      const SurrogateSpec& surrogate, const DynamicsOptions& opts = {});

// P u for a layer: the membrane value of each neuron's spiking compartment.
Eigen::VectorXd spiking_potential(const LayerSpec& layer, const Eigen::VectorXd& u);

using NetworkState = std::vector<LayerState>;

NetworkState initial_network_state(const NetworkSpec& net);
NetworkState network_step(const NetworkSpec& net, const NetworkState& prev,
                          const Eigen::VectorXd& x, const DynamicsOptions& opts = {});

struct Trajectory {
  std::vector<NetworkState> steps;  // steps[t][layer]
  bool stored = true;

  int length() const { return static_cast<int>(steps.size()); }
};

Trajectory rollout(const NetworkSpec& net, const Raster& input, const DynamicsOptions& opts = {});

// Output spikes of the last layer at every step, the input to loss heads.
std::vector<Eigen::VectorXd> output_spikes(const Trajectory& traj);

// Blueprint for building a seeded network.
struct LayerTemplate {
  int k = 32;
  double tau_mem = 10.0;
  double dt = 1.0;
  double threshold = 1.0;
  InputScaleMode scale_mode = InputScaleMode::one_minus_beta;
  // > 0 selects the current-based two-compartment neuron.
  double tau_syn = 0.0;
};

struct NetworkTemplate {
  int n_in = 20;
  std::vector<LayerTemplate> layers{LayerTemplate{}};
  SurrogateSpec surrogate;
  ArchMode mode = ArchMode::RC;
  int n_readout = 0;
  double init_gain = 1.0;        // multiplies 1/sqrt(fan_in)
  double recurrent_gain = 1.0;   // extra factor on V
  double readout_gain = 1.0;
  bool self_connections = false;
};

// Gaussian weights with standard deviation gain / sqrt(fan_in).
NetworkSpec build_network(const NetworkTemplate& tmpl, std::uint64_t seed);

std::string to_string(ArchMode mode);
ArchMode arch_mode_from_string(const std::string& s);
std::string to_string(SurrogateKind kind);
SurrogateKind surrogate_kind_from_string(const std::string& s);
std::string to_string(InputScaleMode mode);
InputScaleMode input_scale_mode_from_string(const std::string& s);

}  // namespace snnrtrl
