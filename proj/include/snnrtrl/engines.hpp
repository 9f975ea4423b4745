#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "snnrtrl/losses.hpp"
#include "snnrtrl/neuron.hpp"
#include "snnrtrl/raster.hpp"

namespace snnrtrl {

enum class EngineKind { bptt, rtrl_exact, rtrl_sparse, mixed, finite_difference };

// How the influence of parameters on the state is stored.
//   dense:  full influence matrix (exact RTRL)
//   block:  one m x m(n+k) block per neuron
//   vector: shared presynaptic traces (single-compartment neurons only)
enum class TraceMode { none, dense, block, vector };

struct GradOptions {
  // Use smooth_spike as the forward activation and keep the reset in the
  // gradient path. Needed to compare against finite differences.
  bool smooth_forward = false;
  // In RD mode, also drop the cross-layer term of the forward recursion.
  bool detach_cross_layer = false;
};

// Counts multiplications on gradient paths and live engine scalars.
struct CostCounter {
  std::int64_t mults = 0;
  std::int64_t live = 0;
  std::int64_t peak = 0;

  void alloc(std::int64_t n);
  void release(std::int64_t n);
};

enum class ParamKind { W, V, R };

struct ParamBlock {
  std::string name;  // "layer0.W", "layer0.V", "readout.R"
  ParamKind kind = ParamKind::W;
  int layer = 0;     // -1 for the readout
  int rows = 0;
  int cols = 0;
  int offset = 0;    // first index in the flat parameter vector (row-major)
};

// Trainable tensors of a network under a loss program, in a fixed order.
class ParamLayout {
 public:
  ParamLayout(const NetworkSpec& net, const LossProgram& program);

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  int size() const { return size_; }
  // Offset of W / V of layer l, or -1 if absent.
  int w_offset(int layer) const;
  int v_offset(int layer) const;
  int r_offset() const;
  const ParamBlock* find(const std::string& name) const;

 private:
  std::vector<ParamBlock> blocks_;
  int size_ = 0;
};

Eigen::VectorXd get_params(const NetworkSpec& net, const ParamLayout& layout);
void set_params(NetworkSpec& net, const ParamLayout& layout, const Eigen::VectorXd& flat);
// 1 for trainable entries, 0 for masked ones.
Eigen::VectorXd param_mask(const NetworkSpec& net, const ParamLayout& layout);

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

struct GradientReport {
  EngineKind engine = EngineKind::bptt;
  TraceMode trace_mode = TraceMode::none;
  double loss = 0.0;
  std::vector<NamedTensor> grads;
  std::int64_t peak_memory_elements = 0;
  std::int64_t scalar_mult_count = 0;

  Eigen::VectorXd flat() const;
  const Eigen::MatrixXd& tensor(const std::string& name) const;
};

GradientReport make_report(EngineKind engine, const ParamLayout& layout,
                           const Eigen::VectorXd& flat_grad);

// Jacobians of one layer's state update at step t, given the state at t-1.
struct JacobianParts {
  Eigen::MatrixXd h_implicit;              // mk x mk, block diagonal
  Eigen::MatrixXd h_explicit;              // mk x mk, through recurrent spikes
  Eigen::SparseMatrix<double> f_immediate; // mk x (W entries + V entries), row-major columns
  Eigen::VectorXd x_in;                    // presynaptic input at t
  Eigen::VectorXd s_rec;                   // own spikes at t-1
  double scale = 1.0;
  int m = 1;
};

// attach_reset keeps the subtractive reset in h_implicit (smooth-forward runs).
JacobianParts assemble_jacobians(const LayerSpec& layer, const LayerState& prev,
                                 const Eigen::VectorXd& x, const SurrogateSpec& surrogate,
                                 bool attach_reset = false);

// Influence of one layer's own W, V on its state.
struct InfluenceStore {
  TraceMode mode = TraceMode::dense;
  int k = 0;
  int m = 1;
  int n = 0;            // presynaptic width
  bool recurrent = false;
  double scale = 1.0;   // input scale; vector traces leave it factored out
  Eigen::MatrixXd G;                  // dense: mk x p
  std::vector<Eigen::MatrixXd> blocks;  // block: k blocks of m x m*w
  Eigen::VectorXd q_in;               // vector: length n
  Eigen::VectorXd q;                  // vector: length k

  int local_width() const { return n + (recurrent ? k : 0); }
  int param_count() const { return m * k * local_width(); }
  // Dense mk x p view in the same column order as f_immediate.
  Eigen::MatrixXd dense() const;
  std::int64_t nonzero_count() const;
  std::int64_t stored_elements() const;
};

InfluenceStore make_influence_store(const LayerSpec& layer, TraceMode mode);
// True where a dense influence entry may be nonzero under block propagation.
bool in_block_support(const InfluenceStore& store, int row, int col);

// G' = (H^I + H^E) G + F, or H^I G + F when drop_explicit is set.
InfluenceStore rtrl_exact_step(const InfluenceStore& g_prev, const JacobianParts& jac,
                               bool drop_explicit = false);
// Block / vector traces with the explicit term dropped.
InfluenceStore rtrl_sparse_step(const InfluenceStore& g_prev, const JacobianParts& jac);

// q' = beta q + s
Eigen::VectorXd trace_update(const Eigen::VectorXd& q, double beta, const Eigen::VectorXd& s);
// (dL/dS * sigma'(u - threshold)) outer q
Eigen::MatrixXd three_factor_gradient(const Eigen::VectorXd& dl_ds, const Eigen::VectorXd& u,
                                      const Eigen::VectorXd& q, const SurrogateSpec& spec,
                                      double threshold);

// Streaming gradient engine (RTRL family). The engine keeps a pointer to the
// network and reads the current weights at every step, so parameter updates
// between steps are picked up.
class OnlineEngine {
 public:
  virtual ~OnlineEngine() = default;

  // Zeroes network state, traces and head state. Accumulated gradients survive.
  virtual void begin_trial() = 0;
  // Advances one step; returns L^t (0 for locking heads).
  virtual double step(const Eigen::VectorXd& x, const Target& target) = 0;
  // Closes the trial. Locking heads add their loss and gradient here.
  // Returns the trial loss.
  virtual double finish(const Target& target) = 0;

  // Gradient accumulated since the last call; resets the accumulator.
  GradientReport take_gradient();
  const NetworkState& state() const { return state_; }
  const HeadState& head() const { return head_; }
  int predict() const { return head_predict(program_, head_); }
  EngineKind kind() const { return kind_; }
  TraceMode trace_mode() const { return trace_mode_; }
  const CostCounter& cost() const { return cost_; }

 protected:
  OnlineEngine(EngineKind kind, const NetworkSpec& net, LossProgram program, GradOptions opts);

  // Runs the forward step and head update; returns the previous network state.
  NetworkState advance_forward(const Eigen::VectorXd& x);
  // Loss gradient at the head output for this step, or empty if inactive.
  std::optional<LocalLoss> local_loss(const Target& target) const;
  bool locking() const { return program_.locality() == Locality::locking; }
  bool readout_head() const { return program_.uses_readout(); }
  const Eigen::MatrixXd& readout() const { return net_->readout; }

  EngineKind kind_;
  TraceMode trace_mode_ = TraceMode::none;
  const NetworkSpec* net_;
  LossProgram program_;
  GradOptions opts_;
  ParamLayout layout_;
  NetworkState state_;
  HeadState head_;
  Eigen::VectorXd grad_;
  double trial_loss_ = 0.0;
  CostCounter cost_;
};

// Throws UsageError for bptt (not streaming) or unsupported networks, and
// LockingError for mixed mode with a locking head.
std::unique_ptr<OnlineEngine> make_online_engine(EngineKind kind, const NetworkSpec& net,
                                                 const LossProgram& program,
                                                 const GradOptions& opts = {});

// Reverse-mode gradient over a stored trajectory.
GradientReport bptt_gradient(const Trajectory& traj, const NetworkSpec& net, const Raster& input,
                             const LossProgram& program, const Target& target,
                             const GradOptions& opts = {});

// Runs one trial through the chosen engine.
GradientReport compute_gradient(EngineKind kind, const NetworkSpec& net, const Raster& input,
                                const LossProgram& program, const Target& target,
                                const GradOptions& opts = {});

// Central differences of the smooth-forward loss. h <= 0 is a ParameterError.
GradientReport finite_difference_oracle(const NetworkSpec& net, const Raster& input,
                                        const LossProgram& program, const Target& target,
                                        double h = 1e-5);

// Loss of one trial evaluated from a rollout (batch head evaluation).
double trial_loss(const NetworkSpec& net, const Raster& input, const LossProgram& program,
                  const Target& target, bool smooth = false);

struct CostSample {
  std::int64_t peak_memory_elements = 0;
  std::int64_t scalar_mult_count = 0;
  double wall_ms = 0.0;
};

// Runs the engine on a seeded random raster of length T with a van Rossum
// head against a silent target and reports its counters.
CostSample complexity_probe(EngineKind kind, const NetworkSpec& net, int T, std::uint64_t seed = 0);

std::string to_string(EngineKind kind);
EngineKind engine_kind_from_string(const std::string& s);
std::string to_string(TraceMode mode);

}  // namespace snnrtrl
