#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace snnrtrl {

enum class KernelKind { exponential, double_exponential };

// Causal spike-train kernel realised as one or two chained single-pole filters.
struct KernelSpec {
  KernelKind kind = KernelKind::exponential;
  double tau = 10.0;      // ms, decay time constant
  double tau_rise = 2.0;  // ms, first stage of the double exponential
  double dt = 1.0;        // ms
  // Scales the input by dt/tau (dt/tau_rise * dt/tau for the double
  // exponential), the impulse response of tau dz/dt = -z + S.
  bool normalized = false;

  double decay() const;
  double rise_decay() const;
  double input_gain() const;
  bool operator==(const KernelSpec&) const = default;
};

void validate_kernel(const KernelSpec& spec);

struct FilterState {
  Eigen::VectorXd z1;
  Eigen::VectorXd z2;  // used only by the double exponential

  static FilterState zeros(Eigen::Index n);
  const Eigen::VectorXd& output(const KernelSpec& spec) const;
};

// exponential: z' = exp(-dt/tau) z + g s
// double_exponential: z1' = exp(-dt/tau_rise) z1 + g s, z2' = exp(-dt/tau) z2 + z1'
// with g = input_gain().
FilterState kernel_filter_step(const FilterState& z, const Eigen::VectorXd& s,
                               const KernelSpec& spec);

// Filters a whole spike train (rows = time) into a real-valued stream.
Eigen::MatrixXd filter_spike_train(const Eigen::MatrixXd& spikes, const KernelSpec& spec);

struct LocalLoss {
  double value = 0.0;
  Eigen::VectorXd grad;  // dL^t / d(output)
};

// L^t = 0.5 * ||y - y*||^2, gradient y - y*.
LocalLoss van_rossum_step(const Eigen::VectorXd& y, const Eigen::VectorXd& y_star);

struct ReadoutLoss {
  double value = 0.0;
  Eigen::VectorXd logits;
  Eigen::MatrixXd step_grads;  // T x n_classes, gradient wrt readout at each step
  std::vector<int> argmax;     // max readout only: winning timestep per class
};

// Softmax cross-entropy of the time-summed readout.
ReadoutLoss sum_readout_loss(const Eigen::MatrixXd& readout, int label);
// Softmax cross-entropy of the per-class maximum over time; ties go to the
// earliest step, and only the winning step receives gradient.
ReadoutLoss max_readout_loss(const Eigen::MatrixXd& readout, int label);

// log-sum-exp(logits) - logits[label] and its gradient softmax - onehot.
double softmax_cross_entropy(const Eigen::VectorXd& logits, int label, Eigen::VectorXd* grad);

enum class HeadKind { van_rossum, local_mse, step_readout_ce, sum_readout_ce, max_readout_ce };
enum class Locality { online, locking };

struct ReadoutConfig {
  int n_classes = 2;
  // Leak of the non-spiking readout integrators: y' = beta_ro y + R s.
  double beta_ro = 0.9;
};

struct LossProgram {
  HeadKind head = HeadKind::sum_readout_ce;
  KernelSpec kernel;       // van_rossum only
  ReadoutConfig readout;   // readout heads only
  int label_delay = 0;     // loss at t uses the target from t - label_delay
  int readout_from = 0;    // first step that enters sum / max / step-CE aggregation

  Locality locality() const;
  bool uses_readout() const;
  bool uses_label() const;
  // Length of the vector the per-step loss is taken on (k_out or n_classes).
  int output_dim(int k_out) const;
};

// Composes a further label delay onto a program. Delays past the trial
// length are a ConfigError.
LossProgram delayed_label_wrap(const LossProgram& program, int delay, int trial_length);

// Per-trial supervision: a class label and/or a real-valued target stream
// (T rows). target_kernel records the kernel a stream was filtered with.
struct Target {
  int label = -1;
  Eigen::MatrixXd stream;
  std::optional<KernelSpec> target_kernel;
};

// Target stream built from target spikes using the program's own kernel.
Target spike_train_target(const Eigen::MatrixXd& target_spikes, const KernelSpec& kernel);

// Throws ConfigError / ShapeError / ParameterError when the target does not
// fit the program (missing label, wrong width, mismatched kernel, ...).
void check_target(const LossProgram& program, const Target& target, int trial_length, int k_out);

// Streaming state of a loss head.
struct HeadState {
  FilterState filter;          // van Rossum: per output neuron
  Eigen::VectorXd y;           // readout integrators
  Eigen::VectorXd acc;         // sum / max aggregate over the readout window
  std::vector<char> updated;   // max head: class took a new maximum this step
  bool any = false;            // aggregate has absorbed at least one step
  int t = -1;
};

HeadState head_init(const LossProgram& program, int k_out);
void head_advance(const LossProgram& program, const Eigen::MatrixXd& readout,
                  const Eigen::VectorXd& s_out, HeadState& state);
// Output the per-step loss is computed on: filtered spikes or readout.
const Eigen::VectorXd& head_output(const LossProgram& program, const HeadState& state);
// Whether step t carries a local loss term.
bool head_active(const LossProgram& program, int t);
// Per-step loss at state.t. Throws LockingError for locking heads.
LocalLoss head_local_loss(const LossProgram& program, const HeadState& state, const Target& target);
// End-of-trial loss for locking heads; grad is with respect to state.acc.
LocalLoss head_final_loss(const LossProgram& program, const HeadState& state, const Target& target);
// Predicted class (argmax of the aggregate) or -1 for regression heads.
int head_predict(const LossProgram& program, const HeadState& state);

// Streaming evaluation: carries the head state through a trial.
class StreamingLoss {
 public:
  StreamingLoss(LossProgram program, Eigen::MatrixXd readout, int k_out);

  // Advances one step and returns L^t. Throws LockingError for locking heads.
  double step(const Eigen::VectorXd& s_out, const Target& target);
  // Advances without evaluating (valid for every head).
  void absorb(const Eigen::VectorXd& s_out);
  // Total loss of the trial (final loss for locking heads).
  double finish(const Target& target);
  const HeadState& state() const { return state_; }

 private:
  LossProgram program_;
  Eigen::MatrixXd readout_;
  HeadState state_;
  double total_ = 0.0;
};

// Whole-trial evaluation by explicit convolution over the stored spike
// train; independent of the streaming recursions above.
double evaluate_loss_batch(const LossProgram& program, const Eigen::MatrixXd& readout,
                           const std::vector<Eigen::VectorXd>& spikes, const Target& target);

std::string to_string(HeadKind head);
HeadKind head_kind_from_string(const std::string& s);
std::string to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& s);

}  // namespace snnrtrl
