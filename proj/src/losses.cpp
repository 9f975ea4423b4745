#include "snnrtrl/losses.hpp"

#include <cmath>
#include <utility>

#include "snnrtrl/errors.hpp"

namespace snnrtrl {

double KernelSpec::decay() const { return std::exp(-dt / tau); }
double KernelSpec::rise_decay() const { return std::exp(-dt / tau_rise); }

double KernelSpec::input_gain() const {
  if (!normalized) return 1.0;
  return kind == KernelKind::exponential ? dt / tau : (dt / tau_rise) * (dt / tau);
}

void validate_kernel(const KernelSpec& spec) {
  if (!(spec.tau > 0.0)) throw ParameterError("kernel tau must be > 0");
  if (!(spec.dt > 0.0)) throw ParameterError("kernel dt must be > 0");
  if (spec.kind == KernelKind::double_exponential && !(spec.tau_rise > 0.0)) {
    throw ParameterError("kernel tau_rise must be > 0");
  }
}

FilterState FilterState::zeros(Eigen::Index n) {
  return FilterState{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
}

const Eigen::VectorXd& FilterState::output(const KernelSpec& spec) const {
  return spec.kind == KernelKind::exponential ? z1 : z2;
}

FilterState kernel_filter_step(const FilterState& z, const Eigen::VectorXd& s,
                               const KernelSpec& spec) {
  if (z.z1.size() != s.size()) throw ShapeError("kernel_filter_step: state/input length mismatch");
  FilterState next;
  if (spec.kind == KernelKind::exponential) {
    next.z1 = spec.decay() * z.z1 + spec.input_gain() * s;
    next.z2 = z.z2;
  } else {
    next.z1 = spec.rise_decay() * z.z1 + spec.input_gain() * s;
    next.z2 = spec.decay() * z.z2 + next.z1;
  }
  return next;
}

Eigen::MatrixXd filter_spike_train(const Eigen::MatrixXd& spikes, const KernelSpec& spec) {
  validate_kernel(spec);
  Eigen::MatrixXd out(spikes.rows(), spikes.cols());
  FilterState z = FilterState::zeros(spikes.cols());
  for (Eigen::Index t = 0; t < spikes.rows(); ++t) {
    z = kernel_filter_step(z, spikes.row(t).transpose(), spec);
    out.row(t) = z.output(spec).transpose();
  }
  return out;
}

LocalLoss van_rossum_step(const Eigen::VectorXd& y, const Eigen::VectorXd& y_star) {
  if (y.size() != y_star.size()) throw ShapeError("van_rossum_step: output/target length mismatch");
  LocalLoss out;
  out.grad = y - y_star;
  out.value = 0.5 * out.grad.squaredNorm();
  return out;
}

double softmax_cross_entropy(const Eigen::VectorXd& logits, int label, Eigen::VectorXd* grad) {
  if (label < 0 || label >= logits.size()) {
    throw ParameterError("label " + std::to_string(label) + " outside [0, " +
                         std::to_string(logits.size()) + ")");
  }
  const double mx = logits.maxCoeff();
  const Eigen::VectorXd e = (logits.array() - mx).exp().matrix();
  const double z = e.sum();
  if (grad) {
    *grad = e / z;
    (*grad)[label] -= 1.0;
  }
  return mx + std::log(z) - logits[label];
}

ReadoutLoss sum_readout_loss(const Eigen::MatrixXd& readout, int label) {
  ReadoutLoss out;
  out.logits = readout.colwise().sum().transpose();
  Eigen::VectorXd g;
  out.value = softmax_cross_entropy(out.logits, label, &g);
  out.step_grads = g.transpose().replicate(readout.rows(), 1);
  return out;
}

ReadoutLoss max_readout_loss(const Eigen::MatrixXd& readout, int label) {
  if (readout.rows() == 0) throw ParameterError("max_readout_loss: empty trajectory");
  ReadoutLoss out;
  const Eigen::Index C = readout.cols();
  out.logits.resize(C);
  out.argmax.assign(static_cast<std::size_t>(C), 0);
  for (Eigen::Index c = 0; c < C; ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index t = 1; t < readout.rows(); ++t) {
      if (readout(t, c) > readout(best, c)) best = t;
    }
    out.argmax[static_cast<std::size_t>(c)] = static_cast<int>(best);
    out.logits[c] = readout(best, c);
  }
  Eigen::VectorXd g;
  out.value = softmax_cross_entropy(out.logits, label, &g);
  out.step_grads = Eigen::MatrixXd::Zero(readout.rows(), C);
  for (Eigen::Index c = 0; c < C; ++c) out.step_grads(out.argmax[static_cast<std::size_t>(c)], c) = g[c];
  return out;
}

Locality LossProgram::locality() const {
  switch (head) {
    case HeadKind::van_rossum:
    case HeadKind::local_mse:
    case HeadKind::step_readout_ce:
      return Locality::online;
    case HeadKind::sum_readout_ce:
    case HeadKind::max_readout_ce:
      return Locality::locking;
  }
  return Locality::locking;
}

bool LossProgram::uses_readout() const { return head != HeadKind::van_rossum; }

bool LossProgram::uses_label() const {
  return head == HeadKind::step_readout_ce || head == HeadKind::sum_readout_ce ||
         head == HeadKind::max_readout_ce;
}

int LossProgram::output_dim(int k_out) const {
  return head == HeadKind::van_rossum ? k_out : readout.n_classes;
}

LossProgram delayed_label_wrap(const LossProgram& program, int delay, int trial_length) {
  if (delay < 0) throw ConfigError("label delay must be >= 0");
  LossProgram out = program;
  out.label_delay = program.label_delay + delay;
  if (out.label_delay > trial_length) {
    throw ConfigError("label delay " + std::to_string(out.label_delay) + " exceeds trial length " +
                      std::to_string(trial_length));
  }
  return out;
}

Target spike_train_target(const Eigen::MatrixXd& target_spikes, const KernelSpec& kernel) {
  Target t;
  t.stream = filter_spike_train(target_spikes, kernel);
  t.target_kernel = kernel;
  return t;
}

void check_target(const LossProgram& program, const Target& target, int trial_length, int k_out) {
  if (program.label_delay < 0) throw ConfigError("label_delay must be >= 0");
  if (program.label_delay > trial_length) {
    throw ConfigError("label delay " + std::to_string(program.label_delay) +
                      " exceeds trial length " + std::to_string(trial_length));
  }
  if (program.uses_label()) {
    if (target.label < 0 || target.label >= program.readout.n_classes) {
      throw ParameterError("label " + std::to_string(target.label) + " outside [0, " +
                           std::to_string(program.readout.n_classes) + ")");
    }
    return;
  }
  if (target.stream.rows() < trial_length) {
    throw ShapeError("target stream has " + std::to_string(target.stream.rows()) +
                     " rows, trial has " + std::to_string(trial_length));
  }
  if (target.stream.cols() != program.output_dim(k_out)) {
    throw ShapeError("target stream width " + std::to_string(target.stream.cols()) +
                     " does not match output dimension " + std::to_string(program.output_dim(k_out)));
  }
  if (program.head == HeadKind::van_rossum && target.target_kernel &&
      !(*target.target_kernel == program.kernel)) {
    throw ConfigError("target stream was filtered with a different kernel than the output path");
  }
}

HeadState head_init(const LossProgram& program, int k_out) {
  HeadState s;
  if (program.head == HeadKind::van_rossum) {
    validate_kernel(program.kernel);
    s.filter = FilterState::zeros(k_out);
  } else {
    const int C = program.readout.n_classes;
    s.y = Eigen::VectorXd::Zero(C);
    s.acc = Eigen::VectorXd::Zero(C);
    s.updated.assign(static_cast<std::size_t>(C), 0);
  }
  return s;
}

void head_advance(const LossProgram& program, const Eigen::MatrixXd& readout,
                  const Eigen::VectorXd& s_out, HeadState& state) {
  ++state.t;
  if (program.head == HeadKind::van_rossum) {
    state.filter = kernel_filter_step(state.filter, s_out, program.kernel);
    return;
  }
  if (readout.rows() != program.readout.n_classes || readout.cols() != s_out.size()) {
    throw ShapeError("readout weights do not match n_classes x k_out");
  }
  state.y = program.readout.beta_ro * state.y + readout * s_out;
  std::fill(state.updated.begin(), state.updated.end(), 0);
  if (state.t < program.readout_from) return;
  if (program.head == HeadKind::max_readout_ce) {
    for (Eigen::Index c = 0; c < state.y.size(); ++c) {
      if (!state.any || state.y[c] > state.acc[c]) {
        state.acc[c] = state.y[c];
        state.updated[static_cast<std::size_t>(c)] = 1;
      }
    }
  } else {
    state.acc += state.y;
  }
  state.any = true;
}

const Eigen::VectorXd& head_output(const LossProgram& program, const HeadState& state) {
  return program.head == HeadKind::van_rossum ? state.filter.output(program.kernel) : state.y;
}

bool head_active(const LossProgram& program, int t) {
  switch (program.head) {
    case HeadKind::van_rossum:
    case HeadKind::local_mse:
      return t >= program.label_delay;
    case HeadKind::step_readout_ce:
      return t >= program.label_delay && t >= program.readout_from;
    default:
      return false;
  }
}

LocalLoss head_local_loss(const LossProgram& program, const HeadState& state, const Target& target) {
  if (program.locality() == Locality::locking) {
    throw LockingError(to_string(program.head) + " cannot be evaluated per step");
  }
  const Eigen::VectorXd& out = head_output(program, state);
  if (!head_active(program, state.t)) return LocalLoss{0.0, Eigen::VectorXd::Zero(out.size())};
  if (program.head == HeadKind::step_readout_ce) {
    LocalLoss l;
    l.value = softmax_cross_entropy(out, target.label, &l.grad);
    return l;
  }
  const Eigen::VectorXd y_star = target.stream.row(state.t - program.label_delay).transpose();
  return van_rossum_step(out, y_star);
}

LocalLoss head_final_loss(const LossProgram& program, const HeadState& state, const Target& target) {
  if (program.locality() != Locality::locking) {
    throw UsageError("head_final_loss applies to locking heads only");
  }
  if (!state.any) throw ParameterError("readout window is empty");
  LocalLoss l;
  l.value = softmax_cross_entropy(state.acc, target.label, &l.grad);
  return l;
}

int head_predict(const LossProgram& program, const HeadState& state) {
  if (!program.uses_label() || !state.any) return -1;
  Eigen::Index best = 0;
  state.acc.maxCoeff(&best);
  return static_cast<int>(best);
}

StreamingLoss::StreamingLoss(LossProgram program, Eigen::MatrixXd readout, int k_out)
    : program_(std::move(program)), readout_(std::move(readout)), state_(head_init(program_, k_out)) {}

double StreamingLoss::step(const Eigen::VectorXd& s_out, const Target& target) {
  if (program_.locality() == Locality::locking) {
    throw LockingError(to_string(program_.head) + " needs the whole trial; per-step loss unavailable");
  }
  head_advance(program_, readout_, s_out, state_);
  const double l = head_local_loss(program_, state_, target).value;
  total_ += l;
  return l;
}

void StreamingLoss::absorb(const Eigen::VectorXd& s_out) {
  head_advance(program_, readout_, s_out, state_);
  if (program_.locality() == Locality::online) {
    throw UsageError("absorb is for locking heads; use step for online heads");
  }
}

double StreamingLoss::finish(const Target& target) {
  if (program_.locality() == Locality::locking) return head_final_loss(program_, state_, target).value;
  return total_;
}

namespace {

// Impulse response h[n] of the program's kernel.
std::vector<double> impulse_response(const KernelSpec& spec, int length) {
  std::vector<double> h(static_cast<std::size_t>(length));
  const double kd = spec.decay();
  const double kr = spec.rise_decay();
  const double g = spec.input_gain();
  for (int n = 0; n < length; ++n) {
    if (spec.kind == KernelKind::exponential) {
      h[static_cast<std::size_t>(n)] = g * std::pow(kd, n);
    } else {
      double acc = 0.0;
      for (int a = 0; a <= n; ++a) acc += std::pow(kr, a) * std::pow(kd, n - a);
      h[static_cast<std::size_t>(n)] = g * acc;
    }
  }
  return h;
}

Eigen::MatrixXd convolve(const std::vector<Eigen::VectorXd>& x, const std::vector<double>& h) {
  const auto T = static_cast<Eigen::Index>(x.size());
  const Eigen::Index d = T > 0 ? x[0].size() : 0;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index tau = 0; tau <= t; ++tau) {
      out.row(t) += h[static_cast<std::size_t>(t - tau)] * x[static_cast<std::size_t>(tau)].transpose();
    }
  }
  return out;
}

}  // namespace

double evaluate_loss_batch(const LossProgram& program, const Eigen::MatrixXd& readout,
                           const std::vector<Eigen::VectorXd>& spikes, const Target& target) {
  const int T = static_cast<int>(spikes.size());
  Eigen::MatrixXd out;
  if (program.head == HeadKind::van_rossum) {
    validate_kernel(program.kernel);
    out = convolve(spikes, impulse_response(program.kernel, T));
  } else {
    std::vector<Eigen::VectorXd> drive;
    drive.reserve(spikes.size());
    for (const auto& s : spikes) drive.push_back(readout * s);
    std::vector<double> h(static_cast<std::size_t>(T));
    for (int n = 0; n < T; ++n) h[static_cast<std::size_t>(n)] = std::pow(program.readout.beta_ro, n);
    out = convolve(drive, h);
  }

  double total = 0.0;
  switch (program.head) {
    case HeadKind::van_rossum:
    case HeadKind::local_mse:
      for (int t = program.label_delay; t < T; ++t) {
        total += 0.5 * (out.row(t) - target.stream.row(t - program.label_delay)).squaredNorm();
      }
      return total;
    case HeadKind::step_readout_ce:
      for (int t = std::max(program.label_delay, program.readout_from); t < T; ++t) {
        total += softmax_cross_entropy(out.row(t).transpose(), target.label, nullptr);
      }
      return total;
    case HeadKind::sum_readout_ce:
    case HeadKind::max_readout_ce: {
      const int from = std::min(program.readout_from, T);
      const Eigen::MatrixXd window = out.bottomRows(T - from);
      return program.head == HeadKind::sum_readout_ce ? sum_readout_loss(window, target.label).value
                                                      : max_readout_loss(window, target.label).value;
    }
  }
  return total;
}

std::string to_string(HeadKind head) {
  switch (head) {
    case HeadKind::van_rossum: return "van_rossum";
    case HeadKind::local_mse: return "local_mse";
    case HeadKind::step_readout_ce: return "step_readout_ce";
    case HeadKind::sum_readout_ce: return "sum_readout_ce";
    case HeadKind::max_readout_ce: return "max_readout_ce";
  }
  return "?";
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "van_rossum") return HeadKind::van_rossum;
  if (s == "local_mse") return HeadKind::local_mse;
  if (s == "step_readout_ce") return HeadKind::step_readout_ce;
  if (s == "sum_readout_ce") return HeadKind::sum_readout_ce;
  if (s == "max_readout_ce") return HeadKind::max_readout_ce;
  throw ConfigError("unknown loss head '" + s + "'");
}

std::string to_string(KernelKind kind) {
  return kind == KernelKind::exponential ? "exponential" : "double_exponential";
}

KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "exponential") return KernelKind::exponential;
  if (s == "double_exponential") return KernelKind::double_exponential;
  throw ConfigError("unknown kernel kind '" + s + "'");
}

}  // namespace snnrtrl
