#include <optional>

#include "snnrtrl/engines.hpp"
#include "snnrtrl/errors.hpp"

namespace snnrtrl {

OnlineEngine::OnlineEngine(EngineKind kind, const NetworkSpec& net, LossProgram program,
                           GradOptions opts)
    : kind_(kind), net_(&net), program_(std::move(program)), opts_(opts), layout_(net, program_) {
  validate_network(net);
  grad_ = Eigen::VectorXd::Zero(layout_.size());
  cost_.alloc(grad_.size());
  std::int64_t state_elems = 0;
  for (const auto& layer : net.layers) state_elems += layer.state_size() + 2 * layer.k;
  cost_.alloc(state_elems + 2 * program_.output_dim(net.k_out()));
}

NetworkState OnlineEngine::advance_forward(const Eigen::VectorXd& x) {
  NetworkState prev = state_;
  state_ = network_step(*net_, prev, x, DynamicsOptions{opts_.smooth_forward});
  head_advance(program_, net_->readout, state_.back().s, head_);
  return prev;
}

std::optional<LocalLoss> OnlineEngine::local_loss(const Target& target) const {
  if (locking() || !head_active(program_, head_.t)) return std::nullopt;
  return head_local_loss(program_, head_, target);
}

GradientReport OnlineEngine::take_gradient() {
  GradientReport rep = make_report(kind_, layout_, grad_.cwiseProduct(param_mask(*net_, layout_)));
  rep.trace_mode = trace_mode_;
  rep.loss = trial_loss_;
  rep.peak_memory_elements = cost_.peak;
  rep.scalar_mult_count = cost_.mults;
  grad_.setZero();
  return rep;
}

namespace {

// d(head output)/d(theta) stages of the van Rossum filter, rows = output neurons.
struct FilterInfluence {
  Eigen::MatrixXd z1;
  Eigen::MatrixXd z2;
  bool two_stage = false;

  void reset(Eigen::Index rows, Eigen::Index cols, bool double_exp) {
    two_stage = double_exp;
    z1 = Eigen::MatrixXd::Zero(rows, cols);
    z2 = double_exp ? Eigen::MatrixXd::Zero(rows, cols) : Eigen::MatrixXd();
  }
  std::int64_t size() const { return z1.size() + z2.size(); }
  const Eigen::MatrixXd& out() const { return two_stage ? z2 : z1; }
};

// ---------------------------------------------------------------------------
// Exact forward-mode engine over the full network state.

class ExactEngine final : public OnlineEngine {
 public:
  ExactEngine(const NetworkSpec& net, const LossProgram& program, const GradOptions& opts)
      : OnlineEngine(EngineKind::rtrl_exact, net, program, opts) {
    trace_mode_ = TraceMode::dense;
    begin_trial();
    std::int64_t elems = 0;
    for (const auto& g : G_) elems += g.size();
    elems += gs_.size() + filt_.size() + gy_.size() + ga_.size();
    cost_.alloc(elems);
  }

  void begin_trial() override {
    const int p = layout_.size();
    state_ = initial_network_state(*net_);
    head_ = head_init(program_, net_->k_out());
    trial_loss_ = 0.0;
    G_.clear();
    for (const auto& layer : net_->layers) G_.push_back(Eigen::MatrixXd::Zero(layer.state_size(), p));
    gs_ = Eigen::MatrixXd::Zero(net_->k_out(), p);
    if (readout_head()) {
      gy_ = Eigen::MatrixXd::Zero(program_.readout.n_classes, p);
      if (locking()) ga_ = Eigen::MatrixXd::Zero(program_.readout.n_classes, p);
    } else {
      filt_.reset(net_->k_out(), p, program_.kernel.kind == KernelKind::double_exponential);
    }
  }

  double step(const Eigen::VectorXd& x, const Target& target) override {
    const NetworkState prev = advance_forward(x);
    const auto& net = *net_;
    const bool drop_explicit = net.mode == ArchMode::RD;
    const bool cross = !(net.mode == ArchMode::RD && opts_.detach_cross_layer);
    const Eigen::Index p = layout_.size();

    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const auto& layer = net.layers[l];
      const Eigen::VectorXd& x_l = l == 0 ? x : state_[l - 1].s;
      const JacobianParts jac =
          assemble_jacobians(layer, prev[l], x_l, net.surrogate, opts_.smooth_forward);
      const Eigen::MatrixXd H = drop_explicit ? jac.h_implicit : Eigen::MatrixXd(jac.h_implicit + jac.h_explicit);
      Eigen::MatrixXd next = H * G_[l];
      cost_.mults += H.rows() * H.cols() * p;

      const int mk = layer.state_size();
      const int n = layer.n_prev();
      const int w_off = layout_.w_offset(static_cast<int>(l));
      const int v_off = layout_.v_offset(static_cast<int>(l));
      for (int col = 0; col < jac.f_immediate.outerSize(); ++col) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(jac.f_immediate, col); it; ++it) {
          const int global = col < mk * n ? w_off + col : v_off + (col - mk * n);
          next(it.row(), global) += it.value();
        }
      }

      if (l > 0 && cross) {
        const auto& below = net.layers[l - 1];
        const Eigen::MatrixXd ds = spike_influence(below, state_[l - 1], G_[l - 1]);
        next.noalias() += (layer.scale() * layer.W) * ds;
        cost_.mults += ds.size() + layer.W.size() + layer.W.rows() * layer.W.cols() * p;
      }
      G_[l].swap(next);
    }

    gs_ = spike_influence(net.layers.back(), state_.back(), G_.back());
    cost_.mults += gs_.size();
    const Eigen::VectorXd& s_out = state_.back().s;

    if (readout_head()) {
      gy_ *= program_.readout.beta_ro;
      gy_.noalias() += readout() * gs_;
      cost_.mults += gy_.size() + readout().rows() * readout().cols() * p;
      const int r_off = layout_.r_offset();
      const int k = static_cast<int>(s_out.size());
      for (int c = 0; c < gy_.rows(); ++c) {
        for (int j = 0; j < k; ++j) gy_(c, r_off + c * k + j) += s_out[j];
      }
      if (locking()) {
        accumulate_locking(gy_);
      }
    } else {
      const KernelSpec& ks = program_.kernel;
      if (filt_.two_stage) {
        filt_.z1 = ks.rise_decay() * filt_.z1 + ks.input_gain() * gs_;
        filt_.z2 = ks.decay() * filt_.z2 + filt_.z1;
      } else {
        filt_.z1 = ks.decay() * filt_.z1 + ks.input_gain() * gs_;
      }
      cost_.mults += filt_.size();
    }

    const auto ll = local_loss(target);
    if (!ll) return 0.0;
    const Eigen::MatrixXd& out = readout_head() ? gy_ : filt_.out();
    grad_.noalias() += out.transpose() * ll->grad;
    cost_.mults += out.size();
    trial_loss_ += ll->value;
    return ll->value;
  }

  double finish(const Target& target) override {
    if (locking()) {
      const LocalLoss fl = head_final_loss(program_, head_, target);
      grad_.noalias() += ga_.transpose() * fl.grad;
      cost_.mults += ga_.size();
      trial_loss_ += fl.value;
    }
    return trial_loss_;
  }

 private:
  // diag(sigma'(P u)) P G: influence on the layer's spikes.
  Eigen::MatrixXd spike_influence(const LayerSpec& layer, const LayerState& st,
                                  const Eigen::MatrixXd& G) const {
    const Eigen::VectorXd d = surrogate_deriv(spiking_potential(layer, st.u), net_->surrogate,
                                              layer.threshold());
    const int m = layer.m();
    const int c = layer.spike_compartment();
    Eigen::MatrixXd out(layer.k, G.cols());
    for (int i = 0; i < layer.k; ++i) out.row(i) = d[i] * G.row(i * m + c);
    return out;
  }

  void accumulate_locking(const Eigen::MatrixXd& gy) {
    if (head_.t < program_.readout_from) return;
    if (program_.head == HeadKind::max_readout_ce) {
      for (Eigen::Index c = 0; c < gy.rows(); ++c) {
        if (head_.updated[static_cast<std::size_t>(c)]) ga_.row(c) = gy.row(c);
      }
    } else {
      ga_ += gy;
    }
  }

  std::vector<Eigen::MatrixXd> G_;
  Eigen::MatrixXd gs_;
  Eigen::MatrixXd gy_;
  Eigen::MatrixXd ga_;
  FilterInfluence filt_;
};

// ---------------------------------------------------------------------------
// Sparse RTRL and mixed mode over a single hidden layer. Both keep per-neuron
// traces with the explicit recurrence dropped; they differ in how the loss
// head is differentiated:
//   sparse: forward mode through the head (dense readout influence)
//   mixed:  per-neuron filtered eligibility plus a within-step backward pass

bool instantaneous_head(const LossProgram& program) {
  return (program.head == HeadKind::local_mse || program.head == HeadKind::step_readout_ce) &&
         program.readout.beta_ro == 0.0;
}

class TraceEngine final : public OnlineEngine {
 public:
  TraceEngine(EngineKind kind, const NetworkSpec& net, const LossProgram& program,
              const GradOptions& opts)
      : OnlineEngine(kind, net, program, opts) {
    if (net.layers.size() != 1) {
      throw UsageError(to_string(kind) + " supports a single hidden layer; use rtrl_exact or bptt");
    }
    mixed_ = kind == EngineKind::mixed;
    if (mixed_ && locking()) {
      throw LockingError("mixed mode needs an instantaneous loss head; " + to_string(program.head) +
                         " is only available at the end of the trial");
    }
    const auto& layer = net.layers[0];
    const bool linear = layer.m() == 1 && !opts.smooth_forward;
    if (mixed_) {
      trace_mode_ = linear ? TraceMode::vector : TraceMode::block;
    } else {
      trace_mode_ = linear && instantaneous_head(program) ? TraceMode::vector : TraceMode::block;
    }

    m_ = layer.m();
    k_ = layer.k;
    n_ = layer.n_prev();
    w_ = n_ + (layer.has_recurrent() ? k_ : 0);
    const int w_off = layout_.w_offset(0);
    const int v_off = layout_.v_offset(0);
    glob_.resize(static_cast<std::size_t>(k_ * m_ * w_));
    for (int i = 0; i < k_; ++i) {
      for (int r = 0; r < m_; ++r) {
        const int row = i * m_ + r;
        for (int j = 0; j < w_; ++j) {
          glob_[static_cast<std::size_t>((i * m_ + r) * w_ + j)] =
              j < n_ ? w_off + row * n_ + j : v_off + row * k_ + (j - n_);
        }
      }
    }
    begin_trial();
    cost_.alloc(store_.stored_elements() + gs_.size() + gy_.size() + ga_.size() + filt_.size() +
                z_ro_.size());
  }

  void begin_trial() override {
    const auto& layer = net_->layers[0];
    state_ = initial_network_state(*net_);
    head_ = head_init(program_, k_);
    trial_loss_ = 0.0;
    store_ = make_influence_store(layer, trace_mode_);
    gs_ = Eigen::MatrixXd::Zero(k_, m_ * w_);
    const int C = program_.readout.n_classes;
    if (!readout_head()) {
      filt_.reset(k_, m_ * w_, program_.kernel.kind == KernelKind::double_exponential);
    } else if (mixed_) {
      filt_.reset(k_, m_ * w_, false);
      z_ro_ = Eigen::VectorXd::Zero(k_);
    } else if (trace_mode_ != TraceMode::vector) {
      gy_ = Eigen::MatrixXd::Zero(C, layout_.size());
      if (locking()) ga_ = Eigen::MatrixXd::Zero(C, layout_.size());
    }
  }

  double step(const Eigen::VectorXd& x, const Target& target) override {
    const NetworkState prev = advance_forward(x);
    const auto& layer = net_->layers[0];
    const JacobianParts jac =
        assemble_jacobians(layer, prev[0], x, net_->surrogate, opts_.smooth_forward);
    store_ = rtrl_sparse_step(store_, jac);
    cost_.mults += trace_mode_ == TraceMode::block
                       ? static_cast<std::int64_t>(k_) * m_ * m_ * m_ * w_ + k_ * m_ * w_
                       : w_;

    const Eigen::VectorXd& s_out = state_[0].s;
    const Eigen::VectorXd pu = spiking_potential(layer, state_[0].u);
    const Eigen::VectorXd d = surrogate_deriv(pu, net_->surrogate, layer.threshold());

    // Vector traces with an instantaneous head: the three-factor rule.
    if (!mixed_ && trace_mode_ == TraceMode::vector) {
      const auto ll = local_loss(target);
      if (!ll) return 0.0;
      const Eigen::VectorXd delta = readout().transpose() * ll->grad;
      add_three_factor(delta, pu);
      add_readout_grad(ll->grad, s_out);
      cost_.mults += readout().size() * 2;
      trial_loss_ += ll->value;
      return ll->value;
    }

    update_spike_influence(d);

    if (!readout_head()) {
      const KernelSpec& ks = program_.kernel;
      if (filt_.two_stage) {
        filt_.z1 = ks.rise_decay() * filt_.z1 + ks.input_gain() * gs_;
        filt_.z2 = ks.decay() * filt_.z2 + filt_.z1;
      } else {
        filt_.z1 = ks.decay() * filt_.z1 + ks.input_gain() * gs_;
      }
      cost_.mults += filt_.size();
      const auto ll = local_loss(target);
      if (!ll) return 0.0;
      add_local(ll->grad, filt_.out());
      trial_loss_ += ll->value;
      return ll->value;
    }

    if (mixed_) {
      const double b = program_.readout.beta_ro;
      filt_.z1 = b * filt_.z1 + gs_;
      z_ro_ = b * z_ro_ + s_out;
      cost_.mults += filt_.size() + z_ro_.size();
      const auto ll = local_loss(target);
      if (!ll) return 0.0;
      // Backward through the head within this step only.
      const Eigen::VectorXd delta = readout().transpose() * ll->grad;
      cost_.mults += readout().size();
      add_local(delta, filt_.z1);
      add_readout_grad(ll->grad, z_ro_);
      trial_loss_ += ll->value;
      return ll->value;
    }

    // Sparse: forward mode through the readout integrators.
    gy_ *= program_.readout.beta_ro;
    cost_.mults += gy_.size();
    const Eigen::MatrixXd& R = readout();
    for (int i = 0; i < k_; ++i) {
      for (int q = 0; q < m_ * w_; ++q) {
        const double g = gs_(i, q);
        if (g == 0.0) continue;
        gy_.col(glob_[static_cast<std::size_t>(i * m_ * w_ + q)]) += g * R.col(i);
      }
    }
    cost_.mults += static_cast<std::int64_t>(R.rows()) * k_ * m_ * w_;
    const int r_off = layout_.r_offset();
    for (int c = 0; c < gy_.rows(); ++c) {
      for (int j = 0; j < k_; ++j) gy_(c, r_off + c * k_ + j) += s_out[j];
    }
    if (locking()) {
      if (head_.t >= program_.readout_from) {
        if (program_.head == HeadKind::max_readout_ce) {
          for (Eigen::Index c = 0; c < gy_.rows(); ++c) {
            if (head_.updated[static_cast<std::size_t>(c)]) ga_.row(c) = gy_.row(c);
          }
        } else {
          ga_ += gy_;
        }
      }
      return 0.0;
    }
    const auto ll = local_loss(target);
    if (!ll) return 0.0;
    grad_.noalias() += gy_.transpose() * ll->grad;
    cost_.mults += gy_.size();
    trial_loss_ += ll->value;
    return ll->value;
  }

  double finish(const Target& target) override {
    if (locking()) {
      const LocalLoss fl = head_final_loss(program_, head_, target);
      grad_.noalias() += ga_.transpose() * fl.grad;
      cost_.mults += ga_.size();
      trial_loss_ += fl.value;
    }
    return trial_loss_;
  }

 private:
  // Rows of d(spikes)/d(local params) for every neuron.
  void update_spike_influence(const Eigen::VectorXd& d) {
    const int c = net_->layers[0].spike_compartment();
    if (trace_mode_ == TraceMode::block) {
      for (int i = 0; i < k_; ++i) gs_.row(i) = d[i] * store_.blocks[static_cast<std::size_t>(i)].row(c);
    } else {
      Eigen::RowVectorXd z(w_);
      z.head(n_) = store_.q_in.transpose();
      if (w_ > n_) z.tail(k_) = store_.q.transpose();
      z *= store_.scale;
      for (int i = 0; i < k_; ++i) gs_.row(i) = d[i] * z;
    }
    cost_.mults += gs_.size();
  }

  // grad[theta_i] += delta_i * E(i, :) for per-neuron eligibility rows E.
  void add_local(const Eigen::VectorXd& delta, const Eigen::MatrixXd& E) {
    const int cols = m_ * w_;
    for (int i = 0; i < k_; ++i) {
      if (delta[i] == 0.0) continue;
      for (int q = 0; q < cols; ++q) grad_[glob_[static_cast<std::size_t>(i * cols + q)]] += delta[i] * E(i, q);
    }
    cost_.mults += E.size();
  }

  void add_three_factor(const Eigen::VectorXd& delta, const Eigen::VectorXd& pu) {
    const auto& layer = net_->layers[0];
    const Eigen::MatrixXd gw = three_factor_gradient(delta, pu, store_.q_in, net_->surrogate,
                                                     layer.threshold());
    for (int i = 0; i < k_; ++i) {
      for (int j = 0; j < n_; ++j) grad_[glob_[static_cast<std::size_t>(i * w_ + j)]] += store_.scale * gw(i, j);
    }
    cost_.mults += 2 * gw.size() + k_;
    if (w_ > n_) {
      const Eigen::MatrixXd gv = three_factor_gradient(delta, pu, store_.q, net_->surrogate,
                                                       layer.threshold());
      for (int i = 0; i < k_; ++i) {
        for (int j = 0; j < k_; ++j) grad_[glob_[static_cast<std::size_t>(i * w_ + n_ + j)]] += store_.scale * gv(i, j);
      }
      cost_.mults += 2 * gv.size();
    }
  }

  void add_readout_grad(const Eigen::VectorXd& g, const Eigen::VectorXd& pre) {
    const int r_off = layout_.r_offset();
    for (Eigen::Index c = 0; c < g.size(); ++c) {
      for (int j = 0; j < k_; ++j) grad_[r_off + c * k_ + j] += g[c] * pre[j];
    }
    cost_.mults += g.size() * k_;
  }

  bool mixed_ = false;
  int m_ = 1, k_ = 0, n_ = 0, w_ = 0;
  std::vector<int> glob_;
  InfluenceStore store_;
  Eigen::MatrixXd gs_;
  Eigen::MatrixXd gy_;
  Eigen::MatrixXd ga_;
  FilterInfluence filt_;
  Eigen::VectorXd z_ro_;
};

}  // namespace

std::unique_ptr<OnlineEngine> make_online_engine(EngineKind kind, const NetworkSpec& net,
                                                 const LossProgram& program,
                                                 const GradOptions& opts) {
  switch (kind) {
    case EngineKind::rtrl_exact:
      return std::make_unique<ExactEngine>(net, program, opts);
    case EngineKind::rtrl_sparse:
    case EngineKind::mixed:
      return std::make_unique<TraceEngine>(kind, net, program, opts);
    case EngineKind::bptt:
    case EngineKind::finite_difference:
      break;
  }
  throw UsageError(to_string(kind) + " is not a streaming engine");
}

}  // namespace snnrtrl
