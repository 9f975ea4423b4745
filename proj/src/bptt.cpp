#include "snnrtrl/engines.hpp"
#include "snnrtrl/errors.hpp"

namespace snnrtrl {

namespace {

// dL/d(head output) at every step, filled by replaying the head forward.
struct HeadCredit {
  std::vector<Eigen::VectorXd> e;  // T entries of length output_dim
  double loss = 0.0;
};

HeadCredit head_credit(const NetworkSpec& net, const Trajectory& traj, const LossProgram& program,
                       const Target& target) {
  const int T = traj.length();
  const int dim = program.output_dim(net.k_out());
  HeadCredit hc;
  hc.e.assign(static_cast<std::size_t>(T), Eigen::VectorXd::Zero(dim));
  HeadState hs = head_init(program, net.k_out());
  const bool locking = program.locality() == Locality::locking;
  std::vector<int> last_update(static_cast<std::size_t>(dim), -1);
  for (int t = 0; t < T; ++t) {
    head_advance(program, net.readout, traj.steps[static_cast<std::size_t>(t)].back().s, hs);
    if (locking) {
      for (int c = 0; c < dim && program.head == HeadKind::max_readout_ce; ++c) {
        if (hs.updated[static_cast<std::size_t>(c)]) last_update[static_cast<std::size_t>(c)] = t;
      }
      continue;
    }
    if (!head_active(program, t)) continue;
    const LocalLoss ll = head_local_loss(program, hs, target);
    hc.e[static_cast<std::size_t>(t)] = ll.grad;
    hc.loss += ll.value;
  }
  if (locking) {
    const LocalLoss fl = head_final_loss(program, hs, target);
    hc.loss = fl.value;
    if (program.head == HeadKind::sum_readout_ce) {
      for (int t = program.readout_from; t < T; ++t) hc.e[static_cast<std::size_t>(t)] = fl.grad;
    } else {
      for (int c = 0; c < dim; ++c) {
        const int t = last_update[static_cast<std::size_t>(c)];
        if (t >= 0) hc.e[static_cast<std::size_t>(t)][c] = fl.grad[c];
      }
    }
  }
  return hc;
}

}  // namespace

GradientReport bptt_gradient(const Trajectory& traj, const NetworkSpec& net, const Raster& input,
                             const LossProgram& program, const Target& target,
                             const GradOptions& opts) {
  if (!traj.stored) throw UsageError("bptt_gradient needs the stored trajectory");
  validate_network(net);
  const int T = traj.length();
  if (input.steps() != T) throw ShapeError("input raster length does not match the trajectory");
  check_target(program, target, T, net.k_out());

  const ParamLayout layout(net, program);
  CostCounter cost;
  std::int64_t per_step = 0;
  for (const auto& layer : net.layers) per_step += layer.state_size() + layer.k;
  cost.alloc(per_step * T);
  cost.alloc(static_cast<std::int64_t>(program.output_dim(net.k_out())) * T);
  cost.alloc(layout.size());

  const HeadCredit hc = head_credit(net, traj, program, target);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout.size());

  const std::size_t L = net.layers.size();
  std::vector<Eigen::VectorXd> c_u_next(L);
  std::vector<Eigen::VectorXd> from_above(L);
  for (std::size_t l = 0; l < L; ++l) {
    c_u_next[l] = Eigen::VectorXd::Zero(net.layers[l].state_size());
    from_above[l] = Eigen::VectorXd::Zero(net.layers[l].k);
  }
  const int dim = program.output_dim(net.k_out());
  Eigen::VectorXd c_h1 = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd c_h2 = Eigen::VectorXd::Zero(dim);
  std::int64_t adj = 2 * dim;
  for (std::size_t l = 0; l < L; ++l) adj += 2 * net.layers[l].state_size() + 2 * net.layers[l].k;
  cost.alloc(adj);

  const bool drop_explicit = net.mode == ArchMode::RD;
  const bool cross = !(net.mode == ArchMode::RD && opts.detach_cross_layer);
  const int r_off = layout.r_offset();

  for (int t = T - 1; t >= 0; --t) {
    const NetworkState& now = traj.steps[static_cast<std::size_t>(t)];
    const Eigen::VectorXd& s_out = now.back().s;
    const Eigen::VectorXd& e = hc.e[static_cast<std::size_t>(t)];

    // Credit reaching the output spikes through the head filters.
    Eigen::VectorXd e_s;
    if (program.uses_readout()) {
      c_h1 = e + program.readout.beta_ro * c_h1;
      e_s = net.readout.transpose() * c_h1;
      const int k = static_cast<int>(s_out.size());
      for (int c = 0; c < dim; ++c) {
        for (int j = 0; j < k; ++j) grad[r_off + c * k + j] += c_h1[c] * s_out[j];
      }
      cost.mults += dim + 2 * net.readout.size();
    } else if (program.kernel.kind == KernelKind::double_exponential) {
      c_h2 = e + program.kernel.decay() * c_h2;
      c_h1 = c_h2 + program.kernel.rise_decay() * c_h1;
      e_s = program.kernel.input_gain() * c_h1;
      cost.mults += 2 * dim;
    } else {
      c_h1 = e + program.kernel.decay() * c_h1;
      e_s = program.kernel.input_gain() * c_h1;
      cost.mults += dim;
    }

    for (std::size_t li = L; li-- > 0;) {
      const auto& layer = net.layers[li];
      const int m = layer.m();
      const int k = layer.k;
      const int sc = layer.spike_compartment();
      const double scale = layer.scale();
      const Eigen::MatrixXd A = layer.coupling();
      const Eigen::VectorXd d =
          surrogate_deriv(spiking_potential(layer, now[li].u), net.surrogate, layer.threshold());

      // Credit on this layer's spikes at t: from above (or the head) and
      // from the next step of this layer.
      Eigen::VectorXd c_s = li + 1 == L ? e_s : from_above[li];
      const Eigen::VectorXd& cn = c_u_next[li];
      if (layer.has_recurrent() && !drop_explicit) {
        c_s.noalias() += scale * (layer.V.transpose() * cn);
        cost.mults += layer.V.size() + k;
      }
      if (opts.smooth_forward) {
        for (int i = 0; i < k; ++i) {
          c_s[i] -= layer.threshold() * A.col(sc).dot(cn.segment(i * m, m));
        }
        cost.mults += static_cast<std::int64_t>(k) * (m + 1);
      }

      Eigen::VectorXd c_u(layer.state_size());
      for (int i = 0; i < k; ++i) c_u.segment(i * m, m).noalias() = A.transpose() * cn.segment(i * m, m);
      for (int i = 0; i < k; ++i) c_u[i * m + sc] += d[i] * c_s[i];
      cost.mults += static_cast<std::int64_t>(k) * m * m + k;

      const Eigen::VectorXd x = li == 0 ? input.row(t) : now[li - 1].s;
      const int n = static_cast<int>(x.size());
      const int mk = layer.state_size();
      const int w_off = layout.w_offset(static_cast<int>(li));
      for (int r = 0; r < mk; ++r) {
        const double cr = scale * c_u[r];
        for (int j = 0; j < n; ++j) grad[w_off + r * n + j] += cr * x[j];
      }
      cost.mults += static_cast<std::int64_t>(mk) * (n + 1);
      if (layer.has_recurrent() && t > 0) {
        const Eigen::VectorXd& s_prev = traj.steps[static_cast<std::size_t>(t - 1)][li].s;
        const int v_off = layout.v_offset(static_cast<int>(li));
        for (int r = 0; r < mk; ++r) {
          const double cr = scale * c_u[r];
          for (int j = 0; j < k; ++j) grad[v_off + r * k + j] += cr * s_prev[j];
        }
        cost.mults += static_cast<std::int64_t>(mk) * (k + 1);
      }
      if (li > 0) {
        if (cross) {
          from_above[li - 1] = scale * (layer.W.transpose() * c_u);
          cost.mults += layer.W.size() + layer.W.cols();
        } else {
          from_above[li - 1].setZero();
        }
      }
      c_u_next[li] = c_u;
    }
  }

  GradientReport rep = make_report(EngineKind::bptt, layout, grad.cwiseProduct(param_mask(net, layout)));
  rep.trace_mode = TraceMode::none;
  rep.loss = hc.loss;
  rep.peak_memory_elements = cost.peak;
  rep.scalar_mult_count = cost.mults;
  return rep;
}

}  // namespace snnrtrl
