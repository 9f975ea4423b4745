#include <chrono>
#include <random>

#include "snnrtrl/engines.hpp"
#include "snnrtrl/errors.hpp"
#include "snnrtrl/util.hpp"

namespace snnrtrl {

GradientReport compute_gradient(EngineKind kind, const NetworkSpec& net, const Raster& input,
                                const LossProgram& program, const Target& target,
                                const GradOptions& opts) {
  check_target(program, target, input.steps(), net.k_out());
  if (kind == EngineKind::finite_difference) {
    return finite_difference_oracle(net, input, program, target);
  }
  if (kind == EngineKind::bptt) {
    const Trajectory traj = rollout(net, input, DynamicsOptions{opts.smooth_forward});
    return bptt_gradient(traj, net, input, program, target, opts);
  }
  auto engine = make_online_engine(kind, net, program, opts);
  engine->begin_trial();
  for (int t = 0; t < input.steps(); ++t) engine->step(input.row(t), target);
  engine->finish(target);
  return engine->take_gradient();
}

double trial_loss(const NetworkSpec& net, const Raster& input, const LossProgram& program,
                  const Target& target, bool smooth) {
  const Trajectory traj = rollout(net, input, DynamicsOptions{smooth});
  return evaluate_loss_batch(program, net.readout, output_spikes(traj), target);
}

GradientReport finite_difference_oracle(const NetworkSpec& net, const Raster& input,
                                        const LossProgram& program, const Target& target,
                                        double h) {
  if (!(h > 0.0)) throw ParameterError("finite-difference step must be > 0");
  check_target(program, target, input.steps(), net.k_out());
  const ParamLayout layout(net, program);
  const Eigen::VectorXd theta = get_params(net, layout);
  const Eigen::VectorXd mask = param_mask(net, layout);
  NetworkSpec probe = net;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout.size());
  Eigen::VectorXd work = theta;
  for (int i = 0; i < layout.size(); ++i) {
    if (mask[i] == 0.0) continue;
    work[i] = theta[i] + h;
    set_params(probe, layout, work);
    const double up = trial_loss(probe, input, program, target, true);
    work[i] = theta[i] - h;
    set_params(probe, layout, work);
    const double down = trial_loss(probe, input, program, target, true);
    work[i] = theta[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  GradientReport rep = make_report(EngineKind::finite_difference, layout, grad);
  rep.loss = trial_loss(net, input, program, target, true);
  return rep;
}

CostSample complexity_probe(EngineKind kind, const NetworkSpec& net, int T, std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  std::bernoulli_distribution fire(0.1);
  Raster input(T, net.n_in);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < net.n_in; ++i) {
      if (fire(rng)) input.set(t, i);
    }
  }
  LossProgram program;
  program.head = HeadKind::van_rossum;
  Target target;
  target.stream = Eigen::MatrixXd::Zero(T, net.k_out());

  const auto start = std::chrono::steady_clock::now();
  const GradientReport rep = compute_gradient(kind, net, input, program, target);
  const auto stop = std::chrono::steady_clock::now();
  CostSample out;
  out.peak_memory_elements = rep.peak_memory_elements;
  out.scalar_mult_count = rep.scalar_mult_count;
  out.wall_ms = std::chrono::duration<double, std::milli>(stop - start).count();
  return out;
}

}  // namespace snnrtrl
