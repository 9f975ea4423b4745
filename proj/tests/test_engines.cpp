#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "snnrtrl/errors.hpp"
#include "snnrtrl/util.hpp"

using namespace snnrtrl;
using namespace testutil;

TEST_CASE("scalar explicit Jacobian") {
  LayerSpec layer;
  layer.k = 1;
  layer.lif = make_lif_params(10.0, 1.0);
  layer.lif.beta = 0.9;
  layer.W = Eigen::MatrixXd::Constant(1, 1, 1.0);
  layer.V = Eigen::MatrixXd::Constant(1, 1, 0.5);
  LayerState prev = initial_state(layer);
  // sigma'(x) = 1/(1+10|x|)^2 = 0.25 at |x| = 0.1
  prev.u[0] = 0.9;
  const auto jac = assemble_jacobians(layer, prev, Eigen::VectorXd::Zero(1), SurrogateSpec{});
  CHECK(jac.h_implicit(0, 0) + jac.h_explicit(0, 0) == doctest::Approx(0.9125).epsilon(1e-12));
}

TEST_CASE("explicit Jacobian vanishes without recurrence and on the diagonal") {
  auto c = make_case({.k = 4, .mode = ArchMode::FF}, 1);
  auto jac = assemble_jacobians(c.net.layers[0], initial_state(c.net.layers[0]),
                                Eigen::VectorXd::Ones(3), c.net.surrogate);
  CHECK(jac.h_explicit.cwiseAbs().maxCoeff() == 0.0);

  auto rc = make_case({.k = 4, .mode = ArchMode::RC}, 2);
  auto state = initial_state(rc.net.layers[0]);
  state.u.setConstant(0.7);
  jac = assemble_jacobians(rc.net.layers[0], state, Eigen::VectorXd::Ones(3), rc.net.surrogate);
  for (int i = 0; i < 4; ++i) CHECK(jac.h_explicit(i, i) == 0.0);
  CHECK(jac.h_explicit.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("influence recursion base case") {
  auto c = make_case({.k = 3}, 3);
  const auto& layer = c.net.layers[0];
  InfluenceStore g = make_influence_store(layer, TraceMode::dense);
  const auto jac0 = assemble_jacobians(layer, initial_state(layer), Eigen::VectorXd::Zero(3),
                                       c.net.surrogate);
  CHECK(rtrl_exact_step(g, jac0).G.cwiseAbs().maxCoeff() == 0.0);
  const auto jac1 = assemble_jacobians(layer, initial_state(layer), Eigen::VectorXd::Ones(3),
                                       c.net.surrogate);
  CHECK(rtrl_exact_step(g, jac1).G == Eigen::MatrixXd(jac1.f_immediate));
  CHECK_THROWS_AS(rtrl_exact_step(make_influence_store(layer, TraceMode::block), jac1), UsageError);
}

TEST_CASE("eligibility trace geometry") {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(1);
  q = trace_update(q, 0.9, Eigen::VectorXd::Ones(1));
  q = trace_update(q, 0.9, Eigen::VectorXd::Zero(1));
  q = trace_update(q, 0.9, Eigen::VectorXd::Zero(1));
  CHECK(q[0] == doctest::Approx(0.81).epsilon(1e-14));

  const double beta = 0.8;
  const int steps = static_cast<int>(std::ceil(std::log(1e-6) / std::log(beta)));
  Eigen::VectorXd r = Eigen::VectorXd::Ones(2);
  for (int i = 0; i < steps; ++i) r = trace_update(r, beta, Eigen::VectorXd::Zero(2));
  CHECK(r.maxCoeff() < 1e-6);

  const Eigen::VectorXd s = (Eigen::VectorXd(3) << 1, 0, 1).finished();
  CHECK(trace_update(Eigen::VectorXd::Constant(3, 5.0), 0.0, s) == s);
}

TEST_CASE("three-factor product") {
  const Eigen::MatrixXd g = three_factor_gradient(Eigen::VectorXd::Constant(1, 2.0),
                                                  Eigen::VectorXd::Constant(1, 1.1),
                                                  Eigen::VectorXd::Constant(1, 0.81),
                                                  SurrogateSpec{}, 1.0);
  CHECK(g(0, 0) == doctest::Approx(0.405).epsilon(1e-12));
  CHECK(three_factor_gradient(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2),
                              Eigen::VectorXd::Ones(3), SurrogateSpec{}, 1.0)
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("bptt matches exact rtrl across heads, modes and neuron types") {
  double worst = 0.0;
  int cases = 0, nontrivial = 0;
  std::uint64_t seed = 100;
  for (HeadKind head : all_heads()) {
    for (ArchMode mode : {ArchMode::FF, ArchMode::RC, ArchMode::RD}) {
      for (int layers : {1, 2}) {
        for (double tau_syn : {0.0, 5.0}) {
          CaseOptions o;
          o.head = head;
          o.mode = mode;
          o.layers = layers;
          o.tau_syn = tau_syn;
          o.T = 12;
          const auto c = make_case(o, ++seed);
          const auto a = grad_of(EngineKind::bptt, c);
          const auto b = grad_of(EngineKind::rtrl_exact, c);
          CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
          worst = std::max(worst, relative_error(a.flat(), b.flat()));
          ++cases;
          if (max_abs(a.flat()) > 0.0) ++nontrivial;
        }
      }
    }
  }
  CHECK(worst < 1e-10);
  CHECK(nontrivial >= cases - 2);
}

TEST_CASE("sparse equals exact when recurrence is silent") {
  double worst = 0.0;
  std::uint64_t seed = 300;
  for (HeadKind head : all_heads()) {
    for (double tau_syn : {0.0, 5.0}) {
      CaseOptions o;
      o.head = head;
      o.tau_syn = tau_syn;
      o.zero_recurrent = true;
      const auto c = make_case(o, ++seed);
      worst = std::max(worst, relative_error(grad_of(EngineKind::rtrl_sparse, c).flat(),
                                             grad_of(EngineKind::rtrl_exact, c).flat()));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("mixed equals sparse on online heads") {
  double worst = 0.0;
  std::uint64_t seed = 500;
  for (HeadKind head : {HeadKind::van_rossum, HeadKind::local_mse, HeadKind::step_readout_ce}) {
    for (double beta_ro : {0.0, 0.7}) {
      for (double tau_syn : {0.0, 5.0}) {
        CaseOptions o;
        o.head = head;
        o.beta_ro = beta_ro;
        o.tau_syn = tau_syn;
        const auto c = make_case(o, ++seed);
        const auto s = grad_of(EngineKind::rtrl_sparse, c);
        const auto m = grad_of(EngineKind::mixed, c);
        worst = std::max(worst, relative_error(s.flat(), m.flat()));
      }
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("trace mode selection") {
  auto inst = make_case({.head = HeadKind::local_mse, .beta_ro = 0.0}, 7);
  CHECK(grad_of(EngineKind::rtrl_sparse, inst).trace_mode == TraceMode::vector);
  auto filtered = make_case({.head = HeadKind::local_mse, .beta_ro = 0.5}, 7);
  CHECK(grad_of(EngineKind::rtrl_sparse, filtered).trace_mode == TraceMode::block);
  auto two = make_case({.head = HeadKind::local_mse, .tau_syn = 5.0, .beta_ro = 0.0}, 7);
  CHECK(grad_of(EngineKind::rtrl_sparse, two).trace_mode == TraceMode::block);
  CHECK(grad_of(EngineKind::rtrl_sparse, inst, {.smooth_forward = true}).trace_mode == TraceMode::block);
}

TEST_CASE("three-factor rule equals bptt on feed-forward nets with instantaneous loss") {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto c = make_case({.k = 5, .mode = ArchMode::FF, .head = HeadKind::local_mse, .beta_ro = 0.0}, seed);
    const auto s = grad_of(EngineKind::rtrl_sparse, c);
    REQUIRE(s.trace_mode == TraceMode::vector);
    worst = std::max(worst, relative_error(s.flat(), grad_of(EngineKind::bptt, c).flat()));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("sparse drops explicit recurrence") {
  int agree = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto c = make_case({.k = 4, .mode = ArchMode::RC, .gain = 4.0}, 40 + seed);
    const auto s = grad_of(EngineKind::rtrl_sparse, c).flat();
    const auto e = grad_of(EngineKind::rtrl_exact, c).flat();
    CHECK(relative_error(s, e) > 1e-6);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      if (e[i] == 0.0) continue;
      ++total;
      if ((s[i] > 0) == (e[i] > 0)) ++agree;
    }
  }
  CHECK(static_cast<double>(agree) / total >= 0.6);
}

TEST_CASE("RD equals sparse on a single layer and differs from RC") {
  auto c = make_case({.k = 4, .mode = ArchMode::RD, .head = HeadKind::local_mse}, 77);
  const auto rd = grad_of(EngineKind::rtrl_exact, c).flat();
  CHECK(relative_error(rd, grad_of(EngineKind::bptt, c).flat()) < 1e-10);
  CHECK(relative_error(rd, grad_of(EngineKind::rtrl_sparse, c).flat()) < 1e-12);
  c.net.mode = ArchMode::RC;
  CHECK(relative_error(rd, grad_of(EngineKind::rtrl_exact, c).flat()) > 1e-8);
}

TEST_CASE("gradients match finite differences on the smooth forward") {
  const GradOptions smooth{.smooth_forward = true};
  for (HeadKind head : all_heads()) {
    for (ArchMode mode : {ArchMode::FF, ArchMode::RC}) {
      auto c = make_case({.k = 3, .T = 8, .mode = mode, .head = head, .gain = 2.0}, 900);
      const auto fd = finite_difference_oracle(c.net, c.input, c.program, c.target, 1e-5);
      for (EngineKind e : {EngineKind::bptt, EngineKind::rtrl_exact}) {
        CAPTURE(to_string(head));
        CAPTURE(to_string(e));
        CHECK(relative_error(grad_of(e, c, smooth).flat(), fd.flat()) < 1e-4);
      }
    }
  }
}

TEST_CASE("bptt rejects an unstored trajectory") {
  auto c = make_case({}, 1);
  Trajectory traj = rollout(c.net, c.input);
  traj.stored = false;
  CHECK_THROWS_AS(bptt_gradient(traj, c.net, c.input, c.program, c.target), UsageError);
}

TEST_CASE("finite-difference step must be positive") {
  auto c = make_case({}, 1);
  CHECK_THROWS_AS(finite_difference_oracle(c.net, c.input, c.program, c.target, 0.0), ParameterError);
}

TEST_CASE("mixed mode rejects locking heads") {
  auto c = make_case({.head = HeadKind::max_readout_ce}, 1);
  CHECK_THROWS_AS(grad_of(EngineKind::mixed, c), LockingError);
}

TEST_CASE("zero loss gives zero gradients") {
  auto c = make_case({.head = HeadKind::van_rossum}, 5);
  c.input = Raster(c.input.steps(), c.input.channels());
  c.target.stream.setZero();
  for (EngineKind e : {EngineKind::bptt, EngineKind::rtrl_exact, EngineKind::rtrl_sparse, EngineKind::mixed}) {
    CHECK(max_abs(grad_of(e, c).flat()) == 0.0);
  }
}
