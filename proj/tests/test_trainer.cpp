#include <doctest.h>

#include <cmath>

#include "snnrtrl/config.hpp"
#include "snnrtrl/errors.hpp"
#include "snnrtrl/io.hpp"
#include "snnrtrl/trainer.hpp"
#include "snnrtrl/util.hpp"

using namespace snnrtrl;

namespace {

ExperimentConfig latency_config() {
  ExperimentConfig cfg;
  cfg.task.kind = TaskKind::latency;
  cfg.task.latency.n_classes = 2;
  cfg.task.latency.n_in = 10;
  cfg.task.latency.t_max = 15;
  cfg.task.latency.samples_per_class = 30;
  cfg.task.latency.jitter = 0.05;
  cfg.network.layers[0].k = 12;
  cfg.network.layers[0].scale_mode = InputScaleMode::unit;
  cfg.network.mode = ArchMode::FF;
  cfg.network.init_gain = 3.0;
  cfg.loss.head = HeadKind::sum_readout_ce;
  cfg.loss.readout.n_classes = 2;
  cfg.loss.readout.beta_ro = 0.8;
  cfg.optimizer.lr = 5e-3;
  cfg.epochs = 3;
  return cfg;
}

ExperimentConfig small_memory_config(int gap) {
  ExperimentConfig cfg;
  cfg.task.kind = TaskKind::memory;
  cfg.task.memory.gap = gap;
  cfg.task.memory.n_in = 6;
  cfg.task.memory.samples_per_class = 6;
  cfg.network.layers[0].k = 5;
  cfg.network.layers[0].scale_mode = InputScaleMode::unit;
  cfg.network.mode = ArchMode::RC;
  cfg.network.init_gain = 3.0;
  cfg.loss.head = HeadKind::step_readout_ce;
  cfg.loss.readout.n_classes = 2;
  cfg.loss.readout.beta_ro = 0.7;
  cfg.optimizer.lr = 1e-2;
  cfg.epochs = 2;
  return cfg;
}

Eigen::VectorXd params_of(const RunResult& run, const LossProgram& program) {
  return get_params(run.net, ParamLayout(run.net, program));
}

}  // namespace

TEST_CASE("optimizer respects the mask and clips the global norm") {
  OptimizerSpec spec;
  spec.kind = OptimizerKind::sgd;
  spec.lr = 0.5;
  spec.clip = 1.0;
  Optimizer opt(spec, 3);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd g(3), mask(3);
  g << 3.0, 4.0, 100.0;
  mask << 1.0, 1.0, 0.0;
  opt.step(p, g, mask);
  CHECK(p[0] == doctest::Approx(-0.3).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(-0.4).epsilon(1e-14));
  CHECK(p[2] == 0.0);

  spec.kind = OptimizerKind::adam;
  spec.lr = 0.1;
  spec.clip = 0.0;
  Optimizer adam(spec, 1);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(1);
  // first Adam step moves by lr regardless of the gradient scale
  adam.step(q, Eigen::VectorXd::Constant(1, 1e-3), Eigen::VectorXd::Ones(1));
  CHECK(q[0] == doctest::Approx(-0.1).epsilon(1e-4));
  CHECK(adam.steps() == 1);
}

TEST_CASE("training is deterministic in the seed") {
  const ExperimentConfig cfg = latency_config();
  const TrialSet data = generate_task(cfg.task);
  const RunResult a = train_run(cfg, data, 4), b = train_run(cfg, data, 4);
  CHECK(params_of(a, cfg.loss) == params_of(b, cfg.loss));
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].mean_loss == b.metrics[i].mean_loss);
    CHECK(a.metrics[i].test_error == b.metrics[i].test_error);
  }
  CHECK_FALSE(params_of(train_run(cfg, data, 5), cfg.loss) == params_of(a, cfg.loss));
}

TEST_CASE("zero epochs only evaluates the initial weights") {
  ExperimentConfig cfg = latency_config();
  cfg.epochs = 0;
  const TrialSet data = generate_task(cfg.task);
  const RunResult run = train_run(cfg, data, 0);
  REQUIRE(run.metrics.size() == 1);
  CHECK(run.metrics[0].epoch == 0);
  CHECK(run.selected_epoch == 0);
  const NetworkSpec fresh = build_network(resolved_network(cfg, data), derive_seed(0, 1));
  CHECK(params_of(run, cfg.loss) == get_params(fresh, ParamLayout(fresh, cfg.loss)));
}

TEST_CASE("feed-forward network learns a separable latency task") {
  ExperimentConfig cfg = latency_config();
  cfg.epochs = 50;
  cfg.task.latency.jitter = 0.02;
  cfg.task.latency.samples_per_class = 50;
  const TrialSet data = generate_task(cfg.task);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const RunResult run = train_run(cfg, data, seed);
    REQUIRE(run.selected_test_error);
    CHECK(*run.selected_test_error < 0.05);
  }
}

TEST_CASE("streaming exact RTRL follows the BPTT parameter trajectory") {
  for (HeadKind head : {HeadKind::step_readout_ce, HeadKind::sum_readout_ce, HeadKind::max_readout_ce}) {
    ExperimentConfig cfg = small_memory_config(3);
    cfg.loss.head = head;
    cfg.batch_size = 3;
    const TrialSet data = generate_task(cfg.task);
    cfg.engine = EngineKind::bptt;
    std::vector<Eigen::VectorXd> offline, online;
    train_run(cfg, data, 2, [&](const MetricRecord&, const NetworkSpec& net) {
      offline.push_back(get_params(net, ParamLayout(net, cfg.loss)));
    });
    cfg.engine = EngineKind::rtrl_exact;
    train_run(cfg, data, 2, [&](const MetricRecord&, const NetworkSpec& net) {
      online.push_back(get_params(net, ParamLayout(net, cfg.loss)));
    });
    REQUIRE(offline.size() == online.size());
    for (std::size_t e = 0; e < offline.size(); ++e) CHECK((offline[e] - online[e]).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("online engines keep memory constant in the trial length") {
  NetworkTemplate tmpl;
  tmpl.n_in = 4;
  tmpl.layers[0].k = 6;
  const NetworkSpec net = build_network(tmpl, 1);
  for (EngineKind kind : {EngineKind::rtrl_exact, EngineKind::rtrl_sparse, EngineKind::mixed}) {
    CHECK(complexity_probe(kind, net, 50).peak_memory_elements ==
          complexity_probe(kind, net, 500).peak_memory_elements);
  }
  CHECK(complexity_probe(EngineKind::bptt, net, 500).peak_memory_elements >
        complexity_probe(EngineKind::bptt, net, 50).peak_memory_elements);

  // same through the training loop: a longer gap does not change the peak
  std::int64_t peaks[2];
  for (int i = 0; i < 2; ++i) {
    ExperimentConfig cfg = small_memory_config(i == 0 ? 35 : 485);
    cfg.engine = EngineKind::rtrl_sparse;
    cfg.epochs = 1;
    cfg.task.memory.samples_per_class = 2;
    const TrialSet data = generate_task(cfg.task);
    peaks[i] = train_run(cfg, data, 0).metrics.back().peak_memory_elements;
  }
  CHECK(peaks[0] > 0);
  CHECK(peaks[0] == peaks[1]);
}

TEST_CASE("per-step updates reject locking heads") {
  ExperimentConfig cfg = small_memory_config(2);
  cfg.engine = EngineKind::rtrl_exact;
  cfg.cadence = Cadence::per_step;
  cfg.loss.head = HeadKind::max_readout_ce;
  const TrialSet data = generate_task(cfg.task);
  CHECK_THROWS_AS(train_run(cfg, data, 0), LockingError);
  cfg.loss.head = HeadKind::step_readout_ce;
  CHECK_NOTHROW(train_run(cfg, data, 0));
}

TEST_CASE("training lowers the loss") {
  ExperimentConfig cfg = latency_config();
  cfg.epochs = 10;
  const TrialSet data = generate_task(cfg.task);
  for (EngineKind kind : {EngineKind::bptt, EngineKind::rtrl_exact}) {
    cfg.engine = kind;
    const RunResult run = train_run(cfg, data, 1);
    CHECK(run.metrics.back().mean_loss < run.metrics.front().mean_loss);
  }
}

TEST_CASE("streaming tracking stays close to offline training") {
  ExperimentConfig cfg;
  cfg.task.kind = TaskKind::tracking;
  cfg.task.tracking.n_in = 6;
  cfg.task.tracking.n_out = 3;
  cfg.task.tracking.steps = 30;
  cfg.task.tracking.trials = 20;
  cfg.network.layers[0].k = 3;
  cfg.network.layers[0].scale_mode = InputScaleMode::unit;
  cfg.network.mode = ArchMode::FF;
  cfg.network.init_gain = 2.0;
  cfg.loss.head = HeadKind::van_rossum;
  cfg.loss.kernel.tau = 5.0;
  cfg.optimizer.lr = 1e-2;
  cfg.epochs = 15;
  const TrialSet data = generate_task(cfg.task);
  cfg.engine = EngineKind::bptt;
  const RunResult off = train_run(cfg, data, 0);
  cfg.engine = EngineKind::rtrl_sparse;
  cfg.cadence = Cadence::per_step;
  const RunResult on = train_run(cfg, data, 0);
  const double l_off = evaluate(off.net, cfg.loss, data, Split::test).mean_loss;
  const double l_on = evaluate(on.net, cfg.loss, data, Split::test).mean_loss;
  const double l_init = on.metrics.front().mean_loss;
  MESSAGE("tracking test loss: offline " << l_off << ", streaming " << l_on);
  CHECK(l_off < l_init);
  CHECK(l_on <= 2.0 * l_off);
  CHECK_FALSE(evaluate(on.net, cfg.loss, data, Split::test).error);
}

TEST_CASE("summary statistics") {
  CHECK_FALSE(standard_error({0.3}));
  CHECK_FALSE(standard_error({}));
  CHECK(*standard_error({1.0, 3.0}) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(mean_of({1.0, 2.0, 6.0}) == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("parallel_for covers every index and forwards the first error") {
  std::vector<int> hit(50, 0);
  parallel_for(50, 4, [&](std::size_t i) { hit[i] += 1; });
  for (int h : hit) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 7) throw ConfigError("boom");
                               }),
                  ConfigError);
}

TEST_CASE("ablation table") {
  ExperimentConfig cfg = small_memory_config(2);
  cfg.loss.head = HeadKind::sum_readout_ce;
  cfg.seeds = {0, 1};
  cfg.workers = 2;
  const TrialSet data = generate_task(cfg.task);
  const AblationTable table = run_ablation(cfg, data, {ArchMode::FF, ArchMode::RC},
                                           {HeadKind::sum_readout_ce, HeadKind::max_readout_ce});
  CHECK(table.cells.size() == 4);
  const AblationCell& cell = table.at(ArchMode::RC, HeadKind::max_readout_ce);
  CHECK(cell.errors.size() == 2);
  CHECK(cell.mean == doctest::Approx(mean_of(cell.errors)));
  const std::string csv = table.to_csv();
  CHECK(csv.rfind("mode,readout,mean_err,sem,n_seeds\n", 0) == 0);
  CHECK(csv.find("RC,max,") != std::string::npos);

  // identical when rerun single-threaded
  cfg.workers = 1;
  const AblationTable again = run_ablation(cfg, data, {ArchMode::FF, ArchMode::RC},
                                           {HeadKind::sum_readout_ce, HeadKind::max_readout_ce});
  CHECK(again.to_csv() == csv);
}

TEST_CASE("grid search") {
  const std::string base = R"({
    "task": {"kind": "memory", "gap": 2, "n_in": 6, "samples_per_class": 5},
    "network": {"mode": "RC", "layers": [{"k": 4, "scale_mode": "unit"}], "init_gain": 3.0},
    "loss": {"head": "step_readout_ce", "beta_ro": 0.7},
    "engine": {"kind": "rtrl_exact"},
    "training": {"epochs": 1, "seeds": [0, 1], "workers": 2}
  })";
  RunConfig cfg = parse_config(base);

  SUBCASE("single point") {
    GridSpec grid;
    grid.axes = {{"/optimizer/lr", {"0.01"}}};
    cfg.experiment.seeds = {0};
    const GridResult r = grid_search(cfg, grid);
    CHECK(r.planned == 1);
    CHECK(r.ranked.size() == 1);
    CHECK(r.best.size() == 1);
    CHECK_FALSE(r.partial);
  }
  SUBCASE("best ten of twelve, ranked and reproducible") {
    GridSpec grid;
    grid.axes = {{"/optimizer/lr", {"0.001", "0.01", "0.1"}}, {"/network/mode", {"\"FF\"", "\"RC\""}}};
    const GridResult r = grid_search(cfg, grid);
    CHECK(r.planned == 12);
    CHECK(r.ranked.size() == 12);
    CHECK(r.best.size() == 10);
    for (std::size_t i = 1; i < r.ranked.size(); ++i) {
      const double a = *r.ranked[i - 1].valid_error, b = *r.ranked[i].valid_error;
      CHECK((a < b || (a == b && r.ranked[i - 1].valid_loss <= r.ranked[i].valid_loss)));
    }
    CHECK(grid_json(grid_search(cfg, grid)) == grid_json(r));
  }
  SUBCASE("budget stops early") {
    GridSpec grid;
    grid.axes = {{"/optimizer/lr", {"0.001", "0.01"}}};
    grid.budget = 3;
    const GridResult r = grid_search(cfg, grid);
    CHECK(r.planned == 4);
    CHECK(r.ranked.size() == 3);
    CHECK(r.partial);
  }
  SUBCASE("unknown pointer") {
    GridSpec grid;
    grid.axes = {{"/optimizer/lrate", {"0.1"}}};
    CHECK_THROWS_AS(grid_search(cfg, grid), ConfigError);
  }
}

TEST_CASE("loss logs") {
  ExperimentConfig cfg = small_memory_config(1);
  cfg.epochs = 0;
  const TrialSet data = generate_task(cfg.task);
  const RunResult run = train_run(cfg, data, 0);
  const auto online = loss_log(run.net, cfg.loss, data, Split::test);
  const std::size_t n_test = data.indices(Split::test).size();
  CHECK(online.size() == n_test * static_cast<std::size_t>(data.steps));
  double total = 0.0;
  for (const auto& e : online) total += e.loss;
  CHECK(total / static_cast<double>(n_test) ==
        doctest::Approx(evaluate(run.net, cfg.loss, data, Split::test).mean_loss).epsilon(1e-12));
  const std::string text = loss_log_jsonl(online);
  CHECK(text.find("\"t\":") != std::string::npos);

  LossProgram locking = cfg.loss;
  locking.head = HeadKind::sum_readout_ce;
  const auto per_trial = loss_log(run.net, locking, data, Split::test);
  CHECK(per_trial.size() == n_test);
  CHECK_FALSE(per_trial[0].t);
  CHECK(loss_log_jsonl(per_trial).find("\"t\":") == std::string::npos);
}
