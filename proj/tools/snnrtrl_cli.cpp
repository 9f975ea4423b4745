#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "snnrtrl/config.hpp"
#include "snnrtrl/engines.hpp"
#include "snnrtrl/errors.hpp"
#include "snnrtrl/io.hpp"
#include "snnrtrl/raster.hpp"
#include "snnrtrl/taskgen.hpp"
#include "snnrtrl/trainer.hpp"
#include "snnrtrl/util.hpp"

namespace fs = std::filesystem;
using namespace snnrtrl;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct Common {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  int verbose = 0;
};

RunConfig load(const Common& c) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) override_seed(cfg, *c.seed);
  return cfg;
}

void write_resolved(const fs::path& out, const RunConfig& cfg) {
  write_text(out / "resolved_config.json", resolved_config_json(cfg));
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "n/a"; }

Json generator_json(const RunConfig& cfg) {
  Json g = Json::parse(resolved_config_json(cfg))["task"];
  g["generator_version"] = 1;
  if (cfg.experiment.task.kind == TaskKind::randman) {
    const RandmanModel model = randman_model(cfg.experiment.task.randman);
    g["coefficients"] = Json{{"layout", "[class][neuron][dim][freq]"},
                             {"amplitude", model.amplitude},
                             {"phase", model.phase}};
  }
  return g;
}

int cmd_gen_data(const Common& c) {
  const RunConfig cfg = load(c);
  const TrialSet data = generate_task(cfg.experiment.task);
  const fs::path out(c.out);
  save_dataset(out, data, generator_json(cfg).dump());
  if (!data.target_rasters.empty() && cfg.experiment.loss.head == HeadKind::van_rossum) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Target target = make_target(cfg.experiment.loss, data, i);
      write_text(out / "targets" / ("target_" + std::to_string(i) + ".csv"), target_csv(target.stream));
    }
  }
  write_resolved(out, cfg);
  std::cout << "wrote " << data.size() << " trials (" << data.task << ", T=" << data.steps
            << ", n=" << data.channels << ") to " << out.string() << "\n";
  return 0;
}

int cmd_train(const Common& c) {
  const RunConfig cfg = load(c);
  const ExperimentConfig& e = cfg.experiment;
  const std::string hash = spec_hash(cfg);
  const fs::path out(c.out);
  write_resolved(out, cfg);
  const TrialSet data = generate_task(e.task);

  std::vector<RunResult> runs(e.seeds.size());
  std::mutex print;
  parallel_for(e.seeds.size(), e.workers, [&](std::size_t i) {
    const std::uint64_t seed = e.seeds[i];
    std::string lines;
    runs[i] = train_run(e, data, seed, [&](const MetricRecord& rec, const NetworkSpec&) {
      lines += metric_json_line(rec);
      if (c.verbose > 0) {
        std::lock_guard<std::mutex> lock(print);
        std::cerr << "seed " << seed << " epoch " << rec.epoch << " loss " << fmt(rec.mean_loss) << " valid "
                  << fmt(rec.valid_error) << " test " << fmt(rec.test_error) << "\n";
      }
    });
    write_text(out / ("metrics_seed" + std::to_string(seed) + ".jsonl"), lines);
    write_text(out / ("losses_seed" + std::to_string(seed) + ".jsonl"),
               loss_log_jsonl(loss_log(runs[i].net, e.loss, data, Split::test)));
    save_checkpoint(out / ("checkpoint_seed" + std::to_string(seed) + ".json"),
                    make_checkpoint(runs[i].net, e.loss, hash, runs[i].metrics.back().epoch));
  });

  std::string merged;
  Json summary = Json{{"spec_hash", hash}, {"runs", Json::array()}};
  std::vector<double> test;
  for (const auto& r : runs) {
    merged += read_text(out / ("metrics_seed" + std::to_string(r.seed) + ".jsonl"));
    summary["runs"].push_back(Json{{"seed", r.seed},
                                   {"selected_epoch", r.selected_epoch},
                                   {"valid_error", r.selected_valid_error ? Json(*r.selected_valid_error) : Json()},
                                   {"test_error", r.selected_test_error ? Json(*r.selected_test_error) : Json()},
                                   {"final_loss", r.metrics.back().mean_loss}});
    if (r.selected_test_error) test.push_back(*r.selected_test_error);
    std::cout << "seed " << r.seed << ": selected epoch " << r.selected_epoch << ", test error "
              << fmt(r.selected_test_error) << ", final loss " << fmt(r.metrics.back().mean_loss) << "\n";
  }
  if (!test.empty()) {
    const auto sem = standard_error(test);
    summary["mean_test_error"] = mean_of(test);
    summary["sem"] = sem ? Json(*sem) : Json();
    std::cout << "mean test error " << fmt(mean_of(test)) << " +- " << fmt(sem) << "\n";
  }
  write_text(out / "metrics.jsonl", merged);
  write_text(out / "summary.json", summary.dump(2) + "\n");
  return 0;
}

int cmd_ablate(const Common& c) {
  const RunConfig cfg = load(c);
  const fs::path out(c.out);
  write_resolved(out, cfg);
  if (cfg.experiment.seeds.size() < 5) {
    std::cerr << "warning: " << cfg.experiment.seeds.size()
              << " seed(s); the ablation is meant to run over at least 5\n";
  }
  const TrialSet data = generate_task(cfg.experiment.task);
  const AblationTable table = run_ablation(cfg.experiment, data, cfg.ablation.modes, cfg.ablation.readouts);
  write_text(out / "ablation.csv", table.to_csv());
  write_text(out / "ablation.json", ablation_json(table));
  std::cout << table.to_csv();
  return 0;
}

struct Check {
  std::string name;
  std::optional<double> error;
  double tolerance = 0.0;
  std::string note;

  bool pass() const { return !error || *error < tolerance; }
};

int cmd_gradcheck(const Common& c) {
  const RunConfig cfg = load(c);
  const ExperimentConfig& e = cfg.experiment;
  const std::string hash = spec_hash(cfg);
  const fs::path out(c.out);
  write_resolved(out, cfg);
  const TrialSet data = generate_task(e.task);
  const std::uint64_t seed = e.seeds.front();
  const NetworkSpec net = build_network(resolved_network(e, data), derive_seed(seed, 1));
  const bool single_layer = net.layers.size() == 1;
  const bool online = e.loss.locality() == Locality::online;

  std::vector<std::size_t> trials = data.indices(Split::train);
  if (trials.empty()) trials = data.indices(Split::test);
  if (trials.size() > static_cast<std::size_t>(cfg.gradcheck.trials)) trials.resize(cfg.gradcheck.trials);

  Check exact{"bptt_vs_rtrl_exact", 0.0, cfg.gradcheck.tol_exact, ""};
  Check sparse{"rtrl_sparse_vs_mixed", 0.0, cfg.gradcheck.tol_sparse, ""};
  Check fd{"bptt_vs_finite_difference", 0.0, cfg.gradcheck.tol_fd, "smooth forward"};
  if (!single_layer || !online) {
    sparse.error.reset();
    sparse.note = single_layer ? "skipped: mixed mode needs an online loss head"
                               : "skipped: sparse engines need a single hidden layer";
  }
  for (std::size_t n = 0; n < trials.size(); ++n) {
    const std::size_t i = trials[n];
    const Raster& input = data.rasters[i];
    const Target target = make_target(e.loss, data, i);
    const auto bptt = compute_gradient(EngineKind::bptt, net, input, e.loss, target, e.grad);
    const auto rtrl = compute_gradient(EngineKind::rtrl_exact, net, input, e.loss, target, e.grad);
    exact.error = std::max(*exact.error, relative_error(bptt.flat(), rtrl.flat()));
    if (n == 0) {
      write_text(out / "grad_bptt.json", gradient_dump_json(bptt, seed, hash));
      write_text(out / "grad_rtrl_exact.json", gradient_dump_json(rtrl, seed, hash));
    }
    if (sparse.error) {
      const auto sp = compute_gradient(EngineKind::rtrl_sparse, net, input, e.loss, target, e.grad);
      const auto mx = compute_gradient(EngineKind::mixed, net, input, e.loss, target, e.grad);
      sparse.error = std::max(*sparse.error, relative_error(sp.flat(), mx.flat()));
      if (n == 0) {
        write_text(out / "grad_rtrl_sparse.json", gradient_dump_json(sp, seed, hash));
        write_text(out / "grad_mixed.json", gradient_dump_json(mx, seed, hash));
      }
    }
    GradOptions smooth = e.grad;
    smooth.smooth_forward = true;
    const auto sb = compute_gradient(EngineKind::bptt, net, input, e.loss, target, smooth);
    const auto fdr = finite_difference_oracle(net, input, e.loss, target, cfg.gradcheck.fd_step);
    fd.error = std::max(*fd.error, relative_error(sb.flat(), fdr.flat()));
  }

  bool ok = true;
  Json checks = Json::array();
  for (const Check* ch : {&exact, &sparse, &fd}) {
    ok = ok && ch->pass();
    checks.push_back(Json{{"name", ch->name},
                          {"max_rel_error", ch->error ? Json(*ch->error) : Json()},
                          {"tolerance", ch->tolerance},
                          {"pass", ch->pass()},
                          {"note", ch->note}});
    std::cout << std::left << std::setw(28) << ch->name << " max rel error " << std::setw(12) << fmt(ch->error)
              << " tol " << fmt(ch->tolerance) << "  " << (ch->error ? (ch->pass() ? "ok" : "MISMATCH") : ch->note)
              << "\n";
  }
  write_text(out / "gradcheck.json", Json{{"spec_hash", hash},
                                          {"seed", seed},
                                          {"trials", trials.size()},
                                          {"checks", checks},
                                          {"pass", ok}}
                                         .dump(2) +
                                         "\n");
  return ok ? 0 : kExitNumeric;
}

int cmd_bench(const Common& c) {
  const RunConfig cfg = load(c);
  const ExperimentConfig& e = cfg.experiment;
  const fs::path out(c.out);
  write_resolved(out, cfg);
  std::ostringstream csv;
  csv << "engine,k,T,mem_elements,mult_count,wall_ms\n";
  std::map<EngineKind, std::vector<double>> ks, mems, mults;
  for (EngineKind kind : cfg.bench.engines) {
    for (int k : cfg.bench.k) {
      NetworkTemplate t = e.network;
      t.layers.resize(1);
      t.layers[0].k = k;
      t.n_in = cfg.bench.n_in > 0 ? cfg.bench.n_in : k;
      t.n_readout = 0;
      const NetworkSpec net = build_network(t, derive_seed(e.seeds.front(), 1));
      for (std::size_t ti = 0; ti < cfg.bench.T.size(); ++ti) {
        const int T = cfg.bench.T[ti];
        const CostSample s = complexity_probe(kind, net, T, e.seeds.front());
        csv << to_string(kind) << ',' << k << ',' << T << ',' << s.peak_memory_elements << ','
            << s.scalar_mult_count << ',' << std::setprecision(6) << s.wall_ms << '\n';
        if (ti == 0) {
          ks[kind].push_back(k);
          mems[kind].push_back(static_cast<double>(s.peak_memory_elements));
          mults[kind].push_back(static_cast<double>(s.scalar_mult_count));
        }
        if (c.verbose > 0) std::cerr << to_string(kind) << " k=" << k << " T=" << T << " done\n";
      }
    }
  }
  write_text(out / "scaling.csv", csv.str());
  std::cout << csv.str();
  for (const auto& [kind, x] : ks) {
    if (x.size() < 2) continue;
    std::cout << to_string(kind) << ": memory ~ k^" << fmt(loglog_slope(x, mems[kind])) << ", mults ~ k^"
              << fmt(loglog_slope(x, mults[kind])) << " (T=" << cfg.bench.T.front() << ")\n";
  }
  return 0;
}

int inspect_dataset(const fs::path& dir) {
  const Json meta = Json::parse(read_dataset_meta(dir));
  const TrialSet set = load_dataset(dir);
  std::cout << "dataset " << dir.string() << "\n"
            << "  task " << set.task << ", " << set.size() << " trials, T=" << set.steps << ", "
            << set.channels << " channels, " << set.n_classes << " classes\n";
  std::map<std::string, int> per_split;
  for (auto s : set.splits) ++per_split[to_string(s)];
  std::cout << "  splits:";
  for (const auto& [k, v] : per_split) std::cout << " " << k << "=" << v;
  std::cout << "\n";
  if (set.n_classes > 0) {
    std::vector<int> counts(static_cast<std::size_t>(set.n_classes), 0);
    for (int l : set.labels) {
      if (l >= 0 && l < set.n_classes) ++counts[static_cast<std::size_t>(l)];
    }
    std::cout << "  labels:";
    for (std::size_t i = 0; i < counts.size(); ++i) std::cout << " " << i << ":" << counts[i];
    std::cout << "\n";
  }
  std::int64_t spikes = 0;
  for (const auto& r : set.rasters) spikes += r.spike_count();
  std::cout << "  mean spikes per trial " << fmt(set.size() ? static_cast<double>(spikes) / set.size() : 0.0)
            << "\n";
  Json gen = meta.value("generator", Json::object());
  if (gen.contains("coefficients")) gen["coefficients"] = "<" + std::to_string(gen["coefficients"]["amplitude"].size()) + " amplitudes>";
  std::cout << "  generator " << gen.dump() << "\n";
  return 0;
}

int inspect_file(const fs::path& path) {
  const std::string text = read_text(path);
  if (text.rfind("SNNR", 0) == 0) {
    const Raster r = load_raster(path);
    std::cout << "raster " << path.string() << ": T=" << r.steps() << ", n=" << r.channels() << ", "
              << r.spike_count() << " spikes\n";
    return 0;
  }
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error&) {
    throw IoError("'" + path.string() + "' is neither a raster nor a JSON artifact");
  }
  if (j.is_object() && j.value("format", "") == "snnrtrl-checkpoint") {
    const Checkpoint ck = parse_checkpoint(text);
    std::cout << "checkpoint " << path.string() << ": spec_hash " << ck.spec_hash << ", epoch " << ck.epoch << "\n";
    for (const auto& t : ck.tensors) {
      std::cout << "  " << std::left << std::setw(12) << t.name << " " << t.value.rows() << "x" << t.value.cols()
                << "  |.|_F " << fmt(t.value.norm()) << "  min " << fmt(t.value.size() ? t.value.minCoeff() : 0.0)
                << "  max " << fmt(t.value.size() ? t.value.maxCoeff() : 0.0) << "\n";
    }
    return 0;
  }
  if (j.is_object() && j.contains("task") && j.contains("network")) {
    const RunConfig cfg = parse_config(text, path.string());
    std::cout << "config " << path.string() << ": spec_hash " << spec_hash(cfg) << "\n" << resolved_config_json(cfg);
    return 0;
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_inspect(const std::string& target) {
  const fs::path p(target);
  if (!fs::exists(p)) throw IoError("no such file or directory '" + target + "'");
  if (fs::is_directory(p)) {
    if (fs::exists(p / "meta.json")) return inspect_dataset(p);
    throw IoError("'" + target + "' is a directory without meta.json");
  }
  return inspect_file(p);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking network gradient engines: data generation, training, ablations and checks"};
  app.require_subcommand(1);
  Common common;
  std::string inspect_target;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config,-c", common.config, "JSON config file");
    if (needs_config) opt->required();
    sub->add_option("--out,-o", common.out, "output directory");
    sub->add_option("--seed", common.seed, "override task and run seeds");
    sub->add_flag("-v,--verbose", common.verbose, "progress on stderr");
  };
  auto* gen = app.add_subcommand("gen-data", "write a dataset bundle");
  auto* train = app.add_subcommand("train", "train and write metrics and checkpoints");
  auto* ablate = app.add_subcommand("ablate", "FF/RC/RD x readout ablation table");
  auto* grad = app.add_subcommand("gradcheck", "cross-engine and finite-difference gradient check");
  auto* bench = app.add_subcommand("bench", "memory / multiplication scaling sweep");
  auto* grid = app.add_subcommand("grid", "seeded grid search over config fields");
  auto* inspect = app.add_subcommand("inspect", "describe a checkpoint, dataset, raster or config");
  for (auto* s : {gen, train, ablate, grad, bench, grid}) add_common(s, true);
  inspect->add_option("path", inspect_target, "artifact to describe")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(common);
    if (*train) return cmd_train(common);
    if (*ablate) return cmd_ablate(common);
    if (*grad) return cmd_gradcheck(common);
    if (*bench) return cmd_bench(common);
    if (*grid) {
      const RunConfig cfg = load(common);
      const fs::path out(common.out);
      write_resolved(out, cfg);
      const GridResult res = grid_search(cfg, cfg.grid);
      write_text(out / "grid.json", grid_json(res));
      std::cout << res.ranked.size() << " of " << res.planned << " runs" << (res.partial ? " (partial: budget)" : "")
                << "\n";
      for (const auto& r : res.best) {
        std::cout << "  valid " << fmt(r.valid_error) << " test " << fmt(r.test_error) << " seed " << r.seed;
        for (const auto& [p, v] : r.assignment) std::cout << " " << p << "=" << v;
        std::cout << "\n";
      }
      return 0;
    }
    if (*inspect) return cmd_inspect(inspect_target);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
