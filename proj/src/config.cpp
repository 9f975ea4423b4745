#include "snnrtrl/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "snnrtrl/errors.hpp"
#include "snnrtrl/util.hpp"

namespace snnrtrl {

using Json = nlohmann::ordered_json;

namespace {

std::string type_name(const Json& j) {
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  return j.type_name();
}

// Reads one JSON object, remembering which keys were consumed so leftovers can
// be reported as unknown.
class Node {
 public:
  Node(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object, got " + type_name(j_));
  }

  std::string at(const std::string& key) const { return path_ + "/" + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const Json* get(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const Json* v = get(key)) {
      if (!v->is_number()) throw ConfigError(at(key) + ": expected a number, got " + type_name(*v));
      out = v->get<double>();
    }
  }

  void read(const std::string& key, int& out) {
    if (const Json* v = get(key)) {
      if (!v->is_number_integer()) {
        throw ConfigError(at(key) + ": expected an integer, got " + type_name(*v));
      }
      out = v->get<int>();
    }
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (const Json* v = get(key)) out = to_u64(*v, at(key));
  }

  void read(const std::string& key, bool& out) {
    if (const Json* v = get(key)) {
      if (!v->is_boolean()) throw ConfigError(at(key) + ": expected a boolean, got " + type_name(*v));
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const Json* v = get(key)) {
      if (!v->is_string()) throw ConfigError(at(key) + ": expected a string, got " + type_name(*v));
      out = v->get<std::string>();
    }
  }

  template <class E, class F>
  void read_enum(const std::string& key, E& out, F from_string) {
    std::string s;
    read(key, s);
    if (!has(key)) return;
    try {
      out = from_string(s);
    } catch (const Error& e) {
      throw ConfigError(at(key) + ": " + e.what());
    }
  }

  template <class T, class F>
  void read_list(const std::string& key, std::vector<T>& out, F convert) {
    if (const Json* v = get(key)) {
      if (!v->is_array()) throw ConfigError(at(key) + ": expected an array, got " + type_name(*v));
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(convert((*v)[i], at(key) + "/" + std::to_string(i)));
    }
  }

  Node child(const std::string& key) {
    static const Json empty = Json::object();
    const Json* v = get(key);
    return Node(v ? *v : empty, at(key));
  }

  // Unknown keys are errors.
  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(at(it.key()) + ": unknown key");
    }
  }

  const std::string& path() const { return path_; }

  static std::uint64_t to_u64(const Json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigError(path + ": expected a non-negative integer, got " + type_name(v));
  }

 private:
  std::string where() const { return path_.empty() ? "/" : path_; }

  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path + ": " + what);
}

int as_int(const Json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer, got " + type_name(v));
  return v.get<int>();
}

template <class F>
auto enum_item(F from_string) {
  return [from_string](const Json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path + ": expected a string, got " + type_name(v));
    try {
      return from_string(v.get<std::string>());
    } catch (const Error& e) {
      throw ConfigError(path + ": " + e.what());
    }
  };
}

void read_split(Node node, SplitSpec& split) {
  node.read("train", split.train);
  node.read("valid", split.valid);
  node.done();
  require(split.train >= 0.0 && split.valid >= 0.0 && split.train + split.valid <= 1.0, node.path(),
          "train and valid fractions must be >= 0 and sum to <= 1");
}

void read_task(Node node, TaskSpec& task) {
  node.read_enum("kind", task.kind, task_kind_from_string);
  const std::string p = node.path();
  switch (task.kind) {
    case TaskKind::randman: {
      auto& s = task.randman;
      node.read("seed", s.seed);
      node.read("n_classes", s.n_classes);
      node.read("manifold_dim", s.manifold_dim);
      node.read("embedding_dim", s.embedding_dim);
      node.read("smoothness", s.smoothness);
      node.read("samples_per_class", s.samples_per_class);
      node.read("time_window", s.time_window);
      node.read("dt", s.dt);
      read_split(node.child("split"), s.split);
      require(s.n_classes >= 1, node.at("n_classes"), "must be >= 1");
      require(s.manifold_dim >= 1, node.at("manifold_dim"), "must be >= 1");
      require(s.embedding_dim >= s.manifold_dim, node.at("embedding_dim"), "must be >= manifold_dim");
      require(s.smoothness >= 1, node.at("smoothness"), "must be >= 1");
      require(s.samples_per_class >= 1, node.at("samples_per_class"), "must be >= 1");
      require(s.dt > 0.0, node.at("dt"), "must be > 0");
      require(s.time_window >= s.dt, node.at("time_window"), "must be >= dt");
      break;
    }
    case TaskKind::latency: {
      auto& s = task.latency;
      node.read("seed", s.seed);
      node.read("n_classes", s.n_classes);
      node.read("n_in", s.n_in);
      node.read("t_max", s.t_max);
      node.read("samples_per_class", s.samples_per_class);
      node.read("jitter", s.jitter);
      read_split(node.child("split"), s.split);
      require(s.n_classes >= 1, node.at("n_classes"), "must be >= 1");
      require(s.n_in >= 1, node.at("n_in"), "must be >= 1");
      require(s.t_max >= 1, node.at("t_max"), "must be >= 1");
      require(s.samples_per_class >= 1, node.at("samples_per_class"), "must be >= 1");
      require(s.jitter >= 0.0, node.at("jitter"), "must be >= 0");
      break;
    }
    case TaskKind::memory: {
      auto& s = task.memory;
      node.read("seed", s.seed);
      node.read("gap", s.gap);
      node.read("n_classes", s.n_classes);
      node.read("n_in", s.n_in);
      node.read("cue_steps", s.cue_steps);
      node.read("query_steps", s.query_steps);
      node.read("cue_rate", s.cue_rate);
      node.read("flip", s.flip);
      node.read("noise_rate", s.noise_rate);
      node.read("samples_per_class", s.samples_per_class);
      read_split(node.child("split"), s.split);
      require(s.gap >= 0, node.at("gap"), "must be >= 0");
      require(s.n_classes >= 1, node.at("n_classes"), "must be >= 1");
      require(s.n_in >= 2, node.at("n_in"), "must be >= 2 (cue channels plus the recall channel)");
      require(s.cue_steps >= 1, node.at("cue_steps"), "must be >= 1");
      require(s.query_steps >= 1, node.at("query_steps"), "must be >= 1");
      require(s.cue_rate > 0.0 && s.cue_rate <= 1.0, node.at("cue_rate"), "must lie in (0, 1]");
      require(s.flip >= 0.0 && s.flip <= 1.0, node.at("flip"), "must lie in [0, 1]");
      require(s.noise_rate >= 0.0 && s.noise_rate <= 1.0, node.at("noise_rate"), "must lie in [0, 1]");
      require(s.samples_per_class >= 1, node.at("samples_per_class"), "must be >= 1");
      break;
    }
    case TaskKind::tracking: {
      auto& s = task.tracking;
      node.read("seed", s.seed);
      node.read("n_in", s.n_in);
      node.read("n_out", s.n_out);
      node.read("steps", s.steps);
      node.read("trials", s.trials);
      node.read("input_rate", s.input_rate);
      node.read("teacher_gain", s.teacher_gain);
      read_split(node.child("split"), s.split);
      require(s.n_in >= 1, node.at("n_in"), "must be >= 1");
      require(s.n_out >= 1, node.at("n_out"), "must be >= 1");
      require(s.steps >= 1, node.at("steps"), "must be >= 1");
      require(s.trials >= 1, node.at("trials"), "must be >= 1");
      require(s.input_rate >= 0.0 && s.input_rate <= 1.0, node.at("input_rate"), "must lie in [0, 1]");
      break;
    }
  }
  node.done();
  (void)p;
}

int task_steps(const TaskSpec& t) {
  switch (t.kind) {
    case TaskKind::randman: return t.randman.steps();
    case TaskKind::latency: return t.latency.t_max;
    case TaskKind::memory: return t.memory.steps();
    case TaskKind::tracking: return t.tracking.steps;
  }
  return 0;
}

int task_classes(const TaskSpec& t) {
  switch (t.kind) {
    case TaskKind::randman: return t.randman.n_classes;
    case TaskKind::latency: return t.latency.n_classes;
    case TaskKind::memory: return t.memory.n_classes;
    case TaskKind::tracking: return t.tracking.n_out;
  }
  return 0;
}

void read_network(Node node, NetworkTemplate& net) {
  node.read_enum("mode", net.mode, arch_mode_from_string);
  if (const Json* layers = node.get("layers")) {
    if (!layers->is_array()) throw ConfigError(node.at("layers") + ": expected an array, got " + type_name(*layers));
    require(!layers->empty(), node.at("layers"), "needs at least one layer");
    net.layers.clear();
    for (std::size_t i = 0; i < layers->size(); ++i) {
      Node l((*layers)[i], node.at("layers") + "/" + std::to_string(i));
      LayerTemplate t;
      l.read("k", t.k);
      l.read("tau_mem", t.tau_mem);
      l.read("dt", t.dt);
      l.read("threshold", t.threshold);
      l.read_enum("scale_mode", t.scale_mode, input_scale_mode_from_string);
      l.read("tau_syn", t.tau_syn);
      l.done();
      require(t.k >= 1, l.at("k"), "must be >= 1");
      require(t.tau_mem > 0.0, l.at("tau_mem"), "must be > 0 (membrane time constant)");
      require(t.dt > 0.0, l.at("dt"), "must be > 0");
      require(t.threshold > 0.0, l.at("threshold"), "must be > 0");
      require(t.tau_syn >= 0.0, l.at("tau_syn"), "must be >= 0 (0 selects the single-compartment neuron)");
      net.layers.push_back(t);
    }
  }
  {
    Node s = node.child("surrogate");
    s.read_enum("kind", net.surrogate.kind, surrogate_kind_from_string);
    s.read("slope", net.surrogate.slope);
    s.done();
    require(net.surrogate.slope > 0.0, s.at("slope"), "must be > 0");
  }
  node.read("init_gain", net.init_gain);
  node.read("recurrent_gain", net.recurrent_gain);
  node.read("readout_gain", net.readout_gain);
  node.read("self_connections", net.self_connections);
  node.done();
  require(net.init_gain >= 0.0, node.at("init_gain"), "must be >= 0");
  require(net.recurrent_gain >= 0.0, node.at("recurrent_gain"), "must be >= 0");
  require(net.readout_gain >= 0.0, node.at("readout_gain"), "must be >= 0");
}

void read_loss(Node node, ExperimentConfig& cfg) {
  LossProgram& loss = cfg.loss;
  const int steps = task_steps(cfg.task);
  node.read_enum("head", loss.head, head_kind_from_string);
  {
    Node k = node.child("kernel");
    k.read_enum("kind", loss.kernel.kind, kernel_kind_from_string);
    k.read("tau", loss.kernel.tau);
    k.read("tau_rise", loss.kernel.tau_rise);
    k.read("dt", loss.kernel.dt);
    k.read("normalized", loss.kernel.normalized);
    k.done();
    try {
      validate_kernel(loss.kernel);
    } catch (const Error& e) {
      throw ConfigError(k.path() + ": " + e.what());
    }
  }
  const LayerTemplate& last = cfg.network.layers.back();
  loss.readout.beta_ro = std::exp(-last.dt / last.tau_mem);
  node.read("beta_ro", loss.readout.beta_ro);
  loss.readout_from = cfg.task.kind == TaskKind::memory ? cfg.task.memory.query_start() : 0;
  node.read("readout_from", loss.readout_from);
  loss.label_delay = 0;
  node.read("label_delay", loss.label_delay);
  node.done();
  loss.readout.n_classes = task_classes(cfg.task);
  require(loss.readout.beta_ro >= 0.0 && loss.readout.beta_ro < 1.0, node.at("beta_ro"), "must lie in [0, 1)");
  require(loss.readout_from >= 0 && loss.readout_from < steps, node.at("readout_from"),
          "must lie in [0, " + std::to_string(steps) + ")");
  require(loss.label_delay >= 0 && loss.label_delay < steps, node.at("label_delay"),
          "must lie in [0, " + std::to_string(steps) + ")");

  const bool regression = cfg.task.kind == TaskKind::tracking;
  if (regression) {
    require(!loss.uses_label(), node.at("head"), "task 'tracking' has no labels; use van_rossum or local_mse");
    require(last.k == cfg.task.tracking.n_out, node.path(),
            "output layer has " + std::to_string(last.k) + " neurons but the tracking target has " +
                std::to_string(cfg.task.tracking.n_out));
  } else {
    require(loss.uses_label(), node.at("head"), "classification tasks need a readout head");
  }
}

void read_engine(Node node, ExperimentConfig& cfg) {
  node.read_enum("kind", cfg.engine, engine_kind_from_string);
  node.read("smooth_forward", cfg.grad.smooth_forward);
  node.read("detach_cross_layer", cfg.grad.detach_cross_layer);
  node.done();
  require(cfg.engine != EngineKind::finite_difference, node.at("kind"),
          "finite_difference is a verification oracle, not a training engine");
  if (cfg.engine == EngineKind::rtrl_sparse || cfg.engine == EngineKind::mixed) {
    require(cfg.network.layers.size() == 1, node.at("kind"),
            to_string(cfg.engine) + " supports a single hidden layer");
  }
  if (cfg.engine == EngineKind::mixed) {
    require(cfg.loss.locality() == Locality::online, node.at("kind"),
            "mixed mode needs an online loss head; " + to_string(cfg.loss.head) + " is locking");
  }
}

void read_optimizer(Node node, OptimizerSpec& o) {
  node.read_enum("kind", o.kind, optimizer_kind_from_string);
  node.read("lr", o.lr);
  node.read("beta1", o.beta1);
  node.read("beta2", o.beta2);
  node.read("eps", o.eps);
  node.read("clip", o.clip);
  node.done();
  require(o.lr > 0.0, node.at("lr"), "must be > 0");
  require(o.beta1 >= 0.0 && o.beta1 < 1.0, node.at("beta1"), "must lie in [0, 1)");
  require(o.beta2 >= 0.0 && o.beta2 < 1.0, node.at("beta2"), "must lie in [0, 1)");
  require(o.eps > 0.0, node.at("eps"), "must be > 0");
}

void read_training(Node node, ExperimentConfig& cfg) {
  node.read("epochs", cfg.epochs);
  node.read("batch_size", cfg.batch_size);
  node.read_enum("cadence", cfg.cadence, cadence_from_string);
  node.read_list("seeds", cfg.seeds, Node::to_u64);
  node.read("workers", cfg.workers);
  node.read("eval_train", cfg.eval_train);
  node.done();
  require(cfg.epochs >= 0, node.at("epochs"), "must be >= 0");
  require(cfg.batch_size >= 1, node.at("batch_size"), "must be >= 1");
  require(!cfg.seeds.empty(), node.at("seeds"), "needs at least one seed");
  require(cfg.workers >= 1, node.at("workers"), "must be >= 1");
  if (cfg.cadence == Cadence::per_step) {
    require(cfg.engine != EngineKind::bptt, node.at("cadence"), "per_step updates need an online engine");
    require(cfg.loss.locality() == Locality::online, node.at("cadence"),
            "per_step updates need an online loss head; " + to_string(cfg.loss.head) + " is locking");
  }
}

void read_gradcheck(Node node, GradcheckSpec& g) {
  node.read("trials", g.trials);
  node.read("fd_step", g.fd_step);
  node.read("tol_exact", g.tol_exact);
  node.read("tol_sparse", g.tol_sparse);
  node.read("tol_fd", g.tol_fd);
  node.done();
  require(g.trials >= 1, node.at("trials"), "must be >= 1");
  require(g.fd_step > 0.0, node.at("fd_step"), "must be > 0");
  require(g.tol_exact > 0.0, node.at("tol_exact"), "must be > 0");
  require(g.tol_sparse > 0.0, node.at("tol_sparse"), "must be > 0");
  require(g.tol_fd > 0.0, node.at("tol_fd"), "must be > 0");
}

void read_bench(Node node, BenchSpec& b) {
  node.read_list("engines", b.engines, enum_item(engine_kind_from_string));
  node.read_list("k", b.k, as_int);
  node.read_list("T", b.T, as_int);
  node.read("n_in", b.n_in);
  node.done();
  require(!b.engines.empty(), node.at("engines"), "needs at least one engine");
  require(!b.k.empty(), node.at("k"), "needs at least one size");
  require(!b.T.empty(), node.at("T"), "needs at least one length");
  for (int k : b.k) require(k >= 1, node.at("k"), "sizes must be >= 1");
  for (int t : b.T) require(t >= 1, node.at("T"), "lengths must be >= 1");
  require(b.n_in >= 0, node.at("n_in"), "must be >= 0");
}

void read_ablation(Node node, AblationSpec& a) {
  node.read_list("modes", a.modes, enum_item(arch_mode_from_string));
  node.read_list("readouts", a.readouts, enum_item(head_kind_from_string));
  node.done();
  require(!a.modes.empty(), node.at("modes"), "needs at least one mode");
  require(!a.readouts.empty(), node.at("readouts"), "needs at least one readout");
  for (HeadKind h : a.readouts) {
    require(h == HeadKind::sum_readout_ce || h == HeadKind::max_readout_ce || h == HeadKind::step_readout_ce,
            node.at("readouts"), "ablation readouts must be classification heads");
  }
}

void read_grid(Node node, GridSpec& g) {
  if (const Json* axes = node.get("axes")) {
    if (!axes->is_object()) throw ConfigError(node.at("axes") + ": expected an object, got " + type_name(*axes));
    g.axes.clear();
    for (auto it = axes->begin(); it != axes->end(); ++it) {
      const std::string p = node.at("axes") + "/" + it.key();
      if (!it->is_array() || it->empty()) throw ConfigError(p + ": expected a non-empty array of values");
      GridAxis axis;
      axis.pointer = it.key();
      for (const auto& v : *it) axis.values.push_back(v.dump());
      g.axes.push_back(axis);
    }
  }
  node.read("budget", g.budget);
  node.read("top", g.top);
  node.done();
  require(g.budget >= 0, node.at("budget"), "must be >= 0");
  require(g.top >= 1, node.at("top"), "must be >= 1");
}

RunConfig from_json(const Json& doc) {
  RunConfig cfg;
  Node root(doc, "");
  read_task(root.child("task"), cfg.experiment.task);
  read_network(root.child("network"), cfg.experiment.network);
  read_loss(root.child("loss"), cfg.experiment);
  read_engine(root.child("engine"), cfg.experiment);
  read_optimizer(root.child("optimizer"), cfg.experiment.optimizer);
  read_training(root.child("training"), cfg.experiment);
  read_gradcheck(root.child("gradcheck"), cfg.gradcheck);
  read_bench(root.child("bench"), cfg.bench);
  read_ablation(root.child("ablation"), cfg.ablation);
  read_grid(root.child("grid"), cfg.grid);
  root.done();
  return cfg;
}

Json split_json(const SplitSpec& s) { return Json{{"train", s.train}, {"valid", s.valid}}; }

Json task_json(const TaskSpec& t) {
  Json j;
  j["kind"] = to_string(t.kind);
  switch (t.kind) {
    case TaskKind::randman: {
      const auto& s = t.randman;
      j["seed"] = s.seed;
      j["n_classes"] = s.n_classes;
      j["manifold_dim"] = s.manifold_dim;
      j["embedding_dim"] = s.embedding_dim;
      j["smoothness"] = s.smoothness;
      j["samples_per_class"] = s.samples_per_class;
      j["time_window"] = s.time_window;
      j["dt"] = s.dt;
      j["split"] = split_json(s.split);
      break;
    }
    case TaskKind::latency: {
      const auto& s = t.latency;
      j["seed"] = s.seed;
      j["n_classes"] = s.n_classes;
      j["n_in"] = s.n_in;
      j["t_max"] = s.t_max;
      j["samples_per_class"] = s.samples_per_class;
      j["jitter"] = s.jitter;
      j["split"] = split_json(s.split);
      break;
    }
    case TaskKind::memory: {
      const auto& s = t.memory;
      j["seed"] = s.seed;
      j["gap"] = s.gap;
      j["n_classes"] = s.n_classes;
      j["n_in"] = s.n_in;
      j["cue_steps"] = s.cue_steps;
      j["query_steps"] = s.query_steps;
      j["cue_rate"] = s.cue_rate;
      j["flip"] = s.flip;
      j["noise_rate"] = s.noise_rate;
      j["samples_per_class"] = s.samples_per_class;
      j["split"] = split_json(s.split);
      break;
    }
    case TaskKind::tracking: {
      const auto& s = t.tracking;
      j["seed"] = s.seed;
      j["n_in"] = s.n_in;
      j["n_out"] = s.n_out;
      j["steps"] = s.steps;
      j["trials"] = s.trials;
      j["input_rate"] = s.input_rate;
      j["teacher_gain"] = s.teacher_gain;
      j["split"] = split_json(s.split);
      break;
    }
  }
  return j;
}

Json to_json(const RunConfig& cfg) {
  const ExperimentConfig& e = cfg.experiment;
  Json j;
  j["task"] = task_json(e.task);

  Json net;
  net["mode"] = to_string(e.network.mode);
  net["layers"] = Json::array();
  for (const auto& l : e.network.layers) {
    net["layers"].push_back(Json{{"k", l.k},
                                 {"tau_mem", l.tau_mem},
                                 {"dt", l.dt},
                                 {"threshold", l.threshold},
                                 {"scale_mode", to_string(l.scale_mode)},
                                 {"tau_syn", l.tau_syn}});
  }
  net["surrogate"] = Json{{"kind", to_string(e.network.surrogate.kind)}, {"slope", e.network.surrogate.slope}};
  net["init_gain"] = e.network.init_gain;
  net["recurrent_gain"] = e.network.recurrent_gain;
  net["readout_gain"] = e.network.readout_gain;
  net["self_connections"] = e.network.self_connections;
  j["network"] = net;

  j["loss"] = Json{{"head", to_string(e.loss.head)},
                   {"kernel",
                    Json{{"kind", to_string(e.loss.kernel.kind)},
                         {"tau", e.loss.kernel.tau},
                         {"tau_rise", e.loss.kernel.tau_rise},
                         {"dt", e.loss.kernel.dt},
                         {"normalized", e.loss.kernel.normalized}}},
                   {"beta_ro", e.loss.readout.beta_ro},
                   {"readout_from", e.loss.readout_from},
                   {"label_delay", e.loss.label_delay}};
  j["engine"] = Json{{"kind", to_string(e.engine)},
                     {"smooth_forward", e.grad.smooth_forward},
                     {"detach_cross_layer", e.grad.detach_cross_layer}};
  j["optimizer"] = Json{{"kind", to_string(e.optimizer.kind)}, {"lr", e.optimizer.lr},
                        {"beta1", e.optimizer.beta1},      {"beta2", e.optimizer.beta2},
                        {"eps", e.optimizer.eps},          {"clip", e.optimizer.clip}};
  j["training"] = Json{{"epochs", e.epochs},   {"batch_size", e.batch_size},
                       {"cadence", to_string(e.cadence)}, {"seeds", e.seeds},
                       {"workers", e.workers}, {"eval_train", e.eval_train}};
  j["gradcheck"] = Json{{"trials", cfg.gradcheck.trials},       {"fd_step", cfg.gradcheck.fd_step},
                        {"tol_exact", cfg.gradcheck.tol_exact}, {"tol_sparse", cfg.gradcheck.tol_sparse},
                        {"tol_fd", cfg.gradcheck.tol_fd}};
  Json engines = Json::array();
  for (EngineKind k : cfg.bench.engines) engines.push_back(to_string(k));
  j["bench"] = Json{{"engines", engines}, {"k", cfg.bench.k}, {"T", cfg.bench.T}, {"n_in", cfg.bench.n_in}};
  Json modes = Json::array();
  for (ArchMode m : cfg.ablation.modes) modes.push_back(to_string(m));
  Json readouts = Json::array();
  for (HeadKind h : cfg.ablation.readouts) readouts.push_back(to_string(h));
  j["ablation"] = Json{{"modes", modes}, {"readouts", readouts}};
  Json axes = Json::object();
  for (const auto& a : cfg.grid.axes) {
    Json values = Json::array();
    for (const auto& v : a.values) values.push_back(Json::parse(v));
    axes[a.pointer] = values;
  }
  j["grid"] = Json{{"axes", axes}, {"budget", cfg.grid.budget}, {"top", cfg.grid.top}};
  return j;
}

std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

Json parse_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::string msg = e.what();
    const auto pos = msg.find("syntax error");
    if (pos != std::string::npos) msg = msg.substr(pos);
    throw ConfigError(source + ":" + line_col(text, e.byte) + ": " + msg);
  }
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source) {
  const Json doc = parse_text(text, source);
  try {
    return from_json(doc);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string resolved_config_json(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

std::string spec_hash(const RunConfig& config) { return fnv1a_hex(to_json(config).dump()); }

RunConfig apply_patches(const RunConfig& config,
                        const std::vector<std::pair<std::string, std::string>>& patches) {
  Json doc = to_json(config);
  for (const auto& [pointer, value] : patches) {
    Json::json_pointer ptr;
    try {
      ptr = Json::json_pointer(pointer);
    } catch (const Json::exception& e) {
      throw ConfigError("grid axis '" + pointer + "': not a JSON pointer");
    }
    if (!doc.contains(ptr)) throw ConfigError("grid axis '" + pointer + "': no such field in the resolved config");
    doc[ptr] = parse_text(value, "grid value for " + pointer);
  }
  return from_json(doc);
}

void override_seed(RunConfig& config, std::uint64_t seed) {
  TaskSpec& t = config.experiment.task;
  t.randman.seed = t.latency.seed = t.memory.seed = t.tracking.seed = seed;
  auto& seeds = config.experiment.seeds;
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = seed + i;
}

}  // namespace snnrtrl
