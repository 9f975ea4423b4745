#include "snnrtrl/io.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "snnrtrl/errors.hpp"

namespace snnrtrl {

using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kCheckpointFormat = "snnrtrl-checkpoint";
constexpr int kCheckpointVersion = 1;

Json tensor_json(const Eigen::MatrixXd& m) {
  Json data = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return Json{{"shape", {m.rows(), m.cols()}}, {"data", data}};
}

Eigen::MatrixXd tensor_from_json(const Json& j, const std::string& name) {
  try {
    const auto& shape = j.at("shape");
    const auto& data = j.at("data");
    if (shape.size() != 2) throw IoError("tensor '" + name + "': shape must have two entries");
    const Eigen::Index rows = shape[0].get<Eigen::Index>();
    const Eigen::Index cols = shape[1].get<Eigen::Index>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw IoError("tensor '" + name + "': data length does not match shape");
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
    }
    return m;
  } catch (const Json::exception& e) {
    throw IoError("tensor '" + name + "': " + e.what());
  }
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

Checkpoint make_checkpoint(const NetworkSpec& net, const LossProgram& program, const std::string& hash,
                           int epoch) {
  const ParamLayout layout(net, program);
  const Eigen::VectorXd flat = get_params(net, layout);
  Checkpoint ckpt;
  ckpt.spec_hash = hash;
  ckpt.epoch = epoch;
  for (const auto& b : layout.blocks()) {
    NamedTensor t;
    t.name = b.name;
    t.value.resize(b.rows, b.cols);
    for (int r = 0; r < b.rows; ++r) {
      for (int c = 0; c < b.cols; ++c) t.value(r, c) = flat[b.offset + r * b.cols + c];
    }
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

std::string checkpoint_json(const Checkpoint& ckpt) {
  Json tensors = Json::object();
  for (const auto& t : ckpt.tensors) tensors[t.name] = tensor_json(t.value);
  const Json j{{"format", kCheckpointFormat},
               {"version", kCheckpointVersion},
               {"spec_hash", ckpt.spec_hash},
               {"epoch", ckpt.epoch},
               {"tensors", tensors}};
  return j.dump(1) + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw IoError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) throw IoError("not a checkpoint file");
  if (!j.contains("version") || !j["version"].is_number_integer() ||
      j["version"].get<int>() != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + (j.contains("version") ? j["version"].dump() : "<missing>"));
  }
  Checkpoint ckpt;
  try {
    ckpt.spec_hash = j.at("spec_hash").get<std::string>();
    ckpt.epoch = j.at("epoch").get<int>();
    for (auto it = j.at("tensors").begin(); it != j.at("tensors").end(); ++it) {
      ckpt.tensors.push_back({it.key(), tensor_from_json(*it, it.key())});
    }
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_text(path, checkpoint_json(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_text(path)); }

void restore_checkpoint(NetworkSpec& net, const LossProgram& program, const Checkpoint& ckpt) {
  const ParamLayout layout(net, program);
  Eigen::VectorXd flat = get_params(net, layout);
  if (ckpt.tensors.size() != layout.blocks().size()) {
    throw ShapeError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, network has " +
                     std::to_string(layout.blocks().size()));
  }
  for (const auto& t : ckpt.tensors) {
    const ParamBlock* b = layout.find(t.name);
    if (!b) throw ShapeError("checkpoint tensor '" + t.name + "' has no counterpart in the network");
    if (t.value.rows() != b->rows || t.value.cols() != b->cols) {
      throw ShapeError("checkpoint tensor '" + t.name + "' has the wrong shape");
    }
    for (int r = 0; r < b->rows; ++r) {
      for (int c = 0; c < b->cols; ++c) flat[b->offset + r * b->cols + c] = t.value(r, c);
    }
  }
  set_params(net, layout, flat);
}

std::string gradient_dump_json(const GradientReport& report, std::uint64_t seed, const std::string& hash) {
  Json tensors = Json::object();
  for (const auto& g : report.grads) tensors[g.name] = tensor_json(g.value);
  const Json j{{"engine", to_string(report.engine)},
               {"seed", seed},
               {"spec_hash", hash},
               {"loss", report.loss},
               {"tensors", tensors}};
  return j.dump(1) + "\n";
}

std::string metric_json_line(const MetricRecord& rec) {
  const Json j{{"seed", rec.seed},
               {"epoch", rec.epoch},
               {"train_error", optional_json(rec.train_error)},
               {"valid_error", optional_json(rec.valid_error)},
               {"test_error", optional_json(rec.test_error)},
               {"mean_loss", rec.mean_loss},
               {"peak_memory_elements", rec.peak_memory_elements},
               {"scalar_mult_count", rec.scalar_mult_count},
               {"wall_ms", rec.wall_ms}};
  return j.dump() + "\n";
}

std::string ablation_json(const AblationTable& table) {
  Json cells = Json::array();
  for (const auto& c : table.cells) {
    cells.push_back(Json{{"mode", to_string(c.mode)},
                         {"readout", to_string(c.readout)},
                         {"mean_err", c.mean},
                         {"sem", optional_json(c.sem)},
                         {"n_seeds", c.errors.size()},
                         {"errors", c.errors}});
  }
  return Json{{"task", table.task}, {"cells", cells}}.dump(2) + "\n";
}

std::string target_csv(const Eigen::MatrixXd& stream) {
  std::ostringstream out;
  out << std::setprecision(17) << "t";
  for (Eigen::Index i = 0; i < stream.cols(); ++i) out << ",y" << i;
  out << "\n";
  for (Eigen::Index t = 0; t < stream.rows(); ++t) {
    out << t;
    for (Eigen::Index i = 0; i < stream.cols(); ++i) out << ',' << stream(t, i);
    out << "\n";
  }
  return out.str();
}

Eigen::MatrixXd parse_target_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("target stream: empty file");
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string cell;
    while (std::getline(h, cell, ',')) header.push_back(cell);
  }
  if (header.empty() || header[0] != "t") throw IoError("target stream: header must start with 't'");
  for (std::size_t i = 1; i < header.size(); ++i) {
    if (header[i] != "y" + std::to_string(i - 1)) {
      throw IoError("target stream: header column " + std::to_string(i) + " must be y" + std::to_string(i - 1));
    }
  }
  const std::size_t k = header.size() - 1;
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream r(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(r, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw IoError("target stream line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (vals.size() != k + 1) {
      throw IoError("target stream line " + std::to_string(line_no) + ": expected " + std::to_string(k + 1) +
                    " columns");
    }
    if (vals[0] != static_cast<double>(rows.size())) {
      throw IoError("target stream line " + std::to_string(line_no) + ": steps must be consecutive from 0");
    }
    rows.emplace_back(vals.begin() + 1, vals.end());
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(k));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t i = 0; i < k; ++i) m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = rows[t][i];
  }
  return m;
}

std::vector<LossLogEntry> loss_log(const NetworkSpec& net, const LossProgram& program, const TrialSet& data,
                                   Split split) {
  std::vector<LossLogEntry> log;
  for (std::size_t i : data.indices(split)) {
    const Target target = make_target(program, data, i);
    NetworkState state = initial_network_state(net);
    HeadState head = head_init(program, net.k_out());
    const Raster& input = data.rasters[i];
    for (int t = 0; t < input.steps(); ++t) {
      state = network_step(net, state, input.row(t));
      head_advance(program, net.readout, state.back().s, head);
      if (head_active(program, head.t)) log.push_back({i, t, head_local_loss(program, head, target).value});
    }
    if (program.locality() == Locality::locking) {
      log.push_back({i, std::nullopt, head_final_loss(program, head, target).value});
    }
  }
  return log;
}

std::string loss_log_jsonl(const std::vector<LossLogEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    Json j{{"trial", e.trial}};
    if (e.t) j["t"] = *e.t;
    j["loss"] = e.loss;
    out += j.dump() + "\n";
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

GridResult grid_search(const RunConfig& base, const GridSpec& grid) {
  std::vector<std::vector<std::pair<std::string, std::string>>> combos{{}};
  for (const auto& axis : grid.axes) {
    if (axis.values.empty()) throw ConfigError("grid axis '" + axis.pointer + "' has no values");
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& c : combos) {
      for (const auto& v : axis.values) {
        auto e = c;
        e.emplace_back(axis.pointer, v);
        next.push_back(std::move(e));
      }
    }
    combos = std::move(next);
  }

  struct Job {
    std::size_t combo;
    std::uint64_t seed;
  };
  std::vector<RunConfig> configs;
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < combos.size(); ++c) {
    configs.push_back(apply_patches(base, combos[c]));
    for (std::uint64_t s : configs.back().experiment.seeds) jobs.push_back({c, s});
  }
  GridResult result;
  result.planned = jobs.size();
  if (grid.budget > 0 && jobs.size() > static_cast<std::size_t>(grid.budget)) {
    jobs.resize(static_cast<std::size_t>(grid.budget));
    result.partial = true;
  }

  std::map<std::string, TrialSet> datasets;
  std::vector<std::string> task_keys(configs.size());
  for (std::size_t c = 0; c < configs.size(); ++c) {
    const Json full = Json::parse(resolved_config_json(configs[c]));
    task_keys[c] = full["task"].dump();
    if (!datasets.count(task_keys[c])) datasets.emplace(task_keys[c], generate_task(configs[c].experiment.task));
  }

  std::vector<GridRun> runs(jobs.size());
  parallel_for(jobs.size(), base.experiment.workers, [&](std::size_t i) {
    const RunConfig& cfg = configs[jobs[i].combo];
    const TrialSet& data = datasets.at(task_keys[jobs[i].combo]);
    const RunResult run = train_run(cfg.experiment, data, jobs[i].seed);
    GridRun& g = runs[i];
    g.assignment = combos[jobs[i].combo];
    g.seed = jobs[i].seed;
    g.spec_hash = spec_hash(cfg);
    g.valid_error = run.selected_valid_error;
    g.test_error = run.selected_test_error;
    g.valid_loss = evaluate(run.net, cfg.experiment.loss, data, Split::valid).mean_loss;
  });

  std::vector<std::size_t> order(runs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const double inf = std::numeric_limits<double>::infinity();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ea = runs[a].valid_error.value_or(inf), eb = runs[b].valid_error.value_or(inf);
    if (ea != eb) return ea < eb;
    return runs[a].valid_loss < runs[b].valid_loss;
  });
  for (std::size_t i : order) result.ranked.push_back(runs[i]);
  const std::size_t keep = std::min(result.ranked.size(), static_cast<std::size_t>(std::max(grid.top, 0)));
  result.best.assign(result.ranked.begin(), result.ranked.begin() + static_cast<std::ptrdiff_t>(keep));
  return result;
}

std::string grid_json(const GridResult& result) {
  auto run_json = [](const GridRun& r) {
    Json assignment = Json::object();
    for (const auto& [p, v] : r.assignment) assignment[p] = Json::parse(v);
    return Json{{"assignment", assignment},
                {"seed", r.seed},
                {"spec_hash", r.spec_hash},
                {"valid_error", optional_json(r.valid_error)},
                {"test_error", optional_json(r.test_error)},
                {"valid_loss", r.valid_loss}};
  };
  Json ranked = Json::array(), best = Json::array();
  for (const auto& r : result.ranked) ranked.push_back(run_json(r));
  for (const auto& r : result.best) best.push_back(run_json(r));
  std::vector<double> errs;
  for (const auto& r : result.best) {
    if (r.test_error) errs.push_back(*r.test_error);
  }
  const auto sem = standard_error(errs);
  return Json{{"planned", result.planned},
              {"executed", result.ranked.size()},
              {"partial", result.partial},
              {"best_mean_test_error", errs.empty() ? Json(nullptr) : Json(mean_of(errs))},
              {"best_sem", optional_json(sem)},
              {"best", best},
              {"ranked", ranked}}
             .dump(2) +
         "\n";
}

}  // namespace snnrtrl
