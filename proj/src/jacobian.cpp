#include <algorithm>
#include <cmath>

#include "snnrtrl/engines.hpp"
#include "snnrtrl/errors.hpp"

namespace snnrtrl {

void CostCounter::alloc(std::int64_t n) {
  live += n;
  peak = std::max(peak, live);
}

void CostCounter::release(std::int64_t n) { live -= n; }

ParamLayout::ParamLayout(const NetworkSpec& net, const LossProgram& program) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    blocks_.push_back({prefix + "W", ParamKind::W, static_cast<int>(l),
                       static_cast<int>(layer.W.rows()), static_cast<int>(layer.W.cols()), size_});
    size_ += static_cast<int>(layer.W.size());
    if (layer.has_recurrent()) {
      blocks_.push_back({prefix + "V", ParamKind::V, static_cast<int>(l),
                         static_cast<int>(layer.V.rows()), static_cast<int>(layer.V.cols()), size_});
      size_ += static_cast<int>(layer.V.size());
    }
  }
  if (program.uses_readout()) {
    if (net.readout.rows() != program.readout.n_classes || net.readout.cols() != net.k_out()) {
      throw ShapeError("readout weights must be " + std::to_string(program.readout.n_classes) + "x" +
                       std::to_string(net.k_out()));
    }
    blocks_.push_back({"readout.R", ParamKind::R, -1, static_cast<int>(net.readout.rows()),
                       static_cast<int>(net.readout.cols()), size_});
    size_ += static_cast<int>(net.readout.size());
  }
}

int ParamLayout::w_offset(int layer) const {
  for (const auto& b : blocks_) {
    if (b.kind == ParamKind::W && b.layer == layer) return b.offset;
  }
  return -1;
}

int ParamLayout::v_offset(int layer) const {
  for (const auto& b : blocks_) {
    if (b.kind == ParamKind::V && b.layer == layer) return b.offset;
  }
  return -1;
}

int ParamLayout::r_offset() const {
  for (const auto& b : blocks_) {
    if (b.kind == ParamKind::R) return b.offset;
  }
  return -1;
}

const ParamBlock* ParamLayout::find(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

namespace {

const Eigen::MatrixXd& tensor_of(const NetworkSpec& net, const ParamBlock& b) {
  switch (b.kind) {
    case ParamKind::W: return net.layers[static_cast<std::size_t>(b.layer)].W;
    case ParamKind::V: return net.layers[static_cast<std::size_t>(b.layer)].V;
    case ParamKind::R: return net.readout;
  }
  return net.readout;
}

Eigen::MatrixXd& tensor_of(NetworkSpec& net, const ParamBlock& b) {
  return const_cast<Eigen::MatrixXd&>(tensor_of(static_cast<const NetworkSpec&>(net), b));
}

const Eigen::MatrixXd* mask_of(const NetworkSpec& net, const ParamBlock& b) {
  if (b.kind == ParamKind::R) return nullptr;
  const auto& layer = net.layers[static_cast<std::size_t>(b.layer)];
  const Eigen::MatrixXd& mask = b.kind == ParamKind::W ? layer.W_mask : layer.V_mask;
  return mask.size() > 0 ? &mask : nullptr;
}

}  // namespace

Eigen::VectorXd get_params(const NetworkSpec& net, const ParamLayout& layout) {
  Eigen::VectorXd flat(layout.size());
  for (const auto& b : layout.blocks()) {
    const auto& m = tensor_of(net, b);
    for (int r = 0; r < b.rows; ++r) {
      for (int c = 0; c < b.cols; ++c) flat[b.offset + r * b.cols + c] = m(r, c);
    }
  }
  return flat;
}

void set_params(NetworkSpec& net, const ParamLayout& layout, const Eigen::VectorXd& flat) {
  if (flat.size() != layout.size()) throw ShapeError("set_params: flat vector has wrong length");
  for (const auto& b : layout.blocks()) {
    auto& m = tensor_of(net, b);
    for (int r = 0; r < b.rows; ++r) {
      for (int c = 0; c < b.cols; ++c) m(r, c) = flat[b.offset + r * b.cols + c];
    }
  }
}

Eigen::VectorXd param_mask(const NetworkSpec& net, const ParamLayout& layout) {
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(layout.size());
  for (const auto& b : layout.blocks()) {
    const auto* m = mask_of(net, b);
    if (!m) continue;
    for (int r = 0; r < b.rows; ++r) {
      for (int c = 0; c < b.cols; ++c) mask[b.offset + r * b.cols + c] = (*m)(r, c) != 0.0 ? 1.0 : 0.0;
    }
  }
  return mask;
}

Eigen::VectorXd GradientReport::flat() const {
  Eigen::Index n = 0;
  for (const auto& g : grads) n += g.value.size();
  Eigen::VectorXd out(n);
  Eigen::Index at = 0;
  for (const auto& g : grads) {
    for (Eigen::Index r = 0; r < g.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < g.value.cols(); ++c) out[at++] = g.value(r, c);
    }
  }
  return out;
}

const Eigen::MatrixXd& GradientReport::tensor(const std::string& name) const {
  for (const auto& g : grads) {
    if (g.name == name) return g.value;
  }
  throw UsageError("gradient report has no tensor '" + name + "'");
}

GradientReport make_report(EngineKind engine, const ParamLayout& layout,
                           const Eigen::VectorXd& flat_grad) {
  GradientReport rep;
  rep.engine = engine;
  for (const auto& b : layout.blocks()) {
    Eigen::MatrixXd m(b.rows, b.cols);
    for (int r = 0; r < b.rows; ++r) {
      for (int c = 0; c < b.cols; ++c) m(r, c) = flat_grad[b.offset + r * b.cols + c];
    }
    rep.grads.push_back({b.name, std::move(m)});
  }
  return rep;
}

JacobianParts assemble_jacobians(const LayerSpec& layer, const LayerState& prev,
                                 const Eigen::VectorXd& x, const SurrogateSpec& surrogate,
                                 bool attach_reset) {
  const int m = layer.m();
  const int k = layer.k;
  const int mk = m * k;
  const int n = layer.n_prev();
  const int c_spk = layer.spike_compartment();
  if (prev.u.size() != mk || prev.s.size() != k) throw ShapeError("assemble_jacobians: state shape");
  if (x.size() != n) throw ShapeError("assemble_jacobians: input length");

  const Eigen::MatrixXd A = layer.coupling();
  const Eigen::VectorXd d = surrogate_deriv(spiking_potential(layer, prev.u), surrogate,
                                            layer.threshold());
  JacobianParts jac;
  jac.m = m;
  jac.scale = layer.scale();
  jac.x_in = x;
  jac.s_rec = prev.s;
  jac.h_implicit = Eigen::MatrixXd::Zero(mk, mk);
  for (int i = 0; i < k; ++i) {
    jac.h_implicit.block(i * m, i * m, m, m) = A;
    if (attach_reset) {
      jac.h_implicit.block(i * m, i * m + c_spk, m, 1) -= layer.threshold() * d[i] * A.col(c_spk);
    }
  }
  jac.h_explicit = Eigen::MatrixXd::Zero(mk, mk);
  if (layer.has_recurrent()) {
    for (int j = 0; j < k; ++j) jac.h_explicit.col(j * m + c_spk) = jac.scale * d[j] * layer.V.col(j);
  }

  const int p = mk * n + (layer.has_recurrent() ? mk * k : 0);
  std::vector<Eigen::Triplet<double>> trip;
  for (int r = 0; r < mk; ++r) {
    for (int j = 0; j < n; ++j) {
      if (x[j] != 0.0) trip.emplace_back(r, r * n + j, jac.scale * x[j]);
    }
    if (layer.has_recurrent()) {
      for (int j = 0; j < k; ++j) {
        if (prev.s[j] != 0.0) trip.emplace_back(r, mk * n + r * k + j, jac.scale * prev.s[j]);
      }
    }
  }
  jac.f_immediate.resize(mk, p);
  jac.f_immediate.setFromTriplets(trip.begin(), trip.end());
  return jac;
}

namespace {

// Dense column of local parameter (neuron i, compartment row r, local column j).
int dense_column(const InfluenceStore& s, int i, int r, int j) {
  const int row = i * s.m + r;
  if (j < s.n) return row * s.n + j;
  return s.m * s.k * s.n + row * s.k + (j - s.n);
}

}  // namespace

Eigen::MatrixXd InfluenceStore::dense() const {
  const int mk = m * k;
  const int w = local_width();
  switch (mode) {
    case TraceMode::dense:
      return G;
    case TraceMode::block: {
      Eigen::MatrixXd out = Eigen::MatrixXd::Zero(mk, param_count());
      for (int i = 0; i < k; ++i) {
        for (int a = 0; a < m; ++a) {
          for (int r = 0; r < m; ++r) {
            for (int j = 0; j < w; ++j) out(i * m + a, dense_column(*this, i, r, j)) = blocks[i](a, r * w + j);
          }
        }
      }
      return out;
    }
    case TraceMode::vector: {
      Eigen::MatrixXd out = Eigen::MatrixXd::Zero(mk, param_count());
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < w; ++j) {
          out(i, dense_column(*this, i, 0, j)) = scale * (j < n ? q_in[j] : q[j - n]);
        }
      }
      return out;
    }
    case TraceMode::none:
      break;
  }
  throw UsageError("influence store has no trace mode");
}

std::int64_t InfluenceStore::nonzero_count() const {
  switch (mode) {
    case TraceMode::dense:
      return (G.array() != 0.0).count();
    case TraceMode::block: {
      std::int64_t nz = 0;
      for (const auto& b : blocks) nz += (b.array() != 0.0).count();
      return nz;
    }
    case TraceMode::vector:
      return (dense().array() != 0.0).count();
    case TraceMode::none:
      break;
  }
  return 0;
}

std::int64_t InfluenceStore::stored_elements() const {
  switch (mode) {
    case TraceMode::dense: return G.size();
    case TraceMode::block: return static_cast<std::int64_t>(blocks.size()) * m * m * local_width();
    case TraceMode::vector: return q_in.size() + q.size();
    case TraceMode::none: break;
  }
  return 0;
}

InfluenceStore make_influence_store(const LayerSpec& layer, TraceMode mode) {
  InfluenceStore s;
  s.mode = mode;
  s.k = layer.k;
  s.m = layer.m();
  s.n = layer.n_prev();
  s.recurrent = layer.has_recurrent();
  s.scale = layer.scale();
  switch (mode) {
    case TraceMode::dense:
      s.G = Eigen::MatrixXd::Zero(s.m * s.k, s.param_count());
      break;
    case TraceMode::block:
      s.blocks.assign(static_cast<std::size_t>(s.k), Eigen::MatrixXd::Zero(s.m, s.m * s.local_width()));
      break;
    case TraceMode::vector:
      if (s.m != 1) throw UsageError("vector traces need single-compartment neurons");
      s.q_in = Eigen::VectorXd::Zero(s.n);
      s.q = Eigen::VectorXd::Zero(s.recurrent ? s.k : 0);
      break;
    case TraceMode::none:
      throw UsageError("influence store needs a trace mode");
  }
  return s;
}

bool in_block_support(const InfluenceStore& store, int row, int col) {
  const int mk = store.m * store.k;
  const int neuron_of_row = row / store.m;
  const int param_row = col < mk * store.n ? col / store.n : (col - mk * store.n) / store.k;
  return param_row / store.m == neuron_of_row;
}

InfluenceStore rtrl_exact_step(const InfluenceStore& g_prev, const JacobianParts& jac,
                               bool drop_explicit) {
  if (g_prev.mode != TraceMode::dense) throw UsageError("rtrl_exact_step needs a dense store");
  if (jac.h_implicit.rows() != g_prev.G.rows() || jac.f_immediate.cols() != g_prev.G.cols()) {
    throw ShapeError("rtrl_exact_step: Jacobian does not match the store");
  }
  InfluenceStore next = g_prev;
  if (drop_explicit) {
    next.G.noalias() = jac.h_implicit * g_prev.G;
  } else {
    next.G.noalias() = (jac.h_implicit + jac.h_explicit) * g_prev.G;
  }
  next.G += jac.f_immediate;
  return next;
}

InfluenceStore rtrl_sparse_step(const InfluenceStore& g_prev, const JacobianParts& jac) {
  InfluenceStore next = g_prev;
  const int m = g_prev.m;
  const int w = g_prev.local_width();
  if (jac.x_in.size() != g_prev.n || jac.h_implicit.rows() != m * g_prev.k) {
    throw ShapeError("rtrl_sparse_step: Jacobian does not match the store");
  }
  if (g_prev.mode == TraceMode::block) {
    Eigen::VectorXd z(w);
    z.head(g_prev.n) = jac.x_in;
    if (g_prev.recurrent) z.tail(g_prev.k) = jac.s_rec;
    for (int i = 0; i < g_prev.k; ++i) {
      auto& b = next.blocks[static_cast<std::size_t>(i)];
      b = jac.h_implicit.block(i * m, i * m, m, m) * g_prev.blocks[static_cast<std::size_t>(i)];
      for (int r = 0; r < m; ++r) b.block(r, r * w, 1, w) += jac.scale * z.transpose();
    }
    return next;
  }
  if (g_prev.mode == TraceMode::vector) {
    const double beta = jac.h_implicit(0, 0);
    for (int i = 1; i < g_prev.k; ++i) {
      if (jac.h_implicit(i, i) != beta) {
        throw UsageError("vector traces need one shared decay factor per layer");
      }
    }
    next.q_in = trace_update(g_prev.q_in, beta, jac.x_in);
    if (g_prev.recurrent) next.q = trace_update(g_prev.q, beta, jac.s_rec);
    return next;
  }
  throw UsageError("rtrl_sparse_step needs a block or vector store");
}

Eigen::VectorXd trace_update(const Eigen::VectorXd& q, double beta, const Eigen::VectorXd& s) {
  if (q.size() != s.size()) throw ShapeError("trace_update: length mismatch");
  return beta * q + s;
}

Eigen::MatrixXd three_factor_gradient(const Eigen::VectorXd& dl_ds, const Eigen::VectorXd& u,
                                      const Eigen::VectorXd& q, const SurrogateSpec& spec,
                                      double threshold) {
  if (dl_ds.size() != u.size()) throw ShapeError("three_factor_gradient: length mismatch");
  const Eigen::VectorXd post = dl_ds.cwiseProduct(surrogate_deriv(u, spec, threshold));
  return post * q.transpose();
}

std::string to_string(EngineKind kind) {
  switch (kind) {
    case EngineKind::bptt: return "bptt";
    case EngineKind::rtrl_exact: return "rtrl_exact";
    case EngineKind::rtrl_sparse: return "rtrl_sparse";
    case EngineKind::mixed: return "mixed";
    case EngineKind::finite_difference: return "finite_difference";
  }
  return "?";
}

EngineKind engine_kind_from_string(const std::string& s) {
  if (s == "bptt") return EngineKind::bptt;
  if (s == "rtrl_exact") return EngineKind::rtrl_exact;
  if (s == "rtrl_sparse") return EngineKind::rtrl_sparse;
  if (s == "mixed") return EngineKind::mixed;
  throw ConfigError("unknown engine '" + s + "'");
}

std::string to_string(TraceMode mode) {
  switch (mode) {
    case TraceMode::none: return "none";
    case TraceMode::dense: return "dense";
    case TraceMode::block: return "block";
    case TraceMode::vector: return "vector";
  }
  return "?";
}

}  // namespace snnrtrl
