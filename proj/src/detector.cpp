#include "atom/detector.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <string>

namespace atom {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vector sigmoid(const Vector& a) { return a.unaryExpr([](double v) { return logistic(v); }); }

void require_finite(const Vector& v, const char* what, std::size_t step) {
  if (!v.allFinite()) {
    throw DetectorError(std::string("non-finite ") + what + " at step " + std::to_string(step));
  }
}

}  // namespace

double scale_factor(double x, double lambda) {
  if (lambda < 0.0) throw DetectorError("lambda must be non-negative");
  return 1.0 + lambda * (2.0 * logistic(lambda * x) - 1.0);
}

QueryEmbedding embed_query(const AttributedGraph& g, const VictimModel& victim, NodeId v, double lambda) {
  g.check_node(v);
  const auto hood = closed_neighborhood(g, v);
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(victim.hidden_dim()));
  for (NodeId u : hood) sum += hidden_embedding(victim, g, u);
  const double p = std::max(1, g.core_numbers()[v]);
  const double p_max = std::max(1, g.max_core());
  QueryEmbedding e;
  e.lambda = lambda;
  e.core_ratio = p_max <= 1.0 ? 1.0 : std::log(p) / std::log(p_max);
  e.vector = sum / static_cast<double>(hood.size()) * scale_factor(e.core_ratio, lambda);
  return e;
}

EmbeddingTable::EmbeddingTable(const AttributedGraph& g, const VictimModel& victim, double lambda)
    : lambda_(lambda) {
  const VictimOutputs out = forward_all(victim, g);
  const double p_max = std::max(1, g.max_core());
  rows_.reserve(g.node_count());
  for (NodeId v = 0; v < g.node_count(); ++v) {
    const auto hood = closed_neighborhood(g, v);
    Vector sum = Vector::Zero(out.hidden.cols());
    for (NodeId u : hood) sum += out.hidden.row(static_cast<Eigen::Index>(u)).transpose();
    const double p = std::max(1, g.core_numbers()[v]);
    const double ratio = p_max <= 1.0 ? 1.0 : std::log(p) / std::log(p_max);
    rows_.push_back(sum / static_cast<double>(hood.size()) * scale_factor(ratio, lambda));
  }
}

std::vector<Vector> EmbeddingTable::sequence(std::span<const NodeId> nodes) const {
  std::vector<Vector> out;
  out.reserve(nodes.size());
  for (NodeId v : nodes) out.push_back((*this)[v]);
  return out;
}

std::vector<Matrix*> DetectorParams::tensors() {
  return {&Wg, &bg, &Wz, &Uz, &bz, &Wr, &Ur, &br, &Wh, &Uh, &bh, &Wa, &ba};
}

std::vector<const Matrix*> DetectorParams::tensors() const {
  return {&Wg, &bg, &Wz, &Uz, &bz, &Wr, &Ur, &br, &Wh, &Uh, &bh, &Wa, &ba};
}

DetectorParams DetectorParams::zeros_like() const {
  DetectorParams z = *this;
  for (Matrix* t : z.tensors()) t->setZero();
  return z;
}

DetectorParams init_detector(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed,
                             DetectorFlags flags) {
  if (input_dim == 0 || hidden_dim == 0) throw DetectorError("detector dimensions must be positive");
  std::mt19937_64 rng(seed);
  const auto I = static_cast<Eigen::Index>(input_dim);
  const auto H = static_cast<Eigen::Index>(hidden_dim);
  auto uniform = [&rng](Eigen::Index rows, Eigen::Index cols, double limit) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    return m;
  };
  const double kg = 1.0 / std::sqrt(2.0 * static_cast<double>(input_dim));
  const double kh = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  DetectorParams p;
  p.flags = flags;
  p.Wg = uniform(I, 2 * I, kg);
  p.bg = uniform(I, 1, kg);
  p.Wz = uniform(H, I, kh);
  p.Uz = uniform(H, H, kh);
  p.bz = uniform(H, 1, kh);
  p.Wr = uniform(H, I, kh);
  p.Ur = uniform(H, H, kh);
  p.br = uniform(H, 1, kh);
  p.Wh = uniform(H, I, kh);
  p.Uh = uniform(H, H, kh);
  p.bh = uniform(H, 1, kh);
  // m is close to all-ones at initialisation
  p.Wa = uniform(H, 2, 0.01);
  p.ba = Matrix::Ones(H, 1);
  return p;
}

DetectorState initial_state(const DetectorParams& params) {
  DetectorState s;
  const auto H = static_cast<Eigen::Index>(params.hidden_dim());
  s.hidden = Vector::Zero(H);
  s.prev_embedding = Vector::Zero(static_cast<Eigen::Index>(params.input_dim()));
  s.prev_action_probs = Vector::Constant(2, 0.5);
  s.prev_mapping = Vector::Ones(H);
  return s;
}

DetectorState fused_step(const DetectorParams& p, const DetectorState& state, const Vector& embedding,
                         StepCache* cache) {
  const auto I = static_cast<Eigen::Index>(p.input_dim());
  const auto H = static_cast<Eigen::Index>(p.hidden_dim());
  const std::size_t step = state.step + 1;
  if (embedding.size() != I || state.hidden.size() != H || state.prev_embedding.size() != I ||
      state.prev_action_probs.size() != 2) {
    throw DetectorError("shape mismatch at step " + std::to_string(step));
  }
  const Vector delta = embedding - state.prev_embedding;
  Vector gate;
  Vector x;
  if (p.flags.standard_gru) {
    gate = Vector::Zero(I);
    x = embedding;
  } else {
    Vector u(2 * I);
    u << delta, embedding;
    gate = sigmoid(p.Wg * u + p.bg);
    x = gate.cwiseProduct(delta) + (Vector::Ones(I) - gate).cwiseProduct(embedding);
  }
  const Vector& s = state.hidden;
  const Vector z = sigmoid(p.Wz * x + p.Uz * s + p.bz);
  const Vector r = sigmoid(p.Wr * x + p.Ur * s + p.br);
  const Vector c = (p.Wh * x + p.Uh * r.cwiseProduct(s) + p.bh).array().tanh().matrix();
  const Vector blend = (Vector::Ones(H) - z).cwiseProduct(s) + z.cwiseProduct(c);
  const Vector m = p.flags.no_mapping_matrix ? Vector::Ones(H)
                                             : Vector(p.Wa * state.prev_action_probs + p.ba);
  DetectorState next;
  next.hidden = blend.cwiseProduct(m);
  require_finite(next.hidden, "hidden state", step);
  next.prev_embedding = embedding;
  next.prev_action_probs = state.prev_action_probs;
  next.prev_mapping = m;
  next.step = step;
  if (cache) {
    cache->embedding = embedding;
    cache->prev_embedding = state.prev_embedding;
    cache->delta = delta;
    cache->gate = gate;
    cache->x = x;
    cache->prev_hidden = s;
    cache->z = z;
    cache->r = r;
    cache->candidate = c;
    cache->blend = blend;
    cache->mapping = m;
    cache->prev_probs = state.prev_action_probs;
  }
  return next;
}

StepGradients fused_step_backward(const DetectorParams& p, const StepCache& k, const Vector& d_hidden,
                                  DetectorParams& grads) {
  const auto H = static_cast<Eigen::Index>(p.hidden_dim());
  StepGradients out;
  out.prev_probs = Vector::Zero(2);
  const Vector d_blend = d_hidden.cwiseProduct(k.mapping);
  if (!p.flags.no_mapping_matrix) {
    const Vector d_m = d_hidden.cwiseProduct(k.blend);
    grads.Wa += d_m * k.prev_probs.transpose();
    grads.ba += d_m;
    out.prev_probs = p.Wa.transpose() * d_m;
  }
  const Vector& s = k.prev_hidden;
  const Vector d_z = d_blend.cwiseProduct(k.candidate - s);
  const Vector d_c = d_blend.cwiseProduct(k.z);
  out.prev_hidden = d_blend.cwiseProduct(Vector::Ones(H) - k.z);

  const Vector a_c = d_c.cwiseProduct((Vector::Ones(H) - k.candidate.cwiseAbs2()));
  const Vector rs = k.r.cwiseProduct(s);
  grads.Wh += a_c * k.x.transpose();
  grads.Uh += a_c * rs.transpose();
  grads.bh += a_c;
  const Vector d_rs = p.Uh.transpose() * a_c;
  const Vector d_r = d_rs.cwiseProduct(s);
  out.prev_hidden += d_rs.cwiseProduct(k.r);
  Vector d_x = p.Wh.transpose() * a_c;

  const Vector a_z = d_z.cwiseProduct(k.z.cwiseProduct(Vector::Ones(H) - k.z));
  grads.Wz += a_z * k.x.transpose();
  grads.Uz += a_z * s.transpose();
  grads.bz += a_z;
  out.prev_hidden += p.Uz.transpose() * a_z;
  d_x += p.Wz.transpose() * a_z;

  const Vector a_r = d_r.cwiseProduct(k.r.cwiseProduct(Vector::Ones(H) - k.r));
  grads.Wr += a_r * k.x.transpose();
  grads.Ur += a_r * s.transpose();
  grads.br += a_r;
  out.prev_hidden += p.Ur.transpose() * a_r;
  d_x += p.Wr.transpose() * a_r;

  if (!p.flags.standard_gru) {
    const auto I = k.x.size();
    const Vector d_g = d_x.cwiseProduct(k.delta - k.embedding);
    const Vector a_g = d_g.cwiseProduct(k.gate.cwiseProduct(Vector::Ones(I) - k.gate));
    Vector u(2 * I);
    u << k.delta, k.embedding;
    grads.Wg += a_g * u.transpose();
    grads.bg += a_g;
  }
  return out;
}

std::vector<DetectorState> run_sequence(const DetectorParams& params, std::span<const Vector> embeddings,
                                        const std::function<Vector(const DetectorState&)>& policy) {
  if (embeddings.empty()) throw DetectorError("cannot run an empty sequence");
  std::vector<DetectorState> states;
  states.reserve(embeddings.size());
  DetectorState state = initial_state(params);
  for (const Vector& e : embeddings) {
    state = fused_step(params, state, e);
    if (policy) state.prev_action_probs = policy(state);
    states.push_back(state);
  }
  return states;
}

std::vector<DetectorState> run_sequence(const DetectorParams& params, const QuerySequence& seq,
                                        const EmbeddingTable& table,
                                        const std::function<Vector(const DetectorState&)>& policy) {
  const auto nodes = seq.nodes();
  const auto emb = table.sequence(nodes);
  return run_sequence(params, emb, policy);
}

void write_tensors(std::ostream& out, std::span<const Matrix* const> tensors) {
  out << std::setprecision(17);
  for (const Matrix* t : tensors) {
    out << t->rows() << ' ' << t->cols() << '\n';
    for (Eigen::Index i = 0; i < t->rows(); ++i) {
      for (Eigen::Index j = 0; j < t->cols(); ++j) {
        if (j) out << ' ';
        out << (*t)(i, j);
      }
      out << '\n';
    }
  }
}

void read_tensors(std::istream& in, std::span<Matrix* const> tensors) {
  std::size_t index = 0;
  for (Matrix* t : tensors) {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    if (!(in >> rows >> cols) || rows < 0 || cols < 0) {
      throw DetectorError("bad tensor header at tensor " + std::to_string(index));
    }
    t->resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        if (!(in >> (*t)(i, j))) throw DetectorError("truncated tensor " + std::to_string(index));
    ++index;
  }
}

}  // namespace atom
