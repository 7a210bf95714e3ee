#include "atom/victim.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "atom/adam.hpp"

namespace atom {

SparseMatrix normalized_adjacency(const AttributedGraph& g) {
  const std::size_t n = g.node_count();
  std::vector<double> inv_sqrt(n);
  for (NodeId v = 0; v < n; ++v) inv_sqrt[v] = 1.0 / std::sqrt(static_cast<double>(g.degree(v) + 1));
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(n + 2 * g.edge_count());
  for (NodeId v = 0; v < n; ++v) {
    const auto r = static_cast<int>(v);
    triplets.emplace_back(r, r, inv_sqrt[v] * inv_sqrt[v]);
    for (NodeId u : g.neighbors(v)) {
      triplets.emplace_back(r, static_cast<int>(u), inv_sqrt[v] * inv_sqrt[u]);
    }
  }
  SparseMatrix a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  a.setFromTriplets(triplets.begin(), triplets.end());
  return a;
}

namespace {

void softmax_rows(Matrix& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - mx).exp().matrix();
    z.row(i) /= z.row(i).sum();
  }
}

void check_compatible(const VictimModel& m, const AttributedGraph& g) {
  if (static_cast<std::size_t>(m.layer1_weights.rows()) != g.feature_dim()) {
    throw std::invalid_argument("model input width does not match graph features");
  }
  if (m.normalized_propagation.rows() != static_cast<Eigen::Index>(g.node_count())) {
    throw std::invalid_argument("model propagation matrix belongs to a different graph");
  }
}

}  // namespace

VictimOutputs forward_all(const VictimModel& m, const AttributedGraph& g) {
  check_compatible(m, g);
  VictimOutputs out;
  const Matrix xw = g.features() * m.layer1_weights;
  out.hidden = (m.normalized_propagation * xw).cwiseMax(0.0);
  const Matrix hw = out.hidden * m.layer2_weights;
  out.logits = m.normalized_propagation * hw;
  out.probabilities = out.logits;
  softmax_rows(out.probabilities);
  return out;
}

LossAndGradient victim_loss(const VictimModel& m, const AttributedGraph& g, std::span<const int> targets,
                            double weight_decay) {
  check_compatible(m, g);
  const auto& a = m.normalized_propagation;
  const Matrix xw = g.features() * m.layer1_weights;
  const Matrix pre1 = a * xw;
  const Matrix hidden = pre1.cwiseMax(0.0);
  const Matrix ah = a * hidden;
  Matrix probs = ah * m.layer2_weights;
  softmax_rows(probs);

  const auto count = static_cast<double>(m.train_mask.size());
  LossAndGradient out;
  Matrix dz = Matrix::Zero(probs.rows(), probs.cols());
  for (NodeId v : m.train_mask) {
    const auto r = static_cast<Eigen::Index>(v);
    const auto y = static_cast<Eigen::Index>(targets[v]);
    out.loss -= std::log(std::max(probs(r, y), 1e-300)) / count;
    dz.row(r) = probs.row(r) / count;
    dz(r, y) -= 1.0 / count;
  }
  out.loss += 0.5 * weight_decay *
              (m.layer1_weights.squaredNorm() + m.layer2_weights.squaredNorm());
  out.grad_layer2 = ah.transpose() * dz + weight_decay * m.layer2_weights;
  Matrix dhidden = a * (dz * m.layer2_weights.transpose());
  dhidden.array() *= (pre1.array() > 0.0).cast<double>();
  const Matrix a_dpre = a * dhidden;
  out.grad_layer1 = g.features().transpose() * a_dpre + weight_decay * m.layer1_weights;
  return out;
}

VictimModel init_victim(const AttributedGraph& g, std::size_t hidden, std::size_t classes,
                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix w(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
    }
    return w;
  };
  VictimModel m;
  m.layer1_weights = glorot(g.feature_dim(), hidden);
  m.layer2_weights = glorot(hidden, classes);
  m.normalized_propagation = normalized_adjacency(g);
  return m;
}

namespace {

Eigen::VectorXd flatten(const VictimModel& m) {
  Eigen::VectorXd flat(m.layer1_weights.size() + m.layer2_weights.size());
  flat << m.layer1_weights.reshaped(), m.layer2_weights.reshaped();
  return flat;
}

void unflatten(const Eigen::VectorXd& flat, VictimModel& m) {
  const auto n1 = m.layer1_weights.size();
  m.layer1_weights.reshaped() = flat.head(n1);
  m.layer2_weights.reshaped() = flat.tail(m.layer2_weights.size());
}

}  // namespace

VictimModel train_gcn(const AttributedGraph& g, std::span<const NodeId> train_mask,
                      std::span<const int> targets, std::size_t classes, const VictimConfig& config) {
  if (train_mask.empty()) throw TrainingError("train mask is empty");
  if (targets.size() != g.node_count()) throw TrainingError("target vector length != node count");
  for (NodeId v : train_mask) {
    g.check_node(v);
    if (targets[v] < 0 || static_cast<std::size_t>(targets[v]) >= classes) {
      throw TrainingError("target of node " + std::to_string(v) + " outside class range");
    }
  }
  VictimModel m = init_victim(g, config.hidden, classes, config.seed);
  m.train_mask.assign(train_mask.begin(), train_mask.end());

  // weight decay is applied inside Adam
  Adam adam(AdamSettings{.learning_rate = config.learning_rate, .weight_decay = config.weight_decay});
  Eigen::VectorXd params = flatten(m);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const LossAndGradient lg = victim_loss(m, g, targets, 0.0);
    if (!std::isfinite(lg.loss)) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
    }
    Eigen::VectorXd grad(params.size());
    grad << lg.grad_layer1.reshaped(), lg.grad_layer2.reshaped();
    adam.step(params, grad);
    unflatten(params, m);
  }
  return m;
}

VictimModel train_victim(const AttributedGraph& g, std::span<const NodeId> train_mask,
                         const VictimConfig& config) {
  if (!g.has_labels()) throw TrainingError("victim training needs node labels");
  return train_gcn(g, train_mask, g.labels(), static_cast<std::size_t>(g.class_count()), config);
}

Vector hidden_embedding(const VictimModel& m, const AttributedGraph& g, NodeId v) {
  check_compatible(m, g);
  g.check_node(v);
  Eigen::RowVectorXd agg = Eigen::RowVectorXd::Zero(g.features().cols());
  for (SparseMatrix::InnerIterator it(m.normalized_propagation, static_cast<Eigen::Index>(v)); it; ++it) {
    agg += it.value() * g.features().row(it.col());
  }
  return (agg * m.layer1_weights).cwiseMax(0.0).transpose();
}

Prediction predict(const VictimModel& m, const AttributedGraph& g, NodeId v) {
  check_compatible(m, g);
  g.check_node(v);
  Eigen::RowVectorXd agg = Eigen::RowVectorXd::Zero(m.layer1_weights.cols());
  for (SparseMatrix::InnerIterator it(m.normalized_propagation, static_cast<Eigen::Index>(v)); it; ++it) {
    agg += it.value() * hidden_embedding(m, g, static_cast<NodeId>(it.col())).transpose();
  }
  Eigen::RowVectorXd z = agg * m.layer2_weights;
  z.array() -= z.maxCoeff();
  z = z.array().exp().matrix();
  z /= z.sum();
  Prediction p;
  Eigen::Index best = 0;
  z.maxCoeff(&best);
  p.label = static_cast<int>(best);
  p.probabilities = z.transpose();
  return p;
}

double accuracy(const VictimModel& m, const AttributedGraph& g, std::span<const NodeId> nodes) {
  if (nodes.empty()) return 0.0;
  const VictimOutputs out = forward_all(m, g);
  std::size_t hits = 0;
  for (NodeId v : nodes) {
    Eigen::Index best = 0;
    out.probabilities.row(static_cast<Eigen::Index>(v)).maxCoeff(&best);
    if (static_cast<int>(best) == g.labels()[v]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(nodes.size());
}

namespace {

constexpr const char* kVictimMagic = "ATOMv1";

void write_matrix(std::ostream& out, const Matrix& w) {
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      if (j) out << ' ';
      out << w(i, j);
    }
    out << '\n';
  }
}

Matrix read_matrix(std::istream& in, std::size_t rows, std::size_t cols, const std::string& what) {
  Matrix w(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      if (!(in >> w(i, j))) throw std::runtime_error("truncated checkpoint while reading " + what);
    }
  }
  return w;
}

}  // namespace

void save_victim(const VictimModel& m, const std::filesystem::path& path, const std::string& stamp) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kVictimMagic << '\n';
  if (!stamp.empty()) out << "stamp " << stamp << '\n';
  out << m.layer1_weights.rows() << ' ' << m.layer1_weights.cols() << ' ' << m.layer2_weights.cols()
      << '\n';
  out << std::setprecision(17);
  write_matrix(out, m.layer1_weights);
  write_matrix(out, m.layer2_weights);
  out << m.train_mask.size();
  for (NodeId v : m.train_mask) out << ' ' << v;
  out << '\n';
}

VictimModel load_victim(const std::filesystem::path& path, const AttributedGraph& g) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kVictimMagic) {
    throw std::runtime_error(path.string() + ": missing ATOMv1 magic");
  }
  std::string header;
  std::getline(in, header);
  if (header.rfind("stamp ", 0) == 0) std::getline(in, header);
  std::istringstream hs(header);
  std::size_t d = 0, hidden = 0, c = 0;
  if (!(hs >> d >> hidden >> c)) throw std::runtime_error(path.string() + ": bad dims header");
  VictimModel m;
  m.layer1_weights = read_matrix(in, d, hidden, "layer1");
  m.layer2_weights = read_matrix(in, hidden, c, "layer2");
  std::size_t count = 0;
  if (in >> count) {
    m.train_mask.resize(count);
    for (auto& v : m.train_mask) in >> v;
  }
  if (d != g.feature_dim()) throw std::runtime_error(path.string() + ": feature width mismatch");
  m.normalized_propagation = normalized_adjacency(g);
  return m;
}

}  // namespace atom
