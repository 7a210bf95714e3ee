#include "atom/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace atom {

std::string to_string(Origin o) {
  switch (o) {
    case Origin::AGE: return "AGE";
    case Origin::GRAIN: return "GRAIN";
    case Origin::IGP: return "IGP";
    case Origin::NORMAL: return "NORMAL";
  }
  return "?";
}

Origin parse_origin(const std::string& s) {
  if (s == "AGE") return Origin::AGE;
  if (s == "GRAIN") return Origin::GRAIN;
  if (s == "IGP") return Origin::IGP;
  if (s == "NORMAL") return Origin::NORMAL;
  throw AttackError("unknown origin '" + s + "'");
}

std::vector<NodeId> QuerySequence::nodes() const {
  std::vector<NodeId> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.node);
  return out;
}

namespace {

QuerySequence respond(std::span<const NodeId> nodes, const VictimOutputs& out, Origin origin,
                      std::size_t user_id) {
  QuerySequence seq;
  seq.user_id = user_id;
  seq.origin = origin;
  seq.records.reserve(nodes.size());
  for (std::size_t t = 0; t < nodes.size(); ++t) {
    QueryRecord r;
    r.user_id = user_id;
    r.step = t + 1;
    r.node = nodes[t];
    r.response_probs = out.probabilities.row(static_cast<Eigen::Index>(nodes[t])).transpose();
    Eigen::Index best = 0;
    r.response_probs.maxCoeff(&best);
    r.response_label = static_cast<int>(best);
    seq.records.push_back(std::move(r));
  }
  return seq;
}

std::vector<NodeId> checked_mask(const AttributedGraph& g, std::span<const NodeId> mask, std::size_t budget) {
  if (mask.empty()) throw AttackError("attacker mask is empty");
  if (budget == 0) throw AttackError("query budget is zero");
  std::vector<NodeId> sorted(mask.begin(), mask.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (NodeId v : sorted) g.check_node(v);
  return sorted;
}

std::vector<double> row_entropies(const Matrix& probs, std::span<const NodeId> nodes) {
  std::vector<double> h;
  h.reserve(nodes.size());
  for (NodeId v : nodes) h.push_back(softmax_entropy(probs.row(static_cast<Eigen::Index>(v)).transpose()));
  return h;
}

}  // namespace

QuerySequence make_sequence(const AttributedGraph& g, const VictimModel& victim,
                            std::span<const NodeId> nodes, Origin origin, std::size_t user_id) {
  for (NodeId v : nodes) g.check_node(v);
  return respond(nodes, forward_all(victim, g), origin, user_id);
}

std::vector<double> percentile_ranks(std::span<const double> scores) {
  const std::size_t n = scores.size();
  std::vector<double> out(n, 1.0);
  if (n <= 1) return out;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::size_t below = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && scores[idx[i]] > scores[idx[i - 1]]) below = i;
    out[idx[i]] = static_cast<double>(below) / static_cast<double>(n - 1);
  }
  return out;
}

double softmax_entropy(const Vector& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) h -= p(i) * std::log(p(i));
  }
  return h;
}

Matrix kmeans(const Matrix& points, std::size_t k, std::size_t iterations, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n == 0 || k == 0) throw AttackError("k-means needs points and k >= 1");
  k = std::min(k, n);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Matrix centroids(static_cast<Eigen::Index>(k), points.cols());
  for (std::size_t j = 0; j < k; ++j) centroids.row(static_cast<Eigen::Index>(j)) = points.row(static_cast<Eigen::Index>(order[j]));
  std::vector<std::size_t> assign(n, 0);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      (centroids.rowwise() - points.row(static_cast<Eigen::Index>(i))).rowwise().squaredNorm().minCoeff(&best);
      assign[i] = static_cast<std::size_t>(best);
    }
    Matrix sums = Matrix::Zero(centroids.rows(), centroids.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(assign[i])) += points.row(static_cast<Eigen::Index>(i));
      ++counts[assign[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] > 0) {
        centroids.row(static_cast<Eigen::Index>(j)) = sums.row(static_cast<Eigen::Index>(j)) / static_cast<double>(counts[j]);
      }
    }
  }
  return centroids;
}

AgeScores age_scores(const AttributedGraph& g, const VictimModel& victim, std::span<const NodeId> mask,
                     std::uint64_t seed) {
  AgeScores s;
  s.candidates = checked_mask(g, mask, 1);
  const auto& cand = s.candidates;
  const std::size_t n = cand.size();
  const VictimOutputs out = forward_all(victim, g);

  s.entropy = row_entropies(out.probabilities, cand);

  Matrix emb(static_cast<Eigen::Index>(n), out.hidden.cols());
  for (std::size_t i = 0; i < n; ++i) emb.row(static_cast<Eigen::Index>(i)) = out.hidden.row(static_cast<Eigen::Index>(cand[i]));
  const Matrix centroids = kmeans(emb, victim.class_count(), 10, seed);
  s.density.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.density[i] = -(centroids.rowwise() - emb.row(static_cast<Eigen::Index>(i))).rowwise().norm().mean();
  }

  s.centrality.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.centrality[i] = static_cast<double>(g.degree(cand[i]));

  const auto pe = percentile_ranks(s.entropy);
  const auto pd = percentile_ranks(s.density);
  const auto pc = percentile_ranks(s.centrality);
  s.combined.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.combined[i] = (pe[i] + pd[i] + pc[i]) / 3.0;

  s.averaged.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = s.combined[i];
    std::size_t count = 0;
    for (NodeId u : g.neighbors(cand[i])) {
      const auto it = std::lower_bound(cand.begin(), cand.end(), u);
      if (it != cand.end() && *it == u) {
        sum += s.combined[static_cast<std::size_t>(it - cand.begin())];
        ++count;
      }
    }
    s.averaged[i] = sum / static_cast<double>(count + 1);
  }
  return s;
}

QuerySequence age_sequence(const AttributedGraph& g, const VictimModel& victim, std::span<const NodeId> mask,
                           std::size_t budget, std::uint64_t seed) {
  checked_mask(g, mask, budget);
  const AgeScores s = age_scores(g, victim, mask, seed);
  std::vector<std::size_t> idx(s.candidates.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s.averaged[a] > s.averaged[b]; });
  idx.resize(std::min(budget, idx.size()));
  std::vector<NodeId> nodes;
  for (std::size_t i : idx) nodes.push_back(s.candidates[i]);
  return respond(nodes, forward_all(victim, g), Origin::AGE, 0);
}

double grain_objective(const AttributedGraph& g, DistanceTable& dist, std::span<const NodeId> selected,
                       std::size_t budget, double gamma, double diversity_norm) {
  std::vector<char> covered(g.node_count(), 0);
  std::size_t count = 0;
  for (NodeId v : selected) {
    if (!covered[v]) covered[v] = 1, ++count;
    for (NodeId u : g.neighbors(v)) {
      if (!covered[u]) covered[u] = 1, ++count;
    }
  }
  double pair_sum = 0.0;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    for (std::size_t j = i + 1; j < selected.size(); ++j) {
      const int d = dist.distance(selected[i], selected[j]);
      pair_sum += d == kUnreachable ? diversity_norm : static_cast<double>(d);
    }
  }
  const double pairs = budget >= 2 ? static_cast<double>(budget * (budget - 1) / 2) : 1.0;
  return static_cast<double>(count) / static_cast<double>(g.node_count()) +
         gamma * (pair_sum / pairs) / diversity_norm;
}

GrainSelection grain_select(const AttributedGraph& g, std::span<const NodeId> mask, std::size_t budget,
                            double gamma) {
  const auto cand = checked_mask(g, mask, budget);
  budget = std::min(budget, cand.size());
  DistanceTable dist(g);
  GrainSelection sel;
  sel.coverage_norm = static_cast<double>(g.node_count());
  int diameter = 1;
  for (NodeId u : cand) {
    for (NodeId v : cand) diameter = std::max(diameter, dist.distance(u, v));
  }
  sel.diversity_norm = static_cast<double>(diameter);

  std::vector<char> taken(cand.size(), 0);
  double current = 0.0;
  for (std::size_t step = 0; step < budget; ++step) {
    double best_value = -1.0;
    std::size_t best = cand.size();
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (taken[i]) continue;
      sel.order.push_back(cand[i]);
      const double value = grain_objective(g, dist, sel.order, budget, gamma, sel.diversity_norm);
      sel.order.pop_back();
      if (value > best_value) best_value = value, best = i;
    }
    taken[best] = 1;
    sel.order.push_back(cand[best]);
    sel.gains.push_back(best_value - current);
    current = best_value;
  }
  return sel;
}

QuerySequence grain_sequence(const AttributedGraph& g, const VictimModel& victim, std::span<const NodeId> mask,
                             std::size_t budget, double gamma) {
  const auto sel = grain_select(g, mask, budget, gamma);
  return respond(sel.order, forward_all(victim, g), Origin::GRAIN, 0);
}

std::vector<double> igp_ranking(const AttributedGraph& g, const Matrix& beliefs, std::span<const NodeId> candidates,
                                double alpha) {
  std::vector<double> centrality;
  for (NodeId v : candidates) centrality.push_back(static_cast<double>(g.degree(v)));
  const auto pc = percentile_ranks(centrality);
  const auto pe = percentile_ranks(row_entropies(beliefs, candidates));
  std::vector<double> s(candidates.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = alpha * pc[i] + (1.0 - alpha) * pe[i];
  return s;
}

namespace {

constexpr double kBeliefBlend = 0.5;

void assume_label(const AttributedGraph& g, Matrix& beliefs, NodeId v, int label) {
  const auto c = beliefs.cols();
  const Eigen::RowVectorXd onehot = Eigen::RowVectorXd::Unit(c, label);
  beliefs.row(static_cast<Eigen::Index>(v)) = onehot;
  for (NodeId u : g.neighbors(v)) {
    auto row = beliefs.row(static_cast<Eigen::Index>(u));
    row = (1.0 - kBeliefBlend) * row + kBeliefBlend * onehot;
  }
}

}  // namespace

QuerySequence igp_sequence(const AttributedGraph& g, const VictimModel& victim, std::span<const NodeId> mask,
                           std::size_t budget, double alpha, std::size_t prefilter_k) {
  const auto cand = checked_mask(g, mask, budget);
  if (prefilter_k == 0) throw AttackError("prefilter_k must be positive");
  budget = std::min(budget, cand.size());
  const VictimOutputs out = forward_all(victim, g);
  Matrix beliefs = out.probabilities;
  std::vector<NodeId> remaining = cand;
  std::vector<NodeId> chosen;
  while (chosen.size() < budget) {
    const auto rank = igp_ranking(g, beliefs, remaining, alpha);
    std::vector<std::size_t> idx(remaining.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rank[a] > rank[b]; });
    idx.resize(std::min(prefilter_k, idx.size()));

    double best_gain = -std::numeric_limits<double>::infinity();
    std::size_t best = idx.front();
    for (std::size_t i : idx) {
      const NodeId v = remaining[i];
      const auto hood = closed_neighborhood(g, v);
      Eigen::Index pseudo = 0;
      beliefs.row(static_cast<Eigen::Index>(v)).maxCoeff(&pseudo);
      Matrix trial = beliefs;
      assume_label(g, trial, v, static_cast<int>(pseudo));
      double gain = 0.0;
      for (NodeId u : hood) {
        const auto r = static_cast<Eigen::Index>(u);
        gain += softmax_entropy(beliefs.row(r).transpose()) - softmax_entropy(trial.row(r).transpose());
      }
      if (gain > best_gain || (gain == best_gain && v < remaining[best])) best_gain = gain, best = i;
    }
    const NodeId v = remaining[best];
    Eigen::Index actual = 0;
    out.probabilities.row(static_cast<Eigen::Index>(v)).maxCoeff(&actual);
    assume_label(g, beliefs, v, static_cast<int>(actual));
    chosen.push_back(v);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return respond(chosen, out, Origin::IGP, 0);
}

QuerySequence normal_sequence(const AttributedGraph& g, const VictimModel& victim, std::size_t min_length,
                              std::size_t max_length, NormalStyle style, std::uint64_t seed) {
  const std::size_t n = g.node_count();
  if (min_length == 0 || min_length > max_length) throw AttackError("invalid normal length range");
  if (max_length > n) throw AttackError("normal length range exceeds node count");
  std::mt19937_64 rng(seed);
  const std::size_t length = std::uniform_int_distribution<std::size_t>(min_length, max_length)(rng);
  std::vector<NodeId> nodes;
  if (style == NormalStyle::random_nodes) {
    std::vector<NodeId> all(n);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < length; ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
      std::swap(all[i], all[j]);
      nodes.push_back(all[i]);
    }
  } else {
    std::vector<NodeId> starts;
    for (NodeId v = 0; v < n; ++v)
      if (g.degree(v) > 0) starts.push_back(v);
    if (starts.empty()) throw AttackError("random walk needs at least one edge");
    NodeId cur = starts[std::uniform_int_distribution<std::size_t>(0, starts.size() - 1)(rng)];
    nodes.push_back(cur);
    while (nodes.size() < length) {
      const auto nb = g.neighbors(cur);
      cur = nb[std::uniform_int_distribution<std::size_t>(0, nb.size() - 1)(rng)];
      nodes.push_back(cur);
    }
  }
  QuerySequence seq = respond(nodes, forward_all(victim, g), Origin::NORMAL, 0);
  seq.truth_label = 0;
  return seq;
}

double agreement(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw AttackError("agreement over vectors of different length");
  if (a.empty()) return 0.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

namespace {

std::vector<int> argmax_rows(const Matrix& p) {
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best = 0;
    p.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

double fidelity(const VictimModel& victim, const VictimModel& surrogate, const AttributedGraph& g) {
  return agreement(argmax_rows(forward_all(victim, g).probabilities),
                   argmax_rows(forward_all(surrogate, g).probabilities));
}

SurrogateResult train_surrogate(const AttributedGraph& g, const VictimModel& victim, const QuerySequence& seq,
                                const VictimConfig& config) {
  if (seq.records.empty()) throw AttackError("cannot train a surrogate on an empty sequence");
  std::set<NodeId> members;
  for (const auto& r : seq.records) {
    for (NodeId u : closed_neighborhood(g, r.node)) members.insert(u);
  }
  const std::vector<NodeId> local(members.begin(), members.end());
  const AttributedGraph sub = induced_subgraph(g, local);
  const VictimOutputs out = forward_all(victim, g);

  std::vector<int> targets(local.size(), 0);
  std::vector<NodeId> mask;
  for (const auto& r : seq.records) {
    const auto pos = static_cast<NodeId>(std::lower_bound(local.begin(), local.end(), r.node) - local.begin());
    Eigen::Index label = 0;
    out.probabilities.row(static_cast<Eigen::Index>(r.node)).maxCoeff(&label);
    targets[pos] = static_cast<int>(label);
    if (std::find(mask.begin(), mask.end(), pos) == mask.end()) mask.push_back(pos);
  }
  SurrogateResult result;
  result.queries_used = seq.records.size();
  try {
    result.model = train_gcn(sub, mask, targets, victim.class_count(), config);
  } catch (const TrainingError&) {
    result.diverged = true;
    result.model = init_victim(sub, config.hidden, victim.class_count(), config.seed);
  }
  result.model.normalized_propagation = normalized_adjacency(g);
  result.model.train_mask.clear();
  for (const auto& r : seq.records) result.model.train_mask.push_back(r.node);
  result.fidelity = fidelity(victim, result.model, g);
  return result;
}

std::vector<QuerySequence> label_and_pool(std::vector<QuerySequence> attacks, std::vector<QuerySequence> normals,
                                          const PoolThresholds& t, std::uint64_t seed) {
  if (!(0.0 <= t.f_lo && t.f_lo < t.f_hi && t.f_hi <= 1.0)) {
    throw AttackError("fidelity thresholds must satisfy 0 <= f_lo < f_hi <= 1");
  }
  std::vector<QuerySequence> pool;
  for (auto& a : attacks) {
    if (!a.fidelity) throw AttackError("attack sequence without a fidelity");
    const double f = *a.fidelity;
    const bool long_enough = a.length() > t.short_len;
    if (f > t.f_hi && long_enough) {
      a.truth_label = 1;
    } else if (f < t.f_lo || !long_enough) {
      a.truth_label = 0;
    } else {
      continue;
    }
    pool.push_back(std::move(a));
  }
  for (auto& s : normals) {
    s.truth_label = 0;
    pool.push_back(std::move(s));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    pool[i].user_id = i;
    for (auto& r : pool[i].records) r.user_id = i;
  }
  return pool;
}

void save_pool(const std::vector<QuerySequence>& pool, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw AttackError("cannot write " + path.string());
  out << std::setprecision(6);
  for (const auto& s : pool) {
    out << s.user_id << ',' << s.truth_label << ',' << to_string(s.origin) << ',';
    if (s.fidelity) out << *s.fidelity;
    out << ',';
    for (std::size_t t = 0; t < s.records.size(); ++t) {
      if (t) out << ';';
      out << s.records[t].node;
    }
    out << '\n';
  }
}

std::vector<QuerySequence> load_pool(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw AttackError("cannot open " + path.string());
  std::vector<QuerySequence> pool;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw AttackError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    try {
      QuerySequence s;
      s.user_id = std::stoul(cells[0]);
      s.truth_label = std::stoi(cells[1]);
      s.origin = parse_origin(cells[2]);
      if (!cells[3].empty()) s.fidelity = std::stod(cells[3]);
      std::stringstream ns(cells[4]);
      std::string tok;
      std::size_t step = 0;
      while (std::getline(ns, tok, ';')) {
        QueryRecord r;
        r.user_id = s.user_id;
        r.step = ++step;
        r.node = std::stoul(tok);
        s.records.push_back(std::move(r));
      }
      if (s.records.empty()) throw AttackError("empty node list");
      pool.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw AttackError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return pool;
}

}  // namespace atom
