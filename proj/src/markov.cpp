#include "atom/markov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <string>

namespace atom {

namespace {

constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Row-normalised exp(-lambda * energy), shifted by the row minimum.
Matrix boltzmann_rows(const Matrix& energy, double lambda) {
  Matrix p(energy.rows(), energy.cols());
  for (Eigen::Index r = 0; r < energy.rows(); ++r) {
    const double lo = energy.row(r).minCoeff();
    double total = 0.0;
    for (Eigen::Index c = 0; c < energy.cols(); ++c) {
      p(r, c) = std::exp(-lambda * (energy(r, c) - lo));
      total += p(r, c);
    }
    p.row(r) /= total;
  }
  return p;
}

Matrix query_distances(const QueryList& l, std::size_t k) {
  // prefix sums of edge weights give d_n(s, q) = |c[q] - c[s]|
  std::vector<double> cum(k, 0.0);
  for (std::size_t p = 1; p < k; ++p) cum[p] = cum[p - 1] + l.edge_weights[p - 1];
  Matrix d(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t s = 0; s < k; ++s)
    for (std::size_t q = 0; q < k; ++q)
      d(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(q)) = std::abs(cum[q] - cum[s]);
  return d;
}

}  // namespace

QueryListBuild build_query_lists(std::span<const QuerySequence> sequences, const AttributedGraph& g) {
  QueryListBuild out;
  DistanceTable dist(g);
  for (const auto& seq : sequences) {
    if (seq.length() == 0) throw MarkovError("sequence for user " + std::to_string(seq.user_id) + " is empty");
    QueryList l;
    l.user_id = seq.user_id;
    l.nodes = seq.nodes();
    bool ok = true;
    for (std::size_t p = 1; p < l.nodes.size() && ok; ++p) {
      const int d = dist.distance(l.nodes[p - 1], l.nodes[p]);
      if (d == kUnreachable) {
        ok = false;
      } else {
        l.edge_weights.push_back(d);
      }
    }
    if (ok) {
      out.lists.push_back(std::move(l));
    } else {
      out.skipped.push_back(seq.user_id);
    }
  }
  return out;
}

std::size_t pad_lists(std::vector<QueryList>& lists) {
  if (lists.empty()) throw MarkovError("no query lists to pad");
  std::size_t k = 0;
  for (const auto& l : lists) {
    if (l.nodes.empty()) throw MarkovError("empty query list");
    k = std::max(k, l.length());
  }
  for (auto& l : lists) {
    const NodeId last = l.nodes.back();
    while (l.nodes.size() < k) {
      l.nodes.push_back(last);
      l.edge_weights.push_back(0.0);
    }
    l.padded_length = k;
  }
  return k;
}

double list_distance(const QueryList& a, const QueryList& b, const AttributedGraph& g) {
  if (a.length() != b.length()) throw MarkovError("lists must be padded to the same length");
  double total = 0.0;
  for (std::size_t s = 0; s < a.length(); ++s) {
    const auto d = shortest_path_len(g, a.nodes[s], b.nodes[s]);
    if (!d) return kInfinity;
    total += static_cast<double>(*d);
  }
  return total;
}

std::size_t pigeonhole_bound(std::span<const QueryList> lists, std::size_t node_count) {
  if (lists.empty()) throw MarkovError("no query lists");
  std::size_t shortest = std::numeric_limits<std::size_t>::max();
  for (const auto& l : lists) {
    const std::set<NodeId> distinct(l.nodes.begin(), l.nodes.end());
    shortest = std::min(shortest, distinct.size());
  }
  if (shortest == 0) throw MarkovError("empty query list");
  return (node_count + shortest - 1) / shortest;
}

std::vector<std::size_t> select_disjoint_lists(std::span<const QueryList> lists, std::size_t node_count) {
  const std::size_t cap = pigeonhole_bound(lists, node_count);
  std::vector<std::size_t> order(lists.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lists[a].length() < lists[b].length(); });
  std::vector<bool> used(node_count, false);
  std::vector<std::size_t> chosen;
  for (auto idx : order) {
    if (chosen.size() == cap) break;
    const auto& nodes = lists[idx].nodes;
    if (std::any_of(nodes.begin(), nodes.end(), [&](NodeId v) { return used.at(v); })) continue;
    for (auto v : nodes) used[v] = true;
    chosen.push_back(idx);
  }
  return chosen;
}

CompositeChain build_chain(std::vector<QueryList> lists, const AttributedGraph& g, double lambda_s,
                           double lambda_n, std::size_t start) {
  if (lists.empty()) throw MarkovError("chain needs at least one list");
  if (start >= lists.size()) throw MarkovError("start list out of range");
  if (!(lambda_s >= 0.0) || !(lambda_n >= 0.0)) throw MarkovError("sensitivities must be non-negative");
  const std::size_t k = pad_lists(lists);
  const std::size_t J = lists.size();

  std::vector<double> to_start(J);
  for (std::size_t i = 0; i < J; ++i) to_start[i] = list_distance(lists[i], lists[start], g);
  std::vector<std::size_t> order;
  order.push_back(start);
  for (std::size_t i = 0; i < J; ++i)
    if (i != start) order.push_back(i);
  std::stable_sort(order.begin() + 1, order.end(), [&](std::size_t a, std::size_t b) { return to_start[a] < to_start[b]; });

  CompositeChain c;
  c.k = k;
  c.lambda_s = lambda_s;
  c.lambda_n = lambda_n;
  for (auto i : order) c.lists.push_back(std::move(lists[i]));

  c.list_distances = Matrix::Zero(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(J));
  for (std::size_t i = 0; i < J; ++i) {
    for (std::size_t j = i + 1; j < J; ++j) {
      const double d = list_distance(c.lists[i], c.lists[j], g);
      if (!std::isfinite(d)) throw MarkovError("lists lie in different components");
      c.list_distances(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d;
      c.list_distances(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = d;
    }
  }
  c.list_transitions = boltzmann_rows(c.list_distances, lambda_s);
  c.query_transitions.reserve(J);
  for (const auto& l : c.lists) c.query_transitions.push_back(boltzmann_rows(query_distances(l, k), lambda_n));
  return c;
}

double transition(const CompositeChain& c, std::size_t i, std::size_t q, std::size_t j, std::size_t s) {
  return c.list_transitions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) *
         c.query_transitions[j](static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(s));
}

Matrix composite_kernel(const CompositeChain& c) {
  const auto N = static_cast<Eigen::Index>(c.state_count());
  Matrix P(N, N);
  for (std::size_t i = 0; i < c.list_count(); ++i)
    for (std::size_t q = 0; q < c.k; ++q)
      for (std::size_t j = 0; j < c.list_count(); ++j)
        for (std::size_t s = 0; s < c.k; ++s)
          P(static_cast<Eigen::Index>(c.state(i, q)), static_cast<Eigen::Index>(c.state(j, s))) =
              transition(c, i, q, j, s);
  return P;
}

Matrix initial_distribution(const CompositeChain& c) {
  Matrix pi = Matrix::Zero(static_cast<Eigen::Index>(c.list_count()), static_cast<Eigen::Index>(c.k));
  pi(0, 0) = 1.0;
  return pi;
}

Matrix k_step_distribution(const CompositeChain& c, std::size_t K) {
  Matrix pi = initial_distribution(c);
  for (std::size_t step = 0; step < K; ++step) {
    // mass arriving in list j, still indexed by the source position
    const Matrix arriving = c.list_transitions.transpose() * pi;
    Matrix next(pi.rows(), pi.cols());
    for (std::size_t j = 0; j < c.list_count(); ++j) {
      const auto row = static_cast<Eigen::Index>(j);
      next.row(row) = arriving.row(row) * c.query_transitions[j];
    }
    pi = std::move(next);
  }
  return pi;
}

std::pair<std::size_t, std::size_t> nearest_state(const CompositeChain& c, const AttributedGraph& g, NodeId node) {
  const auto dist = bfs_distances(g, node);
  std::pair<std::size_t, std::size_t> best{0, 0};
  int best_d = std::numeric_limits<int>::max();
  for (std::size_t i = 0; i < c.list_count(); ++i) {
    for (std::size_t q = 0; q < c.k; ++q) {
      const int d = dist[c.lists[i].nodes[q]];
      if (d != kUnreachable && d < best_d) {
        best_d = d;
        best = {i, q};
      }
    }
  }
  if (best_d == std::numeric_limits<int>::max()) {
    throw MarkovError("node " + std::to_string(node) + " cannot reach any list");
  }
  return best;
}

double log_prob(const CompositeChain& c, const AttributedGraph& g, std::span<const NodeId> nodes) {
  std::pair<std::size_t, std::size_t> from{0, 0};
  double total = 0.0;
  for (auto v : nodes) {
    const auto to = nearest_state(c, g, v);
    total += std::log(transition(c, from.first, from.second, to.first, to.second));
    from = to;
  }
  return total;
}

}  // namespace atom
