#include "atom/theory.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace atom {

namespace {

constexpr double kTolerance = 1e-9;

bool leq(double a, double b) { return a <= b + kTolerance * std::max(1.0, std::abs(b)); }

// a is supposed to stay at or below b
double ratio(double a, double b) {
  if (b > 0.0) return a / b;
  return a <= b ? 1.0 : std::numeric_limits<double>::infinity();
}

std::vector<NodeId> normalize_cover(std::vector<NodeId> cover) {
  std::sort(cover.begin(), cover.end());
  cover.erase(std::unique(cover.begin(), cover.end()), cover.end());
  return cover;
}

int cover_delta(const AttributedGraph& g, std::span<const NodeId> cover, DegreeMode mode) {
  int best = std::numeric_limits<int>::max();
  for (auto u : cover) {
    int d = 0;
    if (mode == DegreeMode::graph) {
      d = static_cast<int>(g.degree(u));
    } else {
      for (auto v : g.neighbors(u)) {
        if (std::binary_search(cover.begin(), cover.end(), v)) ++d;
      }
    }
    best = std::min(best, d);
  }
  return best;
}

void apply_weights(CoverageInstance& inst, std::vector<double> weights) {
  if (weights.size() != inst.n) throw TheoryError("weight vector length does not match node count");
  inst.total_weight = 0.0;
  inst.uncovered_weight = 0.0;
  for (std::size_t v = 0; v < inst.n; ++v) {
    if (!(weights[v] > 0.0) || !std::isfinite(weights[v])) throw TheoryError("node weights must be positive");
    inst.total_weight += weights[v];
    if (!inst.covered[v]) inst.uncovered_weight += weights[v];
  }
  inst.weights = std::move(weights);
}

bool strict_subset(const std::vector<NodeId>& a, const std::vector<NodeId>& b) {
  return a.size() < b.size() && std::includes(b.begin(), b.end(), a.begin(), a.end());
}

AttributedGraph unit_graph(std::size_t n, const std::vector<Edge>& edges) {
  return AttributedGraph(n, edges, Matrix::Ones(static_cast<Eigen::Index>(n), 1));
}

// Canonical codes for small graphs: adjacency over position pairs, maximised
// over relabellings that keep vertices sorted by degree.
using Rows = std::vector<std::uint32_t>;

std::uint32_t encode(const Rows& adj, const std::vector<std::size_t>& perm) {
  std::uint32_t code = 0;
  int bit = 0;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = i + 1; j < perm.size(); ++j, ++bit) {
      if (adj[perm[i]] >> perm[j] & 1U) code |= 1U << bit;
    }
  }
  return code;
}

std::uint32_t canonical_code(const Rows& adj) {
  const std::size_t n = adj.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> deg(n);
  for (std::size_t v = 0; v < n; ++v) deg[v] = std::popcount(adj[v]);
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return deg[a] != deg[b] ? deg[a] > deg[b] : a < b;
  });
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && deg[perm[j]] == deg[perm[i]]) ++j;
    blocks.emplace_back(i, j);
    i = j;
  }
  std::uint32_t best = 0;
  while (true) {
    best = std::max(best, encode(adj, perm));
    bool advanced = false;
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
      if (std::next_permutation(perm.begin() + static_cast<std::ptrdiff_t>(it->first),
                                perm.begin() + static_cast<std::ptrdiff_t>(it->second))) {
        advanced = true;
        break;
      }
    }
    if (!advanced) break;
  }
  return best;
}

Rows decode(std::uint32_t code, std::size_t n) {
  Rows adj(n, 0);
  int bit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++bit) {
      if (code >> bit & 1U) {
        adj[i] |= 1U << j;
        adj[j] |= 1U << i;
      }
    }
  }
  return adj;
}

void dump_counterexample(const std::filesystem::path& path, const AttributedGraph& g,
                         const CoverageInstance& inst, const Theorem1Bound& b) {
  std::ofstream out(path);
  out << std::setprecision(17);
  out << "nodes " << g.node_count() << "\n";
  for (const auto& [u, v] : g.edges()) out << "edge " << u << ' ' << v << "\n";
  out << "weights";
  for (double w : inst.weights) out << ' ' << w;
  out << "\ncover";
  for (auto u : inst.cover) out << ' ' << u;
  out << "\nbeta " << inst.beta << "\ndelta " << inst.delta << "\nbound " << b.bound << "\nsecond_branch "
      << b.second_branch << "\n";
  if (b.first_branch) out << "first_branch " << *b.first_branch << "\n";
}

}  // namespace

std::vector<bool> covered_by_lists(const AttributedGraph& g, std::span<const NodeId> cover) {
  std::vector<bool> covered(g.node_count(), false);
  for (auto u : cover) {
    g.check_node(u);
    for (auto v : g.neighbors(u)) covered[v] = true;
  }
  return covered;
}

std::vector<bool> covered_by_rows(const AttributedGraph& g, std::span<const NodeId> cover) {
  const std::size_t n = g.node_count();
  std::vector<bool> covered(n, false);
  for (auto u : cover) {
    g.check_node(u);
    for (std::size_t v = 0; v < n; ++v) covered[v] = covered[v] || g.has_edge(u, v);
  }
  return covered;
}

double CoverageInstance::avg_uncovered_weight() const {
  return uncovered_count == 0 ? 0.0 : uncovered_weight / static_cast<double>(uncovered_count);
}

CoverageInstance make_instance(const AttributedGraph& g, std::vector<double> weights, std::vector<NodeId> cover,
                               DegreeMode mode) {
  CoverageInstance inst;
  inst.n = g.node_count();
  inst.cover = normalize_cover(std::move(cover));
  if (inst.cover.empty()) throw TheoryError("cover set is empty");
  inst.covered = covered_by_lists(g, inst.cover);
  inst.covered_count = static_cast<std::size_t>(std::count(inst.covered.begin(), inst.covered.end(), true));
  inst.uncovered_count = inst.n - inst.covered_count;
  inst.beta = static_cast<double>(inst.covered_count) / static_cast<double>(inst.n);
  inst.delta = cover_delta(g, inst.cover, mode);
  apply_weights(inst, std::move(weights));
  return inst;
}

Theorem1Bound theorem1_bound(const CoverageInstance& inst) {
  if (inst.delta <= 0) throw TheoryError("bound undefined: a cover node has degree 0");
  const double n = static_cast<double>(inst.n);
  const double d = static_cast<double>(inst.cover_size());
  const double delta = inst.delta;
  Theorem1Bound b;
  b.second_branch = d * delta / n;
  b.bound = b.second_branch;
  if (inst.uncovered_count > 0) {
    const double w_ratio = inst.total_weight / inst.avg_uncovered_weight();
    const double denom = n / delta - w_ratio;
    if (denom > 0.0) {
      b.first_branch = (d - w_ratio) / denom;
      b.bound = std::min(b.bound, *b.first_branch);
    }
  }
  return b;
}

CoverageTrace make_trace(const AttributedGraph& g, const std::vector<double>& weights, std::vector<NodeId> prev,
                         std::vector<NodeId> cur, std::vector<NodeId> next, DegreeMode mode) {
  CoverageTrace t;
  t.prev = make_instance(g, weights, std::move(prev), mode);
  t.cur = make_instance(g, weights, std::move(cur), mode);
  t.next = make_instance(g, weights, std::move(next), mode);
  if (!strict_subset(t.prev.cover, t.cur.cover) || !strict_subset(t.cur.cover, t.next.cover)) {
    throw TheoryError("trace cover sets are not strictly nested");
  }
  t.w_d = t.drop_first();
  return t;
}

BoundCheck prop2_first_order(const CoverageInstance& prev, const CoverageInstance& cur) {
  if (!(cur.delta > prev.delta)) throw PreconditionError("delta does not increase");
  if (cur.cover_size() <= prev.cover_size()) throw PreconditionError("cover set does not grow");
  if (cur.cover_size() * static_cast<std::size_t>(cur.delta) <
      prev.cover_size() * static_cast<std::size_t>(prev.delta)) {
    throw PreconditionError("|D|*delta decreases");
  }
  BoundCheck c;
  const double dd = static_cast<double>(cur.cover_size() - prev.cover_size());
  c.lhs = (prev.uncovered_weight - cur.uncovered_weight) / dd;
  const double shrink = 1.0 - static_cast<double>(prev.delta) / cur.delta;
  c.rhs = (cur.beta - prev.beta) * cur.total_weight / (static_cast<double>(prev.cover_size()) * shrink);
  c.holds = leq(c.lhs, c.rhs);
  return c;
}

BoundCheck prop3_second_order(const CoverageTrace& t) {
  if (!(t.next.delta > t.cur.delta && t.cur.delta > t.prev.delta)) {
    throw PreconditionError("delta is not strictly increasing");
  }
  if (t.drop_first() < t.w_d) throw PreconditionError("first weight drop is below w_d");
  const double dbeta_t = t.cur.beta - t.prev.beta;
  const double dbeta_next = t.next.beta - t.cur.beta;
  if (dbeta_t == 0.0) throw PreconditionError("coverage does not change at t");
  const double ddelta_t = t.cur.delta - t.prev.delta;
  const double ddelta_next = t.next.delta - t.cur.delta;
  const double n = static_cast<double>(t.cur.n);
  const double W = t.cur.total_weight;

  const double r1 = t.drop_first() / static_cast<double>(t.cur.cover_size() - t.prev.cover_size());
  const double r2 = t.drop_second() / static_cast<double>(t.next.cover_size() - t.cur.cover_size());
  BoundCheck c;
  c.lhs = std::abs(r1 - r2);
  c.rhs = std::abs(t.w_d / n * (ddelta_t / dbeta_t) -
                   W * t.next.delta / static_cast<double>(t.cur.cover_size()) * (dbeta_next / ddelta_next));
  c.holds = leq(c.rhs, c.lhs);
  return c;
}

Theorem4Check theorem4_threshold(const CoverageTrace& t) {
  Theorem4Check c;
  c.second = prop3_second_order(t);
  c.first = prop2_first_order(t.prev, t.cur);
  const double dbeta_t = t.cur.beta - t.prev.beta;
  const double dbeta_next = t.next.beta - t.cur.beta;
  const double ddelta_t = t.cur.delta - t.prev.delta;
  const double ddelta_next = t.next.delta - t.cur.delta;
  const double n = static_cast<double>(t.cur.n);
  c.threshold = n * t.next.delta * dbeta_t / (static_cast<double>(t.prev.cover_size()) * ddelta_t) *
                (dbeta_t / ddelta_t + dbeta_next / ddelta_next) * t.cur.total_weight;
  c.triggered = t.w_d >= c.threshold;
  if (c.triggered) {
    c.implication_holds = leq(c.first.rhs, c.second.rhs);
    c.statement_holds = leq(c.first.lhs, c.second.lhs);
  }
  return c;
}

std::optional<CoverageTrace> random_trace(const AttributedGraph& g, const std::vector<double>& weights,
                                          DegreeMode mode, std::mt19937_64& rng, std::size_t attempts) {
  const std::size_t n = g.node_count();
  if (n < 3) return std::nullopt;
  std::vector<NodeId> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::size_t> first_size(1, n - 2);
  std::vector<std::vector<NodeId>> sets;
  sets.push_back(normalize_cover({order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first_size(rng))}));

  for (int step = 0; step < 2; ++step) {
    const auto& base = sets.back();
    const int base_delta = cover_delta(g, base, mode);
    std::vector<NodeId> rest;
    for (NodeId v = 0; v < n; ++v) {
      if (!std::binary_search(base.begin(), base.end(), v)) rest.push_back(v);
    }
    // leave room for the final step
    const std::size_t max_add = step == 0 ? rest.size() - 1 : rest.size();
    if (max_add == 0) return std::nullopt;
    std::uniform_int_distribution<std::size_t> add_count(1, max_add);
    bool grown = false;
    for (std::size_t a = 0; a < attempts && !grown; ++a) {
      std::shuffle(rest.begin(), rest.end(), rng);
      std::vector<NodeId> next = base;
      next.insert(next.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(add_count(rng)));
      next = normalize_cover(std::move(next));
      if (cover_delta(g, next, mode) > base_delta) {
        sets.push_back(std::move(next));
        grown = true;
      }
    }
    if (!grown) return std::nullopt;
  }
  return make_trace(g, weights, sets[0], sets[1], sets[2], mode);
}

std::vector<AttributedGraph> connected_graphs(std::size_t n) {
  if (n == 0 || n > 8) throw TheoryError("connected_graphs supports 1 to 8 nodes");
  std::set<std::uint32_t> level{0};  // the single vertex
  for (std::size_t m = 2; m <= n; ++m) {
    std::set<std::uint32_t> grown;
    for (auto code : level) {
      const Rows base = decode(code, m - 1);
      for (std::uint32_t mask = 1; mask < (1U << (m - 1)); ++mask) {
        Rows adj = base;
        adj.push_back(mask);
        for (std::size_t v = 0; v + 1 < m; ++v) {
          if (mask >> v & 1U) adj[v] |= 1U << (m - 1);
        }
        grown.insert(canonical_code(adj));
      }
    }
    level = std::move(grown);
  }
  std::vector<AttributedGraph> graphs;
  graphs.reserve(level.size());
  for (auto code : level) {
    const Rows adj = decode(code, n);
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (adj[i] >> j & 1U) edges.emplace_back(i, j);
    graphs.push_back(unit_graph(n, edges));
  }
  return graphs;
}

StatementReport theorem1_sweep(const Theorem1SweepOptions& options) {
  StatementReport report{"theorem1", 0, 0, 0, 0.0};
  std::size_t dumps = 0;
  if (!options.counterexample_dir.empty()) std::filesystem::create_directories(options.counterexample_dir);
  std::uniform_real_distribution<double> weight(0.01, 1.0);

  for (std::size_t n = 1; n <= options.max_nodes; ++n) {
    const auto graphs = connected_graphs(n);
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
      const auto& g = graphs[gi];
      std::seed_seq seq{static_cast<std::uint64_t>(options.seed), static_cast<std::uint64_t>(n),
                        static_cast<std::uint64_t>(gi)};
      std::mt19937_64 rng(seq);
      for (std::uint32_t mask = 1; mask < (1U << n); ++mask) {
        std::vector<NodeId> cover;
        for (std::size_t v = 0; v < n; ++v)
          if (mask >> v & 1U) cover.push_back(v);
        CoverageInstance inst = make_instance(g, std::vector<double>(n, 1.0), cover);
        if (inst.delta == 0) {
          report.rejected += options.weight_draws;
          continue;
        }
        for (std::size_t draw = 0; draw < options.weight_draws; ++draw) {
          std::vector<double> w(n);
          for (auto& x : w) x = weight(rng);
          apply_weights(inst, std::move(w));
          const auto b = theorem1_bound(inst);
          ++report.instances_checked;
          report.tightest_ratio = std::max(report.tightest_ratio, ratio(inst.beta, b.bound));
          if (!leq(inst.beta, b.bound)) {
            ++report.violations;
            if (!options.counterexample_dir.empty() && dumps < options.max_dumps) {
              dump_counterexample(options.counterexample_dir / ("theorem1_counterexample_" +
                                                                std::to_string(dumps) + ".txt"),
                                  g, inst, b);
              ++dumps;
            }
          }
        }
      }
    }
  }
  return report;
}

std::vector<StatementReport> trace_sweep(const TraceSweepOptions& o) {
  StatementReport r2{"prop2", 0, 0, 0, 0.0};
  StatementReport r3{"prop3", 0, 0, 0, 0.0};
  StatementReport r4{"theorem4", 0, 0, 0, 0.0};
  StatementReport r4c{"theorem4_conclusion", 0, 0, 0, 0.0};
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<std::size_t> size(o.min_nodes, o.max_nodes);
  std::bernoulli_distribution coin(o.edge_probability);
  std::uniform_real_distribution<double> weight(0.01, 1.0);
  std::size_t valid3 = 0;

  for (std::size_t gi = 0; gi < o.max_graphs && (r2.instances_checked < o.target || valid3 < o.target); ++gi) {
    const std::size_t n = size(rng);
    std::vector<Edge> edges;
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t v = u + 1; v < n; ++v)
        if (coin(rng)) edges.emplace_back(u, v);
    const auto g = unit_graph(n, edges);
    std::vector<double> w(n);
    for (auto& x : w) x = weight(rng);

    auto t = random_trace(g, w, o.mode, rng);
    if (!t) {
      ++r2.rejected;
      ++r3.rejected;
      ++r4.rejected;
      continue;
    }
    if (r2.instances_checked < o.target) {
      try {
        const auto c = prop2_first_order(t->prev, t->cur);
        ++r2.instances_checked;
        if (!c.holds) ++r2.violations;
        r2.tightest_ratio = std::max(r2.tightest_ratio, ratio(c.lhs, c.rhs));
      } catch (const PreconditionError&) {
        ++r2.rejected;
      }
    }
    if (valid3 < o.target) {
      try {
        const auto c3 = prop3_second_order(*t);
        ++valid3;
        ++r3.instances_checked;
        if (!c3.holds) ++r3.violations;
        r3.tightest_ratio = std::max(r3.tightest_ratio, ratio(c3.rhs, c3.lhs));
        const auto c4 = theorem4_threshold(*t);
        if (c4.triggered) {
          ++r4.instances_checked;
          ++r4c.instances_checked;
          if (!c4.implication_holds) ++r4.violations;
          if (!c4.statement_holds) ++r4c.violations;
          r4.tightest_ratio = std::max(r4.tightest_ratio, ratio(c4.first.rhs, c4.second.rhs));
          r4c.tightest_ratio = std::max(r4c.tightest_ratio, ratio(c4.first.lhs, c4.second.lhs));
        } else {
          ++r4.rejected;
        }
      } catch (const PreconditionError&) {
        ++r3.rejected;
        ++r4.rejected;
      }
    }
  }
  return {r2, r3, r4, r4c};
}

void write_report(std::span<const StatementReport> reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw TheoryError("cannot write " + path.string());
  out << "statement,instances_checked,violations,tightest_ratio\n";
  out << std::setprecision(10);
  for (const auto& r : reports) {
    out << r.statement << ',' << r.instances_checked << ',' << r.violations << ',' << r.tightest_ratio << '\n';
  }
}

}  // namespace atom
