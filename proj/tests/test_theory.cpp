#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "atom/theory.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace atom;

namespace {

AttributedGraph complete_graph(std::size_t n) {
  std::vector<Edge> e;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v) e.emplace_back(u, v);
  return oracle::from_edges(n, e);
}

AttributedGraph star(std::size_t leaves) {
  std::vector<Edge> e;
  for (std::size_t v = 1; v <= leaves; ++v) e.emplace_back(0, v);
  return oracle::from_edges(leaves + 1, e);
}

std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 2.0);
  std::vector<double> w(n);
  for (auto& x : w) x = u(rng);
  return w;
}

bool connected(std::size_t n, const std::vector<std::vector<bool>>& adj) {
  std::vector<bool> seen(n, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    auto v = stack.back();
    stack.pop_back();
    for (std::size_t u = 0; u < n; ++u) {
      if (adj[v][u] && !seen[u]) {
        seen[u] = true;
        stack.push_back(u);
      }
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

// Isomorphism classes of connected graphs by brute force over every labelled
// graph and every permutation.
std::size_t brute_connected_classes(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  std::set<std::uint64_t> classes;
  for (std::uint64_t code = 0; code < (1ULL << pairs.size()); ++code) {
    std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
    for (std::size_t b = 0; b < pairs.size(); ++b) {
      if (code >> b & 1) adj[pairs[b].first][pairs[b].second] = adj[pairs[b].second][pairs[b].first] = true;
    }
    if (!connected(n, adj)) continue;
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::uint64_t best = ~0ULL;
    do {
      std::uint64_t c = 0;
      for (std::size_t b = 0; b < pairs.size(); ++b)
        if (adj[p[pairs[b].first]][p[pairs[b].second]]) c |= 1ULL << b;
      best = std::min(best, c);
    } while (std::next_permutation(p.begin(), p.end()));
    classes.insert(best);
  }
  return classes.size();
}

struct RawTrace {
  double W, wa0, wa1, wa2, b0, b1, b2;
  double d0, d1, d2, s0, s1, s2;
  double n;
};

RawTrace raw(const AttributedGraph& g, const std::vector<double>& w, const std::vector<std::vector<NodeId>>& sets) {
  RawTrace r{};
  r.n = static_cast<double>(g.node_count());
  r.W = std::accumulate(w.begin(), w.end(), 0.0);
  double* wa[] = {&r.wa0, &r.wa1, &r.wa2};
  double* b[] = {&r.b0, &r.b1, &r.b2};
  double* d[] = {&r.d0, &r.d1, &r.d2};
  double* s[] = {&r.s0, &r.s1, &r.s2};
  for (int k = 0; k < 3; ++k) {
    std::set<NodeId> in(sets[k].begin(), sets[k].end());
    std::set<NodeId> cov;
    int mindeg = 1 << 20;
    for (auto u : in) {
      int deg = 0;
      for (auto v : g.neighbors(u)) {
        cov.insert(v);
        if (in.count(v)) ++deg;
      }
      mindeg = std::min(mindeg, deg);
    }
    *b[k] = static_cast<double>(cov.size()) / r.n;
    *wa[k] = 0.0;
    for (NodeId v = 0; v < g.node_count(); ++v)
      if (!cov.count(v)) *wa[k] += w[v];
    *d[k] = mindeg;
    *s[k] = static_cast<double>(in.size());
  }
  return r;
}

}  // namespace

TEST_CASE("coverage computed two ways agrees") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = oracle::random_graph(10, 0.3, rng);
    std::vector<NodeId> cover;
    std::bernoulli_distribution pick(0.3);
    for (NodeId v = 0; v < 10; ++v)
      if (pick(rng)) cover.push_back(v);
    CHECK(covered_by_lists(g, cover) == covered_by_rows(g, cover));
  }
}

TEST_CASE("instance fields") {
  const auto g = complete_graph(4);
  const auto inst = make_instance(g, {1, 2, 3, 4}, {2});
  CHECK(inst.beta == doctest::Approx(0.75));
  CHECK(inst.delta == 3);
  CHECK(inst.total_weight == doctest::Approx(10.0));
  CHECK(inst.uncovered_weight == doctest::Approx(3.0));
  CHECK(inst.avg_uncovered_weight() == doctest::Approx(3.0));
  CHECK_THROWS_AS(make_instance(g, {1, 1, 1, 1}, {}), TheoryError);
  CHECK_THROWS_AS(make_instance(g, {1, 0, 1, 1}, {0}), TheoryError);
  CHECK_THROWS_AS(make_instance(g, {1, 1, 1}, {0}), TheoryError);
}

TEST_CASE("induced degree mode") {
  const auto g = complete_graph(4);
  CHECK(make_instance(g, {1, 1, 1, 1}, {0}, DegreeMode::induced).delta == 0);
  CHECK(make_instance(g, {1, 1, 1, 1}, {0, 1, 2}, DegreeMode::induced).delta == 2);
  CHECK(make_instance(g, {1, 1, 1, 1}, {0, 1, 2}, DegreeMode::graph).delta == 3);
}

TEST_CASE("theorem 1 on K4 with one cover node is tight") {
  const auto inst = make_instance(complete_graph(4), {1, 1, 1, 1}, {0});
  const auto b = theorem1_bound(inst);
  CHECK(b.second_branch == doctest::Approx(0.75));
  CHECK(inst.beta == doctest::Approx(0.75));
  CHECK(b.bound >= inst.beta - 1e-12);
  CHECK(b.bound == doctest::Approx(0.75));
}

TEST_CASE("theorem 1 first branch") {
  // W/w̄_A = 4/1 = 4, n/δ = 4/3, denominator negative: branch dropped
  const auto k4 = make_instance(complete_graph(4), {1, 1, 1, 1}, {0});
  CHECK_FALSE(theorem1_bound(k4).first_branch.has_value());

  // path 0-1-2-3-4, cover {2}: covered {1,3}; heavy uncovered nodes
  const auto p = oracle::from_edges(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}});
  const auto inst = make_instance(p, {10, 1, 1, 1, 10}, {2});
  const auto b = theorem1_bound(inst);
  // W = 23, w̄_A = 21/3 = 7, W/w̄_A = 23/7, n/δ = 2.5 → denominator < 0
  CHECK_FALSE(b.first_branch.has_value());
}

TEST_CASE("theorem 1 first branch value on a star") {
  // star with 6 leaves, cover = one leaf: covers only the centre, δ = 1
  const auto g = star(6);
  std::vector<double> w{0.01, 1, 1, 1, 1, 1, 1};
  const auto inst = make_instance(g, w, {1});
  const auto b = theorem1_bound(inst);
  // W = 6.01, w̄_A = 1, W/w̄_A = 6.01, n/δ = 7: denominator 0.99
  REQUIRE(b.first_branch.has_value());
  CHECK(*b.first_branch == doctest::Approx((1.0 - 6.01) / (7.0 - 6.01)));
  CHECK(b.bound == doctest::Approx(*b.first_branch));
}

TEST_CASE("theorem 1 undefined for isolated cover node") {
  const auto g = oracle::from_edges(3, {{0, 1}});
  CHECK_THROWS_AS(theorem1_bound(make_instance(g, {1, 1, 1}, {2})), TheoryError);
}

TEST_CASE("theorem 1 full cover uses second branch only") {
  const auto inst = make_instance(complete_graph(4), {1, 1, 1, 1}, {0, 1});
  REQUIRE(inst.uncovered_count == 0);
  const auto b = theorem1_bound(inst);
  CHECK_FALSE(b.first_branch.has_value());
  CHECK(b.bound == doctest::Approx(b.second_branch));
  CHECK(b.second_branch >= 1.0);
}

TEST_CASE("theorem 1 second branch fails when degrees in the cover differ") {
  // cover = centre + one leaf of a 4-leaf star: everything covered, δ = 1
  const auto inst = make_instance(star(4), std::vector<double>(5, 1.0), {0, 1});
  CHECK(inst.beta == doctest::Approx(1.0));
  const auto b = theorem1_bound(inst);
  CHECK(b.bound == doctest::Approx(2.0 / 5.0));
  CHECK(inst.beta > b.bound);
}

TEST_CASE("connected graph counts") {
  const std::size_t expected[] = {1, 1, 2, 6, 21, 112, 853};
  for (std::size_t n = 1; n <= 7; ++n) {
    const auto graphs = connected_graphs(n);
    CHECK(graphs.size() == expected[n - 1]);
    for (const auto& g : graphs) {
      REQUIRE(g.node_count() == n);
      const auto d = bfs_distances(g, 0);
      CHECK(std::none_of(d.begin(), d.end(), [](int x) { return x == kUnreachable; }));
    }
  }
  for (std::size_t n = 1; n <= 5; ++n) CHECK(connected_graphs(n).size() == brute_connected_classes(n));
}

TEST_CASE("graph-degree delta never increases along nested covers") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const auto g = oracle::random_graph(9, 0.4, rng);
    std::vector<NodeId> order(9);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    int last = 1 << 20;
    for (std::size_t k = 1; k <= 9; ++k) {
      const auto inst = make_instance(g, std::vector<double>(9, 1.0), {order.begin(), order.begin() + k});
      CHECK(inst.delta <= last);
      last = inst.delta;
    }
    CHECK_FALSE(random_trace(g, std::vector<double>(9, 1.0), DegreeMode::graph, rng).has_value());
  }
}

TEST_CASE("prop 2 preconditions") {
  const auto g = complete_graph(5);
  const std::vector<double> w(5, 1.0);
  const auto a = make_instance(g, w, {0});
  const auto b = make_instance(g, w, {0, 1});
  CHECK_THROWS_AS(prop2_first_order(a, b), PreconditionError);  // δ stays 4
  CHECK_THROWS_AS(prop2_first_order(b, b), PreconditionError);
}

TEST_CASE("prop 2 with no change in coverage") {
  const auto g = complete_graph(4);
  const std::vector<double> w{1, 2, 3, 4};
  const auto a = make_instance(g, w, {0, 1}, DegreeMode::induced);
  const auto b = make_instance(g, w, {0, 1, 2}, DegreeMode::induced);
  const auto c = prop2_first_order(a, b);
  CHECK(c.lhs == 0.0);
  CHECK(c.rhs == 0.0);
  CHECK(c.holds);
}

TEST_CASE("trace checks match direct formulas") {
  std::mt19937_64 rng(17);
  std::size_t checked = 0;
  for (int trial = 0; trial < 4000 && checked < 150; ++trial) {
    const auto g = oracle::random_graph(8, 0.5, rng);
    const auto w = random_weights(8, rng);
    const auto t = random_trace(g, w, DegreeMode::induced, rng);
    if (!t) continue;
    const auto r = raw(g, w, {t->prev.cover, t->cur.cover, t->next.cover});
    REQUIRE(r.d1 > r.d0);
    REQUIRE(r.d2 > r.d1);
    const double lhs2 = (r.wa0 - r.wa1) / (r.s1 - r.s0);
    const double rhs2 = (r.b1 - r.b0) * r.W / (r.s0 * (1 - r.d0 / r.d1));
    const auto c2 = prop2_first_order(t->prev, t->cur);
    CHECK(c2.lhs == doctest::Approx(lhs2));
    CHECK(c2.rhs == doctest::Approx(rhs2));
    if (r.b1 == r.b0) {
      CHECK_THROWS_AS(prop3_second_order(*t), PreconditionError);
      continue;
    }
    const double wd = r.wa0 - r.wa1;
    CHECK(t->w_d == doctest::Approx(wd));
    const double lhs3 = std::abs(lhs2 - (r.wa1 - r.wa2) / (r.s2 - r.s1));
    const double rhs3 =
        std::abs(wd / r.n * (r.d1 - r.d0) / (r.b1 - r.b0) - r.W * r.d2 / r.s1 * (r.b2 - r.b1) / (r.d2 - r.d1));
    const auto c3 = prop3_second_order(*t);
    CHECK(c3.lhs == doctest::Approx(lhs3));
    CHECK(c3.rhs == doctest::Approx(rhs3));
    CHECK(c3.holds == (rhs3 <= lhs3 + 1e-9 * std::max(1.0, lhs3)));
    const double thr = r.n * r.d2 * (r.b1 - r.b0) / (r.s0 * (r.d1 - r.d0)) *
                       ((r.b1 - r.b0) / (r.d1 - r.d0) + (r.b2 - r.b1) / (r.d2 - r.d1)) * r.W;
    const auto c4 = theorem4_threshold(*t);
    CHECK(c4.threshold == doctest::Approx(thr));
    CHECK(c4.triggered == (wd >= c4.threshold));
    if (!c4.triggered) {
      CHECK(c4.implication_holds);
      CHECK(c4.statement_holds);
    }
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("bound checks are invariant to weight scaling") {
  std::mt19937_64 rng(23);
  std::size_t checked = 0;
  for (int trial = 0; trial < 4000 && checked < 100; ++trial) {
    const auto g = oracle::random_graph(9, 0.5, rng);
    const auto w = random_weights(9, rng);
    const auto t = random_trace(g, w, DegreeMode::induced, rng);
    if (!t) continue;
    std::vector<double> w2(w);
    for (auto& x : w2) x *= 2.0;
    const auto t2 = make_trace(g, w2, t->prev.cover, t->cur.cover, t->next.cover, DegreeMode::induced);
    CHECK(t2.w_d == doctest::Approx(2.0 * t->w_d));
    CHECK(prop2_first_order(t->prev, t->cur).holds == prop2_first_order(t2.prev, t2.cur).holds);
    try {
      const auto a = theorem4_threshold(*t);
      const auto b = theorem4_threshold(t2);
      CHECK(b.threshold == doctest::Approx(2.0 * a.threshold));
      CHECK(a.triggered == b.triggered);
      CHECK(a.implication_holds == b.implication_holds);
      CHECK(prop3_second_order(*t).holds == prop3_second_order(t2).holds);
      ++checked;
    } catch (const PreconditionError&) {
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("trace rejects broken nesting") {
  const auto g = complete_graph(5);
  const std::vector<double> w(5, 1.0);
  CHECK_THROWS_AS(make_trace(g, w, {0, 1}, {0, 1}, {0, 1, 2}), TheoryError);
  CHECK_THROWS_AS(make_trace(g, w, {0, 1}, {0, 2, 3}, {0, 1, 2, 3}), TheoryError);
}

TEST_CASE("theorem 1 sweep on small graphs finds and dumps counterexamples") {
  const auto dir = std::filesystem::temp_directory_path() / ("atom_theory_" + std::to_string(std::random_device{}()));
  Theorem1SweepOptions o;
  o.max_nodes = 4;
  o.weight_draws = 3;
  o.counterexample_dir = dir;
  o.max_dumps = 2;
  const auto r = theorem1_sweep(o);
  // n=1 contributes one rejected cover; 1+2+6 connected... covers on n=2..4
  CHECK(r.rejected == 3);
  CHECK(r.instances_checked > 0);
  CHECK(r.violations > 0);
  CHECK(r.tightest_ratio > 1.0);
  CHECK(std::filesystem::exists(dir / "theorem1_counterexample_0.txt"));
  CHECK(std::filesystem::exists(dir / "theorem1_counterexample_1.txt"));
  CHECK_FALSE(std::filesystem::exists(dir / "theorem1_counterexample_2.txt"));
  std::ifstream in(dir / "theorem1_counterexample_0.txt");
  std::string key;
  in >> key;
  CHECK(key == "nodes");
  std::filesystem::remove_all(dir);

  const auto again = theorem1_sweep({4, 3, 0, {}, 0});
  CHECK(again.violations == r.violations);
  CHECK(again.tightest_ratio == r.tightest_ratio);
}

TEST_CASE("trace sweep in both degree modes") {
  TraceSweepOptions o;
  o.target = 40;
  o.max_graphs = 3000;
  o.mode = DegreeMode::graph;
  const auto graph_mode = trace_sweep(o);
  REQUIRE(graph_mode.size() == 4);
  CHECK(graph_mode[0].statement == "prop2");
  CHECK(graph_mode[0].instances_checked == 0);
  CHECK(graph_mode[1].instances_checked == 0);

  o.mode = DegreeMode::induced;
  const auto induced = trace_sweep(o);
  CHECK(induced[0].instances_checked == 40);
  CHECK(induced[1].instances_checked == 40);
  const auto repeat = trace_sweep(o);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(repeat[i].violations == induced[i].violations);
    CHECK(repeat[i].instances_checked == induced[i].instances_checked);
  }
}

TEST_CASE("report csv") {
  const auto path = std::filesystem::temp_directory_path() / "atom_theory_report.csv";
  std::vector<StatementReport> rows{{"theorem1", 10, 2, 0, 1.5}};
  write_report(rows, path);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  CHECK(header == "statement,instances_checked,violations,tightest_ratio");
  CHECK(line == "theorem1,10,2,1.5");
  std::filesystem::remove(path);
}
