#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "atom/graph.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace atom;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("atom_graph_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::filesystem::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path / name) << text;
    return path / name;
  }
};

}  // namespace

TEST_CASE("load three-node path") {
  TempDir dir;
  auto e = dir.write("e.tsv", "# comment\n0\t1\n1\t2\n");
  auto f = dir.write("f.csv", "1,0\n0,1\n0.5,0.5\n");
  auto l = dir.write("l.txt", "0\n1\n1\n");
  const auto g = load_graph(e, f, l);
  CHECK(g.node_count() == 3);
  CHECK(g.edge_count() == 2);
  CHECK(g.degree(1) == 2);
  CHECK(g.feature_dim() == 2);
  CHECK(g.class_count() == 2);
  CHECK(g.has_edge(2, 1));
}

TEST_CASE("loader rejects malformed input with line numbers") {
  TempDir dir;
  auto f = dir.write("f.csv", "1\n2\n3\n");
  auto expect_line = [&](const std::string& edges, std::size_t line) {
    auto e = dir.write("e.tsv", edges);
    try {
      load_graph(e, f, {});
      FAIL("expected ParseError");
    } catch (const ParseError& err) {
      CHECK(err.line() == line);
    }
  };
  expect_line("0\t0\n", 1);
  expect_line("0\t1\n0\t1\n", 2);
  expect_line("0\t1\n# x\n1\t3\n", 3);
  expect_line("0 1\n", 1);

  auto e = dir.write("e.tsv", "0\t1\n");
  auto short_labels = dir.write("l.txt", "0\n1\n");
  CHECK_THROWS_AS(load_graph(e, f, short_labels), ParseError);
  auto bad_feature = dir.write("bad.csv", "1\nx\n3\n");
  CHECK_THROWS_AS(load_graph(e, bad_feature, {}), ParseError);
}

TEST_CASE("reverse orientation merges into one undirected edge") {
  TempDir dir;
  auto e = dir.write("e.tsv", "0\t1\n1\t0\n1\t2\n");
  auto f = dir.write("f.csv", "1\n2\n3\n");
  const auto g = load_graph(e, f, {});
  CHECK(g.edge_count() == 2);
  CHECK(g.degree(0) == 1);
}

TEST_CASE("save and load round trip") {
  TempDir dir;
  const auto g = make_two_community_graph({.node_count = 30}, 3);
  save_graph(g, dir.path / "e", dir.path / "f", dir.path / "l");
  const auto h = load_graph(dir.path / "e", dir.path / "f", dir.path / "l");
  CHECK(h.edges() == g.edges());
  CHECK(h.labels() == g.labels());
  CHECK((h.features() - g.features()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("constructor invariants") {
  const Matrix x = Matrix::Zero(3, 1);
  std::vector<Edge> loop{{1, 1}};
  CHECK_THROWS_AS(AttributedGraph(3, loop, x), GraphError);
  std::vector<Edge> dup{{0, 1}, {1, 0}};
  CHECK_THROWS_AS(AttributedGraph(3, dup, x), GraphError);
  std::vector<Edge> range{{0, 3}};
  CHECK_THROWS_AS(AttributedGraph(3, range, x), GraphError);
  CHECK_THROWS_AS(AttributedGraph(4, {}, x), GraphError);
  CHECK_THROWS_AS(AttributedGraph(3, {}, x, std::vector<int>{0, 1, 2}, 2), GraphError);
  const AttributedGraph g(3, {}, x);
  CHECK_THROWS_AS(g.neighbors(3), GraphError);
}

TEST_CASE("core numbers of small shapes") {
  const auto tri = oracle::from_edges(3, {{0, 1}, {1, 2}, {0, 2}});
  CHECK(k_core_numbers(tri) == std::vector<int>{2, 2, 2});
  const auto star = oracle::from_edges(4, {{0, 1}, {0, 2}, {0, 3}});
  CHECK(k_core_numbers(star) == std::vector<int>{1, 1, 1, 1});
  const auto lone = oracle::from_edges(3, {{0, 1}});
  CHECK(k_core_numbers(lone) == std::vector<int>{1, 1, 0});
  CHECK(lone.max_core() == 1);
}

TEST_CASE("core numbers match peeling oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = oracle::random_graph(10, 0.1 + 0.05 * (trial % 10), rng);
    const auto cores = k_core_numbers(g);
    REQUIRE(cores == oracle::peeling_cores(g));
    for (NodeId v = 0; v < g.node_count(); ++v) {
      CHECK(cores[v] <= static_cast<int>(g.degree(v)));
      CHECK((cores[v] == 0) == (g.degree(v) == 0));
    }
  }
}

TEST_CASE("core numbers never increase when a node is deleted") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 60; ++trial) {
    const auto g = oracle::random_graph(10, 0.35, rng);
    const auto cores = g.core_numbers();
    for (NodeId drop = 0; drop < g.node_count(); ++drop) {
      std::vector<NodeId> keep;
      for (NodeId v = 0; v < g.node_count(); ++v)
        if (v != drop) keep.push_back(v);
      const auto sub = induced_subgraph(g, keep);
      const auto sub_cores = k_core_numbers(sub);
      for (std::size_t i = 0; i < keep.size(); ++i) CHECK(sub_cores[i] <= cores[keep[i]]);
    }
  }
}

TEST_CASE("core cache is computed once across threads") {
  const auto g = make_two_community_graph({.node_count = 200}, 5);
  std::vector<const std::vector<int>*> seen(8);
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < seen.size(); ++i) {
    pool.emplace_back([&, i] { seen[i] = &g.core_numbers(); });
  }
  for (auto& t : pool) t.join();
  for (auto* p : seen) CHECK(p == seen.front());
  const AttributedGraph copy = g;
  CHECK(&copy.core_numbers() == seen.front());
  CHECK(*seen.front() == oracle::peeling_cores(g));
}

TEST_CASE("ego subgraph") {
  const auto g = oracle::from_edges(5, {{0, 1}, {0, 2}, {1, 2}, {2, 3}});
  const auto ego = ego_subgraph(g, 0);
  CHECK(ego.members == std::vector<NodeId>{0, 1, 2});
  CHECK(ego.edges == std::vector<Edge>{{0, 1}, {0, 2}, {1, 2}});
  CHECK(ego.feature_view.rows() == 3);
  const auto lone = ego_subgraph(g, 4);
  CHECK(lone.members == std::vector<NodeId>{4});
  CHECK(lone.edges.empty());
  CHECK_THROWS_AS(ego_subgraph(g, 9), GraphError);

  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const auto h = oracle::random_graph(12, 0.3, rng);
    for (NodeId v = 0; v < h.node_count(); ++v) {
      const auto e = ego_subgraph(h, v);
      CHECK(e.members.size() == h.degree(v) + 1);
      CHECK(std::binary_search(e.members.begin(), e.members.end(), v));
      std::vector<Edge> expected;
      for (const auto& [a, b] : h.edges()) {
        if (std::binary_search(e.members.begin(), e.members.end(), a) &&
            std::binary_search(e.members.begin(), e.members.end(), b))
          expected.emplace_back(a, b);
      }
      std::sort(expected.begin(), expected.end());
      CHECK(e.edges == expected);
    }
  }
}

TEST_CASE("shortest paths") {
  const auto path = oracle::from_edges(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}});
  CHECK(shortest_path_len(path, 0, 4) == 4u);
  CHECK(shortest_path_len(path, 2, 2) == 0u);
  const auto split = oracle::from_edges(4, {{0, 1}, {2, 3}});
  CHECK_FALSE(shortest_path_len(split, 0, 3).has_value());
  CHECK_THROWS_AS(shortest_path_len(split, 0, 7), GraphError);
}

TEST_CASE("shortest paths match Floyd-Warshall and form a metric") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 11;
    const auto g = oracle::random_graph(n, 0.25, rng);
    const auto fw = oracle::floyd_warshall(g);
    DistanceTable table(g);
    for (NodeId u = 0; u < n; ++u) {
      for (NodeId v = 0; v < n; ++v) {
        const auto d = shortest_path_len(g, u, v);
        if (fw[u][v] == oracle::kInf) {
          REQUIRE_FALSE(d.has_value());
          CHECK(table.distance(u, v) == kUnreachable);
        } else {
          REQUIRE(d.has_value());
          CHECK(static_cast<int>(*d) == fw[u][v]);
          CHECK(table.distance(u, v) == fw[u][v]);
        }
        for (NodeId w = 0; w < n; ++w) {
          if (fw[u][v] != oracle::kInf && fw[v][w] != oracle::kInf) {
            CHECK(fw[u][w] <= fw[u][v] + fw[v][w]);
          }
        }
      }
    }
  }
}

TEST_CASE("synthetic two-community graph") {
  const auto a = make_two_community_graph({}, 7);
  const auto b = make_two_community_graph({}, 7);
  CHECK(a.edges() == b.edges());
  CHECK(a.node_count() == 100);
  CHECK(a.class_count() == 2);
  CHECK(a.feature_dim() == 8);
  for (NodeId v = 0; v < a.node_count(); ++v) CHECK(a.degree(v) >= 1);
  const double mean_degree = 2.0 * static_cast<double>(a.edge_count()) / 100.0;
  CHECK(mean_degree > 3.0);
  CHECK(mean_degree < 10.0);
}
