#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "atom/victim.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace atom;

namespace {

std::vector<NodeId> all_nodes(const AttributedGraph& g) {
  std::vector<NodeId> v(g.node_count());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST_CASE("normalized adjacency equals dense computation") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = oracle::random_graph(2 + trial % 9, 0.4, rng);
    const Matrix sparse = Matrix(normalized_adjacency(g));
    const Matrix dense = oracle::dense_normalized_adjacency(g);
    CHECK((sparse - dense).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((sparse - sparse.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("loss gradient matches central differences") {
  std::mt19937_64 rng(22);
  const auto g = oracle::random_graph(8, 0.4, rng, 3);
  VictimModel m = init_victim(g, 4, 3, 5);
  m.train_mask = {0, 2, 3, 5, 7};
  const std::vector<int> targets{0, 1, 2, 1, 0, 2, 1, 0};
  const double wd = 5e-4;
  const auto lg = victim_loss(m, g, targets, wd);
  const double h = 1e-5;
  double worst = 0.0;
  auto probe = [&](Matrix& w, const Matrix& grad) {
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double keep = w.data()[i];
      w.data()[i] = keep + h;
      const double up = victim_loss(m, g, targets, wd).loss;
      w.data()[i] = keep - h;
      const double down = victim_loss(m, g, targets, wd).loss;
      w.data()[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double rel = std::abs(fd - grad.data()[i]) / std::max(1e-6, std::abs(fd) + std::abs(grad.data()[i]));
      worst = std::max(worst, rel);
    }
  };
  probe(m.layer1_weights, lg.grad_layer1);
  probe(m.layer2_weights, lg.grad_layer2);
  CHECK(worst <= 1e-4);
}

TEST_CASE("training separates two communities") {
  const auto g = make_two_community_graph({.node_count = 40}, 1);
  const auto nodes = all_nodes(g);
  const auto m = train_victim(g, nodes, {});
  CHECK(accuracy(m, g, nodes) >= 0.9);
  const auto out = forward_all(m, g);
  for (Eigen::Index i = 0; i < out.probabilities.rows(); ++i) {
    CHECK(std::abs(out.probabilities.row(i).sum() - 1.0) <= 1e-6);
  }
  // a node whose whole neighbourhood is within its own community
  const auto& y = g.labels();
  for (NodeId v = 0; v < g.node_count(); ++v) {
    bool deep = g.degree(v) >= 2;
    for (NodeId u : g.neighbors(v)) deep = deep && y[u] == y[v];
    if (deep) CHECK(predict(m, g, v).label == y[v]);
  }
}

TEST_CASE("training is deterministic given seed") {
  const auto g = make_two_community_graph({.node_count = 40}, 2);
  const std::vector<NodeId> mask{0, 1, 2, 3, 20, 21, 22, 23};
  const auto a = train_victim(g, mask, {.seed = 4});
  const auto b = train_victim(g, mask, {.seed = 4});
  CHECK(a.layer1_weights == b.layer1_weights);
  CHECK(a.layer2_weights == b.layer2_weights);
  CHECK_THROWS_AS(train_victim(g, std::vector<NodeId>{}, {}), TrainingError);
}

TEST_CASE("predict agrees with the full forward pass") {
  const auto g = make_two_community_graph({.node_count = 40}, 3);
  const auto m = train_victim(g, all_nodes(g), {.epochs = 20});
  const auto out = forward_all(m, g);
  for (NodeId v = 0; v < g.node_count(); ++v) {
    const auto p = predict(m, g, v);
    CHECK((p.probabilities.transpose() - out.probabilities.row(static_cast<Eigen::Index>(v)))
              .cwiseAbs()
              .maxCoeff() <= 1e-12);
    CHECK((p.probabilities.array() > 0.0).all());
    CHECK((p.probabilities.array() < 1.0).all());
    const Vector h = hidden_embedding(m, g, v);
    CHECK((h.transpose() - out.hidden.row(static_cast<Eigen::Index>(v))).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((h.array() >= 0.0).all());
  }
  CHECK_THROWS_AS(predict(m, g, 40), GraphError);
}

TEST_CASE("hidden embedding by hand on a five-node graph") {
  // path 0-1-2-3-4
  Matrix x(5, 2);
  x << 1, 0, 0, 1, 1, 1, 2, -1, 0.5, 0.5;
  const std::vector<Edge> edges{{0, 1}, {1, 2}, {2, 3}, {3, 4}};
  const AttributedGraph g(5, edges, x);
  VictimModel m = init_victim(g, 3, 2, 9);
  const double deg[5] = {2, 3, 3, 3, 2};  // degree + 1
  for (NodeId v = 0; v < 5; ++v) {
    Eigen::RowVectorXd agg = x.row(static_cast<Eigen::Index>(v)) / deg[v];
    for (NodeId u : g.neighbors(v)) agg += x.row(static_cast<Eigen::Index>(u)) / std::sqrt(deg[v] * deg[u]);
    const Eigen::RowVectorXd expected = (agg * m.layer1_weights).cwiseMax(0.0);
    CHECK((hidden_embedding(m, g, v).transpose() - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("isolated zero-feature node has zero embedding; twins agree") {
  Matrix x(5, 2);
  x << 1, 2, 1, 2, 3, 0, 0, 0, 0.4, 0.1;
  const std::vector<Edge> edges{{0, 2}, {1, 2}, {2, 4}};
  const AttributedGraph g(5, edges, x);
  const VictimModel m = init_victim(g, 4, 2, 3);
  CHECK(hidden_embedding(m, g, 3).cwiseAbs().maxCoeff() == 0.0);
  CHECK(predict(m, g, 0).probabilities == predict(m, g, 1).probabilities);
}

TEST_CASE("checkpoint round trip") {
  const auto g = make_two_community_graph({.node_count = 30}, 4);
  const auto m = train_victim(g, all_nodes(g), {.epochs = 10});
  const auto path = std::filesystem::temp_directory_path() / "atom_victim_ckpt.txt";
  save_victim(m, path, "seed=1");
  const auto back = load_victim(path, g);
  CHECK(back.layer1_weights == m.layer1_weights);
  CHECK(back.layer2_weights == m.layer2_weights);
  CHECK(back.train_mask == m.train_mask);
  std::ofstream(path) << "garbage\n";
  CHECK_THROWS(load_victim(path, g));
  std::filesystem::remove(path);
}
