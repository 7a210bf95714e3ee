#include "atom/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <sstream>

namespace atom {

namespace detail {
struct CoreCache {
  std::once_flag once;
  std::vector<int> values;
};
}  // namespace detail

ParseError::ParseError(const std::string& file, std::size_t line, const std::string& what)
    : GraphError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

AttributedGraph::AttributedGraph(std::size_t node_count, std::span<const Edge> edges,
                                 Matrix features, std::optional<std::vector<int>> labels,
                                 std::optional<int> class_count)
    : adjacency_(node_count),
      features_(std::move(features)),
      labels_(std::move(labels)),
      core_cache_(std::make_shared<detail::CoreCache>()) {
  if (static_cast<std::size_t>(features_.rows()) != node_count) {
    throw GraphError("feature rows (" + std::to_string(features_.rows()) +
                     ") do not match node count (" + std::to_string(node_count) + ")");
  }
  for (const auto& [u, v] : edges) {
    if (u >= node_count || v >= node_count) {
      throw GraphError("edge (" + std::to_string(u) + "," + std::to_string(v) +
                       ") references a node outside 0.." + std::to_string(node_count) + "-1");
    }
    if (u == v) throw GraphError("self-loop on node " + std::to_string(u));
    adjacency_[u].push_back(v);
    adjacency_[v].push_back(u);
  }
  for (std::size_t v = 0; v < node_count; ++v) {
    auto& nb = adjacency_[v];
    std::sort(nb.begin(), nb.end());
    if (std::adjacent_find(nb.begin(), nb.end()) != nb.end()) {
      throw GraphError("duplicate edge at node " + std::to_string(v));
    }
  }
  edge_count_ = edges.size();

  if (labels_) {
    if (labels_->size() != node_count) {
      throw GraphError("label count does not match node count");
    }
    int max_label = -1;
    for (int y : *labels_) {
      if (y < 0) throw GraphError("negative class label");
      max_label = std::max(max_label, y);
    }
    class_count_ = class_count.value_or(max_label + 1);
    if (max_label >= class_count_) throw GraphError("label outside [0, class_count)");
  } else {
    class_count_ = class_count.value_or(0);
  }
}

std::span<const NodeId> AttributedGraph::neighbors(NodeId v) const {
  check_node(v);
  return adjacency_[v];
}

bool AttributedGraph::has_edge(NodeId u, NodeId v) const {
  check_node(u);
  check_node(v);
  const auto& nb = adjacency_[u];
  return std::binary_search(nb.begin(), nb.end(), v);
}

std::vector<Edge> AttributedGraph::edges() const {
  std::vector<Edge> out;
  out.reserve(edge_count_);
  for (NodeId u = 0; u < adjacency_.size(); ++u) {
    for (NodeId v : adjacency_[u]) {
      if (u < v) out.emplace_back(u, v);
    }
  }
  return out;
}

const std::vector<int>& AttributedGraph::labels() const {
  if (!labels_) throw GraphError("graph has no labels");
  return *labels_;
}

const std::vector<int>& AttributedGraph::core_numbers() const {
  if (!core_cache_) {
    static const std::vector<int> empty;
    return empty;
  }
  std::call_once(core_cache_->once, [this] { core_cache_->values = k_core_numbers(*this); });
  return core_cache_->values;
}

int AttributedGraph::max_core() const {
  const auto& cores = core_numbers();
  return cores.empty() ? 0 : *std::max_element(cores.begin(), cores.end());
}

void AttributedGraph::check_node(NodeId v) const {
  if (v >= adjacency_.size()) {
    throw GraphError("node id " + std::to_string(v) + " out of range (n=" +
                     std::to_string(adjacency_.size()) + ")");
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_index(std::string_view s, std::size_t& out) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GraphError("cannot open " + path.string());
  return in;
}

}  // namespace

AttributedGraph load_graph(const std::filesystem::path& edge_file,
                           const std::filesystem::path& feature_file,
                           const std::filesystem::path& label_file) {
  // Features fix n.
  std::vector<std::vector<double>> rows;
  {
    auto in = open_or_throw(feature_file);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string body = trim(line);
      if (body.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(body);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        const std::string c = trim(cell);
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), value);
        if (c.empty() || ec != std::errc() || ptr != c.data() + c.size()) {
          throw ParseError(feature_file.string(), lineno, "bad feature value '" + c + "'");
        }
        row.push_back(value);
      }
      if (!rows.empty() && row.size() != rows.front().size()) {
        throw ParseError(feature_file.string(), lineno, "feature row width differs from row 1");
      }
      rows.push_back(std::move(row));
    }
  }
  const std::size_t n = rows.size();
  const std::size_t d = n ? rows.front().size() : 0;
  Matrix features(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }

  std::vector<Edge> edges;
  {
    auto in = open_or_throw(edge_file);
    std::set<Edge> seen_ordered;
    std::set<Edge> seen_undirected;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string body = trim(line);
      if (body.empty() || body.front() == '#') continue;
      const auto tab = body.find('\t');
      std::size_t u = 0;
      std::size_t v = 0;
      if (tab == std::string::npos || body.find('\t', tab + 1) != std::string::npos ||
          !parse_index(std::string_view(body).substr(0, tab), u) ||
          !parse_index(std::string_view(body).substr(tab + 1), v)) {
        throw ParseError(edge_file.string(), lineno, "expected '<id>\\t<id>'");
      }
      if (u == v) throw ParseError(edge_file.string(), lineno, "self-loop on node " + std::to_string(u));
      if (u >= n || v >= n) {
        throw ParseError(edge_file.string(), lineno,
                         "node id out of range (n=" + std::to_string(n) + ")");
      }
      if (!seen_ordered.emplace(u, v).second) {
        throw ParseError(edge_file.string(), lineno, "duplicate edge");
      }
      // The reverse orientation of an edge already read is the same
      // undirected edge; it is merged rather than rejected.
      if (seen_undirected.emplace(std::min(u, v), std::max(u, v)).second) {
        edges.emplace_back(std::min(u, v), std::max(u, v));
      }
    }
  }

  std::optional<std::vector<int>> labels;
  if (!label_file.empty()) {
    auto in = open_or_throw(label_file);
    std::vector<int> ys;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string body = trim(line);
      if (body.empty()) continue;
      int y = 0;
      auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), y);
      if (ec != std::errc() || ptr != body.data() + body.size() || y < 0) {
        throw ParseError(label_file.string(), lineno, "bad class id '" + body + "'");
      }
      ys.push_back(y);
    }
    if (ys.size() != n) {
      throw ParseError(label_file.string(), lineno,
                       "label count " + std::to_string(ys.size()) + " != node count " +
                           std::to_string(n));
    }
    labels = std::move(ys);
  }
  return AttributedGraph(n, edges, std::move(features), std::move(labels));
}

void save_graph(const AttributedGraph& g, const std::filesystem::path& edge_file,
                const std::filesystem::path& feature_file,
                const std::filesystem::path& label_file) {
  {
    std::ofstream out(edge_file);
    if (!out) throw GraphError("cannot write " + edge_file.string());
    for (const auto& [u, v] : g.edges()) out << u << '\t' << v << '\n';
  }
  {
    std::ofstream out(feature_file);
    if (!out) throw GraphError("cannot write " + feature_file.string());
    out << std::setprecision(17);
    const Matrix& x = g.features();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (j) out << ',';
        out << x(i, j);
      }
      out << '\n';
    }
  }
  if (!label_file.empty() && g.has_labels()) {
    std::ofstream out(label_file);
    if (!out) throw GraphError("cannot write " + label_file.string());
    for (int y : g.labels()) out << y << '\n';
  }
}

std::vector<int> k_core_numbers(const AttributedGraph& g) {
  const std::size_t n = g.node_count();
  std::vector<int> degree(n);
  int max_degree = 0;
  for (NodeId v = 0; v < n; ++v) {
    degree[v] = static_cast<int>(g.degree(v));
    max_degree = std::max(max_degree, degree[v]);
  }
  // Bucket sort nodes by degree; pos/vert keep the ordering in place.
  std::vector<std::size_t> bin(static_cast<std::size_t>(max_degree) + 1, 0);
  for (int d : degree) ++bin[static_cast<std::size_t>(d)];
  std::size_t start = 0;
  for (auto& b : bin) {
    const std::size_t count = b;
    b = start;
    start += count;
  }
  std::vector<std::size_t> pos(n);
  std::vector<NodeId> vert(n);
  for (NodeId v = 0; v < n; ++v) {
    pos[v] = bin[static_cast<std::size_t>(degree[v])]++;
    vert[pos[v]] = v;
  }
  for (std::size_t d = bin.size() - 1; d > 0; --d) bin[d] = bin[d - 1];
  if (!bin.empty()) bin[0] = 0;

  for (std::size_t i = 0; i < n; ++i) {
    const NodeId v = vert[i];
    for (NodeId u : g.neighbors(v)) {
      if (degree[u] > degree[v]) {
        const auto du = static_cast<std::size_t>(degree[u]);
        const std::size_t pu = pos[u];
        const std::size_t pw = bin[du];
        const NodeId w = vert[pw];
        if (u != w) {
          pos[u] = pw;
          vert[pu] = w;
          pos[w] = pu;
          vert[pw] = u;
        }
        ++bin[du];
        --degree[u];
      }
    }
  }
  return degree;
}

std::vector<NodeId> closed_neighborhood(const AttributedGraph& g, NodeId v) {
  const auto nb = g.neighbors(v);
  std::vector<NodeId> members(nb.begin(), nb.end());
  members.insert(std::lower_bound(members.begin(), members.end(), v), v);
  return members;
}

EgoSubgraph ego_subgraph(const AttributedGraph& g, NodeId v) {
  EgoSubgraph ego;
  ego.center = v;
  ego.members = closed_neighborhood(g, v);
  for (std::size_t i = 0; i < ego.members.size(); ++i) {
    const NodeId a = ego.members[i];
    const auto nb = g.neighbors(a);
    for (std::size_t j = i + 1; j < ego.members.size(); ++j) {
      const NodeId b = ego.members[j];
      if (std::binary_search(nb.begin(), nb.end(), b)) ego.edges.emplace_back(a, b);
    }
  }
  ego.feature_view.resize(static_cast<Eigen::Index>(ego.members.size()), g.features().cols());
  for (std::size_t i = 0; i < ego.members.size(); ++i) {
    ego.feature_view.row(static_cast<Eigen::Index>(i)) =
        g.features().row(static_cast<Eigen::Index>(ego.members[i]));
  }
  return ego;
}

std::vector<int> bfs_distances(const AttributedGraph& g, NodeId source) {
  g.check_node(source);
  std::vector<int> dist(g.node_count(), kUnreachable);
  std::queue<NodeId> frontier;
  dist[source] = 0;
  frontier.push(source);
  while (!frontier.empty()) {
    const NodeId u = frontier.front();
    frontier.pop();
    for (NodeId w : g.neighbors(u)) {
      if (dist[w] == kUnreachable) {
        dist[w] = dist[u] + 1;
        frontier.push(w);
      }
    }
  }
  return dist;
}

std::optional<std::size_t> shortest_path_len(const AttributedGraph& g, NodeId u, NodeId v) {
  g.check_node(v);
  const int d = bfs_distances(g, u)[v];
  if (d == kUnreachable) return std::nullopt;
  return static_cast<std::size_t>(d);
}

DistanceTable::DistanceTable(const AttributedGraph& g) : graph_(&g), rows_(g.node_count()) {}

const std::vector<int>& DistanceTable::row(NodeId source) {
  graph_->check_node(source);
  auto& r = rows_[source];
  if (r.empty()) r = bfs_distances(*graph_, source);
  return r;
}

int DistanceTable::distance(NodeId u, NodeId v) {
  graph_->check_node(v);
  return row(u)[v];
}

AttributedGraph induced_subgraph(const AttributedGraph& g, std::span<const NodeId> nodes) {
  std::vector<std::size_t> local(g.node_count(), static_cast<std::size_t>(-1));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    g.check_node(nodes[i]);
    if (local[nodes[i]] != static_cast<std::size_t>(-1)) {
      throw GraphError("induced_subgraph: repeated node " + std::to_string(nodes[i]));
    }
    local[nodes[i]] = i;
  }
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (NodeId w : g.neighbors(nodes[i])) {
      const std::size_t j = local[w];
      if (j != static_cast<std::size_t>(-1) && i < j) edges.emplace_back(i, j);
    }
  }
  Matrix x(static_cast<Eigen::Index>(nodes.size()), g.features().cols());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = g.features().row(static_cast<Eigen::Index>(nodes[i]));
  }
  std::optional<std::vector<int>> labels;
  if (g.has_labels()) {
    std::vector<int> ys(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) ys[i] = g.labels()[nodes[i]];
    labels = std::move(ys);
  }
  return AttributedGraph(nodes.size(), edges, std::move(x), std::move(labels),
                         g.has_labels() ? std::optional<int>(g.class_count()) : std::nullopt);
}

AttributedGraph make_two_community_graph(const SyntheticGraphOptions& options, std::uint64_t seed) {
  const std::size_t n = options.node_count;
  if (n < 4) throw GraphError("synthetic graph needs at least 4 nodes");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<int> community(n);
  for (std::size_t v = 0; v < n; ++v) community[v] = v < n / 2 ? 0 : 1;

  // Pareto propensities give a heavy-tailed degree sequence.
  std::vector<double> theta(n);
  const double shape = options.degree_exponent - 1.0;
  for (auto& t : theta) t = std::min(std::pow(1.0 - unit(rng), -1.0 / shape), 0.25 * static_cast<double>(n));
  double sum_in[2] = {0.0, 0.0};
  for (std::size_t v = 0; v < n; ++v) sum_in[community[v]] += theta[v];
  const double mean_theta = (sum_in[0] + sum_in[1]) / static_cast<double>(n);
  for (auto& t : theta) t *= options.mean_degree / mean_theta;
  for (auto& s : sum_in) s *= options.mean_degree / mean_theta;
  const double total = sum_in[0] + sum_in[1];

  std::vector<Edge> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      const bool same = community[u] == community[v];
      const double p = same ? (1.0 - options.mixing) * theta[u] * theta[v] / sum_in[community[u]]
                            : options.mixing * theta[u] * theta[v] / (0.5 * total);
      if (unit(rng) < std::min(1.0, p)) edges.emplace_back(u, v);
    }
  }
  // Attach isolated nodes to a random member of their community.
  std::vector<std::size_t> deg(n, 0);
  for (const auto& [u, v] : edges) {
    ++deg[u];
    ++deg[v];
  }
  for (NodeId v = 0; v < n; ++v) {
    if (deg[v] != 0) continue;
    const NodeId lo = community[v] == 0 ? 0 : n / 2;
    const NodeId hi = community[v] == 0 ? n / 2 : n;
    std::uniform_int_distribution<NodeId> pick(lo, hi - 1);
    NodeId w = v;
    while (w == v) w = pick(rng);
    edges.emplace_back(std::min(v, w), std::max(v, w));
    ++deg[v];
    ++deg[w];
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  const std::size_t d = 2 + options.noise_dims;
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t v = 0; v < n; ++v) {
    const auto r = static_cast<Eigen::Index>(v);
    x(r, 0) = community[v] == 0 ? 1.0 : 0.0;
    x(r, 1) = community[v] == 1 ? 1.0 : 0.0;
    x(r, 0) += options.feature_noise * gauss(rng);
    x(r, 1) += options.feature_noise * gauss(rng);
    for (std::size_t j = 2; j < d; ++j) x(r, static_cast<Eigen::Index>(j)) = gauss(rng);
  }
  return AttributedGraph(n, edges, std::move(x), community, 2);
}

}  // namespace atom
