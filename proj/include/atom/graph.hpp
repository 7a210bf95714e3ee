#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace atom {

using NodeId = std::size_t;
using Edge = std::pair<NodeId, NodeId>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the file loaders; carries the 1-based line that failed.
class ParseError : public GraphError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace detail {
struct CoreCache;
}

/// Simple undirected graph with node features and optional class labels.
///
/// Immutable after construction. Core numbers are computed on first request
/// and shared by every copy of the graph.
class AttributedGraph {
 public:
  AttributedGraph() = default;

  /// Builds and validates a graph. Edges are unordered pairs; each pair may
  /// appear once (in either orientation). Throws GraphError on self-loops,
  /// duplicates, out-of-range ids, row-count or label-range mismatches.
  AttributedGraph(std::size_t node_count, std::span<const Edge> edges, Matrix features,
                  std::optional<std::vector<int>> labels = std::nullopt,
                  std::optional<int> class_count = std::nullopt);

  std::size_t node_count() const noexcept { return adjacency_.size(); }
  std::size_t edge_count() const noexcept { return edge_count_; }
  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(features_.cols()); }

  std::span<const NodeId> neighbors(NodeId v) const;
  std::size_t degree(NodeId v) const { return neighbors(v).size(); }
  bool has_edge(NodeId u, NodeId v) const;
  std::vector<Edge> edges() const;

  const Matrix& features() const noexcept { return features_; }
  bool has_labels() const noexcept { return labels_.has_value(); }
  const std::vector<int>& labels() const;
  int class_count() const noexcept { return class_count_; }

  /// Per-node core number (0 for isolated nodes). Thread-safe, computed once.
  const std::vector<int>& core_numbers() const;
  int max_core() const;

  void check_node(NodeId v) const;

 private:
  std::vector<std::vector<NodeId>> adjacency_;
  std::size_t edge_count_ = 0;
  Matrix features_;
  std::optional<std::vector<int>> labels_;
  int class_count_ = 0;
  std::shared_ptr<detail::CoreCache> core_cache_;
};

struct EgoSubgraph {
  NodeId center = 0;
  std::vector<NodeId> members;  // sorted ascending, contains center
  std::vector<Edge> edges;      // (u, v) with u < v
  Matrix feature_view;          // rows follow `members`
};

/// Reads the tab-separated edge list, comma-separated feature rows and an
/// optional label file (pass an empty path to skip labels).
AttributedGraph load_graph(const std::filesystem::path& edge_file,
                           const std::filesystem::path& feature_file,
                           const std::filesystem::path& label_file);

/// Writes the three files in the format `load_graph` accepts.
void save_graph(const AttributedGraph& g, const std::filesystem::path& edge_file,
                const std::filesystem::path& feature_file,
                const std::filesystem::path& label_file);

/// Bucket-based core decomposition (Batagelj-Zaversnik), O(n + m).
std::vector<int> k_core_numbers(const AttributedGraph& g);

EgoSubgraph ego_subgraph(const AttributedGraph& g, NodeId v);

/// Closed one-hop neighbourhood {v} ∪ N(v), sorted.
std::vector<NodeId> closed_neighborhood(const AttributedGraph& g, NodeId v);

/// Hop count between u and v, std::nullopt when they lie in different components.
std::optional<std::size_t> shortest_path_len(const AttributedGraph& g, NodeId u, NodeId v);

inline constexpr int kUnreachable = -1;

/// BFS hop counts from `source`; kUnreachable for other components.
std::vector<int> bfs_distances(const AttributedGraph& g, NodeId source);

/// Lazily filled all-pairs hop table. Rows are computed on first use.
/// Not thread-safe; give each worker its own instance.
class DistanceTable {
 public:
  explicit DistanceTable(const AttributedGraph& g);
  int distance(NodeId u, NodeId v);
  const std::vector<int>& row(NodeId source);

 private:
  const AttributedGraph* graph_;
  std::vector<std::vector<int>> rows_;
};

/// Subgraph induced by `nodes` (relabelled 0..k-1 in the given order),
/// keeping features and labels.
AttributedGraph induced_subgraph(const AttributedGraph& g, std::span<const NodeId> nodes);

struct SyntheticGraphOptions {
  std::size_t node_count = 100;
  std::size_t noise_dims = 6;
  double mean_degree = 6.0;
  double mixing = 0.1;          // share of expected degree spent across communities
  double degree_exponent = 2.5;  // Pareto tail of node propensities
  double feature_noise = 0.6;
};

/// Two-community degree-heterogeneous graph. Features are a one-hot
/// community indicator followed by Gaussian noise; labels are community ids.
AttributedGraph make_two_community_graph(const SyntheticGraphOptions& options, std::uint64_t seed);

}  // namespace atom
