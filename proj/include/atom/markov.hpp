#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "atom/attack.hpp"
#include "atom/graph.hpp"

namespace atom {

class MarkovError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct QueryList {
  std::size_t user_id = 0;
  std::vector<NodeId> nodes;
  std::vector<double> edge_weights;  // hop counts between consecutive nodes
  std::size_t padded_length = 0;     // 0 until padded

  std::size_t length() const { return nodes.size(); }
};

struct QueryListBuild {
  std::vector<QueryList> lists;
  std::vector<std::size_t> skipped;  // user ids with an unreachable consecutive pair
};

/// One list per sequence; sequences crossing components are skipped.
QueryListBuild build_query_lists(std::span<const QuerySequence> sequences, const AttributedGraph& g);

/// Pads every list to the longest length by repeating its last node with
/// zero-weight edges. Returns that length.
std::size_t pad_lists(std::vector<QueryList>& lists);

/// Sum of positionwise hop counts; +inf when some pair is unreachable.
double list_distance(const QueryList& a, const QueryList& b, const AttributedGraph& g);

/// ⌈n / |l_min|⌉ over the given lists.
std::size_t pigeonhole_bound(std::span<const QueryList> lists, std::size_t node_count);

/// Greedy shortest-first collection of pairwise node-disjoint lists, capped by
/// the pigeonhole bound. Returns indices into `lists`.
std::vector<std::size_t> select_disjoint_lists(std::span<const QueryList> lists, std::size_t node_count);

struct CompositeChain {
  std::vector<QueryList> lists;  // relabelled; lists[0] is the start list
  std::size_t k = 0;
  double lambda_s = 0.0;
  double lambda_n = 0.0;
  Matrix list_distances;                // J x J
  Matrix list_transitions;              // J x J
  std::vector<Matrix> query_transitions;  // per list, k x k, row = from position

  std::size_t list_count() const { return lists.size(); }
  std::size_t state_count() const { return lists.size() * k; }
  /// Flat index of composite state (i, q), both 0-based.
  std::size_t state(std::size_t i, std::size_t q) const { return i * k + q; }
};

/// Pads the lists, relabels so `start` comes first and the rest follow by
/// distance to it, and builds Boltzmann transition tables.
CompositeChain build_chain(std::vector<QueryList> lists, const AttributedGraph& g, double lambda_s,
                           double lambda_n, std::size_t start = 0);

/// (i,q) -> (j,s) probability: list step i -> j, then position q -> s in list j.
double transition(const CompositeChain& chain, std::size_t i, std::size_t q, std::size_t j, std::size_t s);

/// Dense (Jk) x (Jk) kernel.
Matrix composite_kernel(const CompositeChain& chain);

/// Point mass at (0, 0), as a J x k matrix.
Matrix initial_distribution(const CompositeChain& chain);

/// Distribution after K transitions, J x k, by summing over paths one step at a
/// time.
Matrix k_step_distribution(const CompositeChain& chain, std::size_t K);

/// Nearest composite state to a node: smallest hop count to the node at that
/// position, ties to the lowest (list, position).
std::pair<std::size_t, std::size_t> nearest_state(const CompositeChain& chain, const AttributedGraph& g,
                                                  NodeId node);

/// Log-probability of the path from (0,0) through the nearest state of each
/// node in turn. -inf for a zero-probability step.
double log_prob(const CompositeChain& chain, const AttributedGraph& g, std::span<const NodeId> nodes);

}  // namespace atom
