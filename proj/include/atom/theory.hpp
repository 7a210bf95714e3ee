#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "atom/graph.hpp"

namespace atom {

class TheoryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A trace or instance that does not meet a statement's hypotheses. Not a
/// counterexample.
class PreconditionError : public TheoryError {
 public:
  using TheoryError::TheoryError;
};

/// How δ is measured for a cover set: degree in the whole graph, or degree
/// inside the subgraph induced by the cover set.
enum class DegreeMode { graph, induced };

/// Union of open neighbourhoods, walking neighbour lists.
std::vector<bool> covered_by_lists(const AttributedGraph& g, std::span<const NodeId> cover);
/// Same set, OR-ing adjacency rows built from has_edge.
std::vector<bool> covered_by_rows(const AttributedGraph& g, std::span<const NodeId> cover);

struct CoverageInstance {
  std::size_t n = 0;
  std::vector<NodeId> cover;  // sorted, unique
  std::vector<double> weights;
  std::vector<bool> covered;
  std::size_t covered_count = 0;
  double beta = 0.0;
  int delta = 0;
  double total_weight = 0.0;
  double uncovered_weight = 0.0;
  std::size_t uncovered_count = 0;

  std::size_t cover_size() const { return cover.size(); }
  /// Zero when every node is covered.
  double avg_uncovered_weight() const;
};

/// Throws TheoryError on an empty cover, out-of-range ids or non-positive
/// weights.
CoverageInstance make_instance(const AttributedGraph& g, std::vector<double> weights,
                               std::vector<NodeId> cover, DegreeMode mode = DegreeMode::graph);

struct Theorem1Bound {
  double bound = 0.0;
  std::optional<double> first_branch;
  double second_branch = 0.0;
};

/// min of the two branches; the first is dropped when 𝒜 is empty or its
/// denominator is not positive. Throws TheoryError when δ = 0.
Theorem1Bound theorem1_bound(const CoverageInstance& inst);

/// Three nested cover sets on one graph with one weight vector.
struct CoverageTrace {
  CoverageInstance prev;  // t-1
  CoverageInstance cur;   // t
  CoverageInstance next;  // t+1
  double w_d = 0.0;       // floor on W_A(t-1) - W_A(t)

  double drop_first() const { return prev.uncovered_weight - cur.uncovered_weight; }
  double drop_second() const { return cur.uncovered_weight - next.uncovered_weight; }
};

/// Builds the trace with w_d set to the observed first drop.
CoverageTrace make_trace(const AttributedGraph& g, const std::vector<double>& weights,
                         std::vector<NodeId> prev, std::vector<NodeId> cur, std::vector<NodeId> next,
                         DegreeMode mode = DegreeMode::graph);

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

/// First-order statement on (t-1, t). Throws PreconditionError unless
/// δ_t > δ_{t-1}, Δ|𝒟| > 0 and |𝒟_t|δ_t ≥ |𝒟_{t-1}|δ_{t-1}.
BoundCheck prop2_first_order(const CoverageInstance& prev, const CoverageInstance& cur);

/// Second-order statement on (t-1, t, t+1), with β'_t = β_t.
BoundCheck prop3_second_order(const CoverageTrace& trace);

struct Theorem4Check {
  double threshold = 0.0;
  bool triggered = false;         // w_d ≥ threshold
  bool implication_holds = true;  // triggered ⇒ second-order lower bound ≥ first-order upper bound
  bool statement_holds = true;    // triggered ⇒ measured |Δ²| ≥ measured Δ
  BoundCheck first;
  BoundCheck second;
};

Theorem4Check theorem4_threshold(const CoverageTrace& trace);

/// Random nested trace where each step strictly raises δ. Tries `attempts`
/// growth moves per step; std::nullopt when none succeeds.
std::optional<CoverageTrace> random_trace(const AttributedGraph& g, const std::vector<double>& weights,
                                          DegreeMode mode, std::mt19937_64& rng, std::size_t attempts = 64);

/// One representative per isomorphism class of connected graphs on n nodes.
std::vector<AttributedGraph> connected_graphs(std::size_t n);

struct StatementReport {
  std::string statement;
  std::size_t instances_checked = 0;
  std::size_t violations = 0;
  std::size_t rejected = 0;
  /// Largest of lhs/rhs (for ≤ statements) or rhs/lhs (for ≥ statements);
  /// above 1 means violated.
  double tightest_ratio = 0.0;
};

struct Theorem1SweepOptions {
  std::size_t max_nodes = 7;
  std::size_t weight_draws = 50;
  std::uint64_t seed = 0;
  std::filesystem::path counterexample_dir;  // empty: no dumps
  std::size_t max_dumps = 20;
};

StatementReport theorem1_sweep(const Theorem1SweepOptions& options);

struct TraceSweepOptions {
  std::size_t target = 500;  // valid traces per statement
  std::size_t max_nodes = 10;
  std::size_t min_nodes = 4;
  double edge_probability = 0.5;
  std::size_t max_graphs = 20000;
  DegreeMode mode = DegreeMode::graph;
  std::uint64_t seed = 0;
};

/// Reports for the first-order, second-order and threshold statements, in that
/// order. The threshold report counts triggered traces as instances.
std::vector<StatementReport> trace_sweep(const TraceSweepOptions& options);

void write_report(std::span<const StatementReport> reports, const std::filesystem::path& path);

}  // namespace atom
