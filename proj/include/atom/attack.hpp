#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atom/graph.hpp"
#include "atom/victim.hpp"

namespace atom {

enum class Origin { AGE, GRAIN, IGP, NORMAL };

std::string to_string(Origin o);
Origin parse_origin(const std::string& s);

struct QueryRecord {
  std::size_t user_id = 0;
  std::size_t step = 0;  // 1-based
  NodeId node = 0;
  int response_label = 0;
  Vector response_probs;
};

struct QuerySequence {
  std::size_t user_id = 0;
  std::vector<QueryRecord> records;
  int truth_label = 0;
  Origin origin = Origin::NORMAL;
  std::optional<double> fidelity;

  std::size_t length() const noexcept { return records.size(); }
  std::vector<NodeId> nodes() const;
};

class AttackError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fills responses by querying the victim for each node in order.
QuerySequence make_sequence(const AttributedGraph& g, const VictimModel& victim,
                            std::span<const NodeId> nodes, Origin origin, std::size_t user_id = 0);

/// Fraction of the other scores strictly below each score (1.0 for a single
/// score). Lies in [0,1] and preserves order.
std::vector<double> percentile_ranks(std::span<const double> scores);

/// Shannon entropy (nats) of a probability vector.
double softmax_entropy(const Vector& p);

/// Lloyd's k-means with seeded distinct-point initialisation. Returns centroids (k x d).
Matrix kmeans(const Matrix& points, std::size_t k, std::size_t iterations, std::uint64_t seed);

struct AgeScores {
  std::vector<NodeId> candidates;  // sorted mask
  std::vector<double> entropy;
  std::vector<double> density;
  std::vector<double> centrality;
  std::vector<double> combined;  // S
  std::vector<double> averaged;  // S_avg
};

AgeScores age_scores(const AttributedGraph& g, const VictimModel& victim,
                     std::span<const NodeId> mask, std::uint64_t seed = 0);

QuerySequence age_sequence(const AttributedGraph& g, const VictimModel& victim,
                           std::span<const NodeId> mask, std::size_t budget, std::uint64_t seed = 0);

struct GrainSelection {
  std::vector<NodeId> order;
  std::vector<double> gains;
  double coverage_norm = 0.0;   // σ̂
  double diversity_norm = 0.0;  // D̂
};

/// Objective of a selected set: |σ|/σ̂ + γ·D/D̂, where D sums pairwise hop
/// counts over C(budget, 2) pairs.
double grain_objective(const AttributedGraph& g, DistanceTable& dist, std::span<const NodeId> selected,
                       std::size_t budget, double gamma, double diversity_norm);

GrainSelection grain_select(const AttributedGraph& g, std::span<const NodeId> mask, std::size_t budget,
                            double gamma = 1.0);

QuerySequence grain_sequence(const AttributedGraph& g, const VictimModel& victim,
                             std::span<const NodeId> mask, std::size_t budget, double gamma = 1.0);

/// s = α·P_centrality + (1−α)·P_entropy over `candidates`, with entropies
/// read from `beliefs` (n x c).
std::vector<double> igp_ranking(const AttributedGraph& g, const Matrix& beliefs,
                                std::span<const NodeId> candidates, double alpha);

QuerySequence igp_sequence(const AttributedGraph& g, const VictimModel& victim,
                           std::span<const NodeId> mask, std::size_t budget, double alpha = 0.5,
                           std::size_t prefilter_k = 10);

enum class NormalStyle { random_nodes, random_walk };

QuerySequence normal_sequence(const AttributedGraph& g, const VictimModel& victim, std::size_t min_length,
                              std::size_t max_length, NormalStyle style, std::uint64_t seed);

/// Share of positions where both label vectors agree.
double agreement(std::span<const int> a, std::span<const int> b);

/// Argmax agreement between two models over every node of g.
double fidelity(const VictimModel& victim, const VictimModel& surrogate, const AttributedGraph& g);

struct SurrogateResult {
  VictimModel model;
  double fidelity = 0.0;
  std::size_t queries_used = 0;
  bool diverged = false;
};

/// Trains a same-architecture GCN on the union of the queried nodes' ego
/// subgraphs, supervised by the victim's responses on the queried nodes.
SurrogateResult train_surrogate(const AttributedGraph& g, const VictimModel& victim, const QuerySequence& seq,
                                const VictimConfig& config = {});

struct PoolThresholds {
  double f_hi = 0.65;
  double f_lo = 0.2;
  std::size_t short_len = 20;
};

/// Labels attacks by fidelity and length, keeps every normal, shuffles with
/// `seed` and renumbers user ids by position.
std::vector<QuerySequence> label_and_pool(std::vector<QuerySequence> attacks, std::vector<QuerySequence> normals,
                                          const PoolThresholds& thresholds, std::uint64_t seed);

/// `user_id,label,origin,fidelity,node;node;...` one user per line.
void save_pool(const std::vector<QuerySequence>& pool, const std::filesystem::path& path);
/// Reads node lists only; response fields are left empty (see make_sequence).
std::vector<QuerySequence> load_pool(const std::filesystem::path& path);

}  // namespace atom
