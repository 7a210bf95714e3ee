#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "atom/attack.hpp"
#include "atom/graph.hpp"
#include "atom/victim.hpp"

namespace atom {

class DetectorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// S(x) = 1 + λ·(2σ(λx) − 1).
double scale_factor(double x, double lambda);

struct QueryEmbedding {
  Vector vector;
  double core_ratio = 1.0;
  double lambda = 0.0;
};

/// Mean victim hidden embedding over {v} ∪ N(v), scaled by
/// S(log p_v / log p_max). Core numbers are clamped to >= 1 and the ratio is
/// 1 when p_max = 1.
QueryEmbedding embed_query(const AttributedGraph& g, const VictimModel& victim, NodeId v, double lambda);

/// Embeddings for every node, computed once.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(const AttributedGraph& g, const VictimModel& victim, double lambda);
  const Vector& operator[](NodeId v) const { return rows_.at(v); }
  std::vector<Vector> sequence(std::span<const NodeId> nodes) const;
  std::size_t dim() const { return rows_.empty() ? 0 : static_cast<std::size_t>(rows_.front().size()); }
  double lambda() const { return lambda_; }

 private:
  std::vector<Vector> rows_;
  double lambda_ = 0.0;
};

struct DetectorFlags {
  bool standard_gru = false;       // x_T = h_T, no fusion gate
  bool no_mapping_matrix = false;  // m ≡ 1
};

/// All learned tensors of the fused GRU. Biases are stored as one-column matrices.
struct DetectorParams {
  Matrix Wg, bg;          // I x 2I, I x 1
  Matrix Wz, Uz, bz;      // H x I, H x H, H x 1
  Matrix Wr, Ur, br;
  Matrix Wh, Uh, bh;
  Matrix Wa, ba;          // H x 2, H x 1
  DetectorFlags flags;

  std::size_t input_dim() const { return static_cast<std::size_t>(Wg.rows()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(Wz.rows()); }

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  DetectorParams zeros_like() const;
};

DetectorParams init_detector(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed,
                             DetectorFlags flags = {});

struct DetectorState {
  Vector hidden;            // h^seq
  Vector prev_embedding;    // h_{T-1}
  Vector prev_action_probs; // p_{d_{T-1}}
  Vector prev_mapping;      // m applied at the last step
  std::size_t step = 0;
};

DetectorState initial_state(const DetectorParams& params);

/// Intermediates kept for the backward pass.
struct StepCache {
  Vector embedding, prev_embedding, delta, gate, x;
  Vector prev_hidden, z, r, candidate, blend, mapping, prev_probs;
};

/// One fused-GRU update. The returned state's prev_action_probs is carried
/// over unchanged; the caller replaces it with the policy's output.
DetectorState fused_step(const DetectorParams& params, const DetectorState& state, const Vector& embedding,
                         StepCache* cache = nullptr);

struct StepGradients {
  Vector prev_hidden;  // dL/dh^seq_{T-1}
  Vector prev_probs;   // dL/dp_{T-1}
};

/// Accumulates dL/dθ into `grads` given dL/dh^seq_T.
StepGradients fused_step_backward(const DetectorParams& params, const StepCache& cache, const Vector& d_hidden,
                                  DetectorParams& grads);

/// Folds fused_step over the embeddings. `policy` maps each new state to the
/// action probabilities fed back at the next step; uniform when empty.
std::vector<DetectorState> run_sequence(const DetectorParams& params, std::span<const Vector> embeddings,
                                        const std::function<Vector(const DetectorState&)>& policy = {});

std::vector<DetectorState> run_sequence(const DetectorParams& params, const QuerySequence& seq,
                                        const EmbeddingTable& table,
                                        const std::function<Vector(const DetectorState&)>& policy = {});

void write_tensors(std::ostream& out, std::span<const Matrix* const> tensors);
void read_tensors(std::istream& in, std::span<Matrix* const> tensors);

}  // namespace atom
