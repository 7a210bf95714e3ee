#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Sparse>

#include "atom/graph.hpp"

namespace atom {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VictimConfig {
  std::size_t hidden = 16;
  std::size_t epochs = 200;
  double learning_rate = 0.01;
  double weight_decay = 0.0005;
  std::uint64_t seed = 0;
};

/// Two-layer GCN: softmax(Â · ReLU(Â X W1) · W2), no biases.
struct VictimModel {
  Matrix layer1_weights;  // d x hidden
  Matrix layer2_weights;  // hidden x c
  SparseMatrix normalized_propagation;
  std::vector<NodeId> train_mask;

  std::size_t hidden_dim() const { return static_cast<std::size_t>(layer1_weights.cols()); }
  std::size_t class_count() const { return static_cast<std::size_t>(layer2_weights.cols()); }
};

/// D̃^{-1/2} (A + I) D̃^{-1/2}.
SparseMatrix normalized_adjacency(const AttributedGraph& g);

struct VictimOutputs {
  Matrix hidden;         // n x hidden, post-ReLU
  Matrix logits;         // n x c
  Matrix probabilities;  // n x c, rows sum to one
};

/// Forward pass for every node at once.
VictimOutputs forward_all(const VictimModel& m, const AttributedGraph& g);

/// Objective and gradients used by training: mean cross-entropy over the
/// train mask plus (weight_decay / 2) * (|W1|^2 + |W2|^2).
struct LossAndGradient {
  double loss = 0.0;
  Matrix grad_layer1;
  Matrix grad_layer2;
};
LossAndGradient victim_loss(const VictimModel& m, const AttributedGraph& g, std::span<const int> targets,
                            double weight_decay);

/// Glorot-uniform initialised model bound to `g`'s propagation matrix.
VictimModel init_victim(const AttributedGraph& g, std::size_t hidden, std::size_t classes,
                        std::uint64_t seed);

/// Full-batch Adam training against the graph's labels on `train_mask`.
VictimModel train_victim(const AttributedGraph& g, std::span<const NodeId> train_mask,
                         const VictimConfig& config = {});

/// Same as above but against arbitrary per-node targets (only entries on
/// `train_mask` are read). Used for surrogate training on victim responses.
VictimModel train_gcn(const AttributedGraph& g, std::span<const NodeId> train_mask,
                      std::span<const int> targets, std::size_t classes, const VictimConfig& config);

struct Prediction {
  int label = 0;
  Vector probabilities;
};

/// Local two-hop evaluation of one node; matches forward_all row v.
Prediction predict(const VictimModel& m, const AttributedGraph& g, NodeId v);

/// Post-ReLU first-layer activation of node v.
Vector hidden_embedding(const VictimModel& m, const AttributedGraph& g, NodeId v);

double accuracy(const VictimModel& m, const AttributedGraph& g, std::span<const NodeId> nodes);

void save_victim(const VictimModel& m, const std::filesystem::path& path, const std::string& stamp = {});
/// Reads a checkpoint and rebinds it to `g`.
VictimModel load_victim(const std::filesystem::path& path, const AttributedGraph& g);

}  // namespace atom
