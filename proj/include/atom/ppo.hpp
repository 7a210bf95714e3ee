#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "atom/attack.hpp"
#include "atom/detector.hpp"

namespace atom {

class PpoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reward weights. The constructor enforces p_bias > w_fn > max(w_tp, w_tn, w_fp).
struct RewardConfig {
  double w_tp = 1.0;
  double w_tn = 1.0;
  double w_fp = 1.0;
  double w_fn = 2.0;
  double p_bias = 3.0;
  double bias_fraction_threshold = 0.9;
  std::size_t window = 64;

  RewardConfig() = default;
  RewardConfig(double tp, double tn, double fp, double fn, double bias, double threshold = 0.9,
               std::size_t window_size = 64);
  void validate() const;
};

/// `batch_action_fraction` is the share of the most frequent action in the
/// rolling decision window.
double compute_reward(int action, int truth, double batch_action_fraction, const RewardConfig& cfg);

/// Rolling window of the last `size` decisions.
class BiasWindow {
 public:
  explicit BiasWindow(std::size_t size = 64) : size_(size) {}
  void push(int action);
  /// Share of the majority action once the window is full, otherwise 0.
  double majority_fraction() const;
  std::size_t count() const { return actions_.size(); }

 private:
  std::size_t size_;
  std::deque<int> actions_;
  std::size_t ones_ = 0;
};

struct PolicyValueHeads {
  Matrix Wpi, bpi;  // 2 x H, 2 x 1
  Matrix Wv, bv;    // 1 x H, 1 x 1

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
};

PolicyValueHeads init_heads(std::size_t hidden_dim, std::uint64_t seed);

/// Detector plus heads: everything PPO updates.
struct PolicyModel {
  DetectorParams detector;
  PolicyValueHeads heads;
  double lambda = 1.0;

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  PolicyModel zeros_like() const;
};

PolicyModel init_policy(std::size_t input_dim, std::size_t hidden_dim, double lambda, std::uint64_t seed,
                        DetectorFlags flags = {});

Eigen::VectorXd flatten(std::span<const Matrix* const> tensors);
void unflatten(const Eigen::VectorXd& flat, std::span<Matrix* const> tensors);

struct StepOutput {
  Vector probs;  // softmax over {0 = legitimate, 1 = attacker}
  double value = 0.0;
};

/// Deterministic forward pass; action probabilities are fed back into the
/// next step's mapping.
std::vector<StepOutput> policy_forward(const PolicyModel& model, std::span<const Vector> embeddings);

/// Argmax decision at every step.
std::vector<int> policy_decisions(const PolicyModel& model, std::span<const Vector> embeddings);

struct Trajectory {
  std::vector<Vector> embeddings;
  std::vector<int> actions;
  std::vector<double> logprobs;
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<double> returns;
  int truth = 0;

  std::size_t length() const { return actions.size(); }
};

/// GAE(γ, λ) with V after the last step equal to `bootstrap_value`.
void gae_advantages(Trajectory& traj, double gamma, double lambda_gae, double bootstrap_value = 0.0);

/// Zero-mean unit-variance advantages across the whole batch.
void normalize_advantages(std::span<Trajectory> batch);

struct PpoSettings {
  double clip_eps = 0.2;
  double gamma = 0.99;
  double lambda_gae = 0.95;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  std::size_t epochs = 4;
  double learning_rate = 3e-3;
  double max_grad_norm = 1.0;
};

struct PpoLoss {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;    // mean squared error
  double entropy = 0.0;  // mean
};

/// Clipped-surrogate objective over every step in the batch and, when
/// `grads` is given, its gradient with respect to every tensor of the model.
PpoLoss ppo_objective(const PolicyModel& model, std::span<const Trajectory> batch, const PpoSettings& s,
                      PolicyModel* grads = nullptr);

class Adam;

struct PpoUpdateResult {
  PpoLoss first;
  PpoLoss last;
};

/// `epochs` Adam steps on the batch objective.
PpoUpdateResult ppo_update(PolicyModel& model, Adam& optimizer, std::span<const Trajectory> batch,
                           const PpoSettings& s);

struct TrainSettings {
  std::size_t hidden_dim = 32;
  std::size_t episodes = 200;
  std::size_t batch_size = 32;
  std::size_t eval_every = 5;
  std::size_t patience = 10;  // evaluations without improvement
  DetectorFlags flags;
  RewardConfig reward;
  PpoSettings ppo;
};

struct TrainLogRow {
  std::size_t episode = 0;
  double mean_reward = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double val_f1 = -1.0;  // negative when not evaluated this episode
};

struct TrainedDetector {
  PolicyModel model;
  double best_val_f1 = 0.0;
  std::size_t best_episode = 0;
  std::vector<TrainLogRow> log;
};

/// Episodic PPO training on `train`, model selection by validation F1 at the
/// final step of each validation sequence.
TrainedDetector train_detector(std::span<const QuerySequence> train, std::span<const QuerySequence> validation,
                               const EmbeddingTable& table, const TrainSettings& settings, std::uint64_t seed);

double f1_score(std::span<const int> predictions, std::span<const int> truths);

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path);

void save_policy(const PolicyModel& model, const std::filesystem::path& path, const std::string& stamp = {});
PolicyModel load_policy(const std::filesystem::path& path);

}  // namespace atom
