#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "atom/attack.hpp"
#include "atom/detector.hpp"
#include "atom/graph.hpp"
#include "atom/ppo.hpp"
#include "atom/victim.hpp"

namespace atom {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure inside run_experiment; what() starts with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what);
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Library training defaults with the harness's PPO overrides
/// (batch 64, 150 episodes, gamma 0.5, entropy 0.1).
TrainSettings harness_training();

struct ExperimentConfig {
  // data
  std::string dataset = "synthetic";  // "synthetic" or "files"
  std::filesystem::path edge_file;
  std::filesystem::path feature_file;
  std::filesystem::path label_file;
  SyntheticGraphOptions synthetic;
  double victim_train_fraction = 0.5;
  VictimConfig victim;

  // query simulation
  std::vector<Origin> origins{Origin::AGE, Origin::GRAIN, Origin::IGP};
  std::vector<std::size_t> budgets{25, 35};
  std::vector<double> mask_fractions{0.5, 0.65, 0.8, 1.0};
  std::size_t replicates = 20;
  std::size_t normal_users = 520;
  std::size_t normal_min_length = 21;
  std::size_t normal_max_length = 60;
  double random_walk_share = 0.5;
  PoolThresholds thresholds;

  // detector
  std::uint64_t seed = 0;
  double train_fraction = 0.70;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
  double lambda = 1.0;
  bool standard_gru = false;
  bool simple_embeddings = false;
  bool no_mapping_matrix = false;
  TrainSettings training = harness_training();
  std::vector<double> prefixes{0.25, 0.50, 0.75, 1.00};

  // sweeps
  std::vector<double> lambda_grid{0.0, 0.001, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0};
  std::size_t sweep_seeds = 5;

  /// Throws ConfigError on any inconsistency.
  void validate() const;
  /// λ actually fed to the embeddings (0 for simple_embeddings).
  double effective_lambda() const;
  DetectorFlags flags() const;
  /// "full" or the ablation flag name.
  std::string model_tag() const;
};

/// Flat `key = value` lines, '#' comments. Unknown keys and malformed values
/// throw ConfigError naming the line.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical `key = value` dump; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& cfg);
/// FNV-1a over to_text, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

struct Metrics {
  double f1 = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double accuracy = 0.0;
};

/// Undefined precision, recall or F1 are reported as 0.
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> truths);

struct MetricsRow {
  std::string model;
  std::string dataset;
  double prefix = 1.0;
  std::uint64_t seed = 0;
  Metrics metrics;
};

void write_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path);
std::string format_metrics(std::span<const MetricsRow> rows);

struct PoolSplit {
  std::vector<QuerySequence> train;
  std::vector<QuerySequence> validation;
  std::vector<QuerySequence> test;
};

/// Per-label shuffled split; each part's label counts round to the exact share.
PoolSplit stratified_split(std::span<const QuerySequence> pool, double train_fraction, double val_fraction,
                           std::uint64_t seed);

/// 1-based step at which a prefix fraction is scored: ⌈ρT⌉, at least 1.
std::size_t prefix_step(double fraction, std::size_t length);

/// Argmax decisions per user after the ⌈ρT⌉-th query.
std::vector<int> prefix_decisions(const PolicyModel& model, const EmbeddingTable& table,
                                  std::span<const QuerySequence> pool, double fraction);

struct PrefixResult {
  double fraction = 1.0;
  Metrics metrics;
};

std::vector<PrefixResult> prefix_evaluate(const PolicyModel& model, const EmbeddingTable& table,
                                          std::span<const QuerySequence> pool, std::span<const double> fractions);

/// Loaded or generated graph plus a trained victim.
struct VictimSetup {
  AttributedGraph graph;
  VictimModel victim;
  double victim_test_accuracy = 0.0;
};

VictimSetup prepare_victim(const ExperimentConfig& cfg, std::uint64_t seed);

/// Attack sequences (with surrogate fidelity) and normal users, labelled and
/// shuffled.
std::vector<QuerySequence> simulate_pool(const ExperimentConfig& cfg, const VictimSetup& setup, std::uint64_t seed);

/// The split make_benchmark uses for `seed`.
PoolSplit benchmark_split(const ExperimentConfig& cfg, std::span<const QuerySequence> pool, std::uint64_t seed);

struct BenchmarkData {
  VictimSetup setup;
  std::vector<QuerySequence> pool;
  PoolSplit split;
};

BenchmarkData make_benchmark(const ExperimentConfig& cfg, std::uint64_t seed);

/// Trains the configured variant on `data` and scores it at every prefix.
struct VariantResult {
  TrainedDetector detector;
  std::vector<MetricsRow> rows;
};

VariantResult run_variant(const ExperimentConfig& cfg, const BenchmarkData& data, std::uint64_t seed);

/// Whole pipeline into `out_dir`: graph files, victim checkpoint, pool,
/// detector checkpoint, training log, metrics.csv and manifest.txt. Stage
/// failures surface as StageError.
std::vector<MetricsRow> run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Ablation variants over `sweep_seeds` seeds starting at cfg.seed, data shared
/// per seed. Rows ordered by seed, variant, prefix.
std::vector<MetricsRow> run_ablation(const ExperimentConfig& cfg);

/// λ grid over `sweep_seeds` seeds; model tag is "lambda=<value>".
std::vector<MetricsRow> run_lambda_sweep(const ExperimentConfig& cfg);

/// Median F1 of rows matching model and prefix.
double median_f1(std::span<const MetricsRow> rows, const std::string& model, double prefix);

void write_manifest(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                    std::span<const std::string> artifacts);

}  // namespace atom
