#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>

#include "CLI11.hpp"
#include "atom/experiment.hpp"
#include "atom/markov.hpp"
#include "atom/theory.hpp"

using namespace atom;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "atom_out";
};

ExperimentConfig load(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

std::string stamp(const ExperimentConfig& cfg) {
  return "seed=" + std::to_string(cfg.seed) + " config=" + config_hash(cfg);
}

AttributedGraph read_graph(const fs::path& out) {
  return load_graph(out / "graph.edges", out / "graph.features", out / "graph.labels");
}

void require(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw std::runtime_error(p.string() + " not found; run '" + producer + "' first");
}

std::vector<std::string> existing_artifacts(const fs::path& out) {
  std::vector<std::string> names;
  for (const char* n : {"graph.edges", "graph.features", "graph.labels", "victim.txt", "pool.csv", "detector.txt",
                        "train_log.csv", "metrics.csv", "ablation.csv", "lambda_sweep.csv", "theory_report.csv",
                        "markov.csv"}) {
    if (fs::exists(out / n)) names.emplace_back(n);
  }
  return names;
}

void finish(const ExperimentConfig& cfg, const fs::path& out) {
  const auto names = existing_artifacts(out);
  write_manifest(cfg, out, names);
}

int train_victim_cmd(const Globals& g) {
  const auto cfg = load(g);
  const fs::path out = g.out;
  fs::create_directories(out);
  const auto setup = prepare_victim(cfg, cfg.seed);
  save_graph(setup.graph, out / "graph.edges", out / "graph.features", out / "graph.labels");
  save_victim(setup.victim, out / "victim.txt", stamp(cfg));
  finish(cfg, out);
  std::cout << "victim test accuracy " << setup.victim_test_accuracy << "\n";
  return 0;
}

VictimSetup read_setup(const fs::path& out) {
  require(out / "victim.txt", "train-victim");
  VictimSetup s;
  s.graph = read_graph(out);
  s.victim = load_victim(out / "victim.txt", s.graph);
  return s;
}

int simulate_cmd(const Globals& g) {
  const auto cfg = load(g);
  const fs::path out = g.out;
  const auto setup = read_setup(out);
  const auto pool = simulate_pool(cfg, setup, cfg.seed);
  save_pool(pool, out / "pool.csv");
  finish(cfg, out);
  std::size_t attackers = 0;
  for (const auto& s : pool) attackers += s.truth_label;
  std::cout << pool.size() << " users, " << attackers << " labelled attackers\n";
  return 0;
}

BenchmarkData read_benchmark(const ExperimentConfig& cfg, const fs::path& out) {
  require(out / "pool.csv", "simulate-attacks");
  BenchmarkData d;
  d.setup = read_setup(out);
  d.pool = load_pool(out / "pool.csv");
  d.split = benchmark_split(cfg, d.pool, cfg.seed);
  return d;
}

int train_detector_cmd(const Globals& g) {
  const auto cfg = load(g);
  const fs::path out = g.out;
  const auto data = read_benchmark(cfg, out);
  const auto result = run_variant(cfg, data, cfg.seed);
  save_policy(result.detector.model, out / "detector.txt", stamp(cfg));
  write_train_log(result.detector.log, out / "train_log.csv");
  finish(cfg, out);
  std::cout << "best validation F1 " << result.detector.best_val_f1 << " at episode " << result.detector.best_episode
            << "\n";
  return 0;
}

int evaluate_cmd(const Globals& g) {
  const auto cfg = load(g);
  const fs::path out = g.out;
  const auto data = read_benchmark(cfg, out);
  require(out / "detector.txt", "train-detector");
  const auto model = load_policy(out / "detector.txt");
  const EmbeddingTable table(data.setup.graph, data.setup.victim, model.lambda);
  std::vector<MetricsRow> rows;
  for (const auto& p : prefix_evaluate(model, table, data.split.test, cfg.prefixes)) {
    rows.push_back({cfg.model_tag(), cfg.dataset, p.fraction, cfg.seed, p.metrics});
  }
  write_metrics(rows, out / "metrics.csv");
  finish(cfg, out);
  std::cout << format_metrics(rows);
  return 0;
}

int sweep_cmd(const Globals& g) {
  const auto cfg = load(g);
  const fs::path out = g.out;
  fs::create_directories(out);
  const auto rows = run_lambda_sweep(cfg);
  write_metrics(rows, out / "lambda_sweep.csv");
  finish(cfg, out);
  for (double l : cfg.lambda_grid) {
    std::ostringstream tag;
    tag << "lambda=" << l;
    std::cout << tag.str() << " median F1 " << median_f1(rows, tag.str(), cfg.prefixes.back()) << "\n";
  }
  return 0;
}

int ablate_cmd(const Globals& g) {
  const auto cfg = load(g);
  const fs::path out = g.out;
  fs::create_directories(out);
  const auto rows = run_ablation(cfg);
  write_metrics(rows, out / "ablation.csv");
  finish(cfg, out);
  for (const char* tag : {"full", "standard_gru", "no_mapping_matrix", "simple_embeddings"}) {
    std::cout << tag << " median F1 " << median_f1(rows, tag, cfg.prefixes.back()) << "\n";
  }
  return 0;
}

struct TheoryArgs {
  std::size_t max_nodes = 7;
  std::size_t draws = 50;
  std::size_t traces = 500;
  std::size_t trace_nodes = 10;
};

int theory_cmd(const Globals& g, const TheoryArgs& a) {
  const std::uint64_t seed = g.seed.value_or(0);
  const fs::path out = g.out;
  fs::create_directories(out);
  std::vector<StatementReport> reports;
  Theorem1SweepOptions t1;
  t1.max_nodes = a.max_nodes;
  t1.weight_draws = a.draws;
  t1.seed = seed;
  t1.counterexample_dir = out;
  reports.push_back(theorem1_sweep(t1));
  for (DegreeMode mode : {DegreeMode::graph, DegreeMode::induced}) {
    TraceSweepOptions ts;
    ts.target = a.traces;
    ts.max_nodes = a.trace_nodes;
    ts.mode = mode;
    ts.seed = seed;
    for (auto r : trace_sweep(ts)) {
      if (mode == DegreeMode::induced) r.statement += "_induced";
      reports.push_back(r);
    }
  }
  write_report(reports, out / "theory_report.csv");
  for (const auto& r : reports) {
    std::cout << r.statement << ": " << r.violations << " violations in " << r.instances_checked << " instances\n";
  }
  return 0;
}

int markov_cmd(const Globals& g, double lambda_s, double lambda_n) {
  const fs::path out = g.out;
  require(out / "pool.csv", "simulate-attacks");
  const auto graph = read_graph(out);
  const auto pool = load_pool(out / "pool.csv");
  auto built = build_query_lists(pool, graph);
  if (built.lists.empty()) throw MarkovError("no usable query lists in pool");

  const auto chosen = select_disjoint_lists(built.lists, graph.node_count());
  std::vector<QueryList> states;
  for (auto i : chosen) {
    if (states.empty() || shortest_path_len(graph, states.front().nodes.front(), built.lists[i].nodes.front())) {
      states.push_back(built.lists[i]);
    }
  }
  const auto chain = build_chain(states, graph, lambda_s, lambda_n);

  std::ofstream csv(out / "markov.csv");
  if (!csv) throw std::runtime_error("cannot write markov.csv");
  csv << "user_id,label,K,log_prob\n" << std::setprecision(10);
  for (const auto& seq : pool) {
    const auto nodes = seq.nodes();
    double lp = -std::numeric_limits<double>::infinity();
    try {
      lp = log_prob(chain, graph, nodes);
    } catch (const MarkovError&) {
    }
    csv << seq.user_id << ',' << seq.truth_label << ',' << nodes.size() << ',' << lp << '\n';
  }
  std::cout << "chain with " << chain.list_count() << " lists of length " << chain.k << ", " << pool.size()
            << " users scored\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ATOM model-extraction detector harness"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "flat key = value config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--out", g.out, "artifact directory");

  auto* tv = app.add_subcommand("train-victim", "generate or load the graph and train the victim GCN");
  auto* sa = app.add_subcommand("simulate-attacks", "simulate attack and normal sequences into pool.csv");
  auto* td = app.add_subcommand("train-detector", "train the detector with PPO on pool.csv");
  auto* ev = app.add_subcommand("evaluate", "prefix evaluation of detector.txt on the test split");
  auto* th = app.add_subcommand("theory-check", "exhaustive and randomized checks of the coverage bounds");
  auto* mk = app.add_subcommand("markov", "per-user log-likelihood under the composite chain");
  auto* sw = app.add_subcommand("sweep-lambda", "lambda grid over the configured seeds");
  auto* ab = app.add_subcommand("ablate", "ablation variants over the configured seeds");

  TheoryArgs ta;
  th->add_option("--max-nodes", ta.max_nodes, "largest graph for the exhaustive check");
  th->add_option("--draws", ta.draws, "weight draws per cover");
  th->add_option("--traces", ta.traces, "valid traces per statement");
  th->add_option("--trace-nodes", ta.trace_nodes, "largest graph for trace growth");
  double lambda_s = 1.0;
  double lambda_n = 1.0;
  mk->add_option("--lambda-s", lambda_s, "list-level sensitivity");
  mk->add_option("--lambda-n", lambda_n, "query-level sensitivity");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;

  try {
    if (*tv) return train_victim_cmd(g);
    if (*sa) return simulate_cmd(g);
    if (*td) return train_detector_cmd(g);
    if (*ev) return evaluate_cmd(g);
    if (*th) return theory_cmd(g, ta);
    if (*mk) return markov_cmd(g, lambda_s, lambda_n);
    if (*sw) return sweep_cmd(g);
    if (*ab) return ablate_cmd(g);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
