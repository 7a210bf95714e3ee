#include "atom/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace atom {

TrainSettings harness_training() {
  TrainSettings t;
  t.episodes = 150;
  t.batch_size = 64;
  t.ppo.gamma = 0.5;
  t.ppo.entropy_coef = 0.1;
  return t;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& s) {
  double x = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
  return x;
}

std::size_t to_size(const std::string& s) {
  std::size_t x = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw ConfigError("not a count: '" + s + "'");
  return x;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t x = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw ConfigError("not an unsigned integer: '" + s + "'");
  return x;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += f(v[i]);
  }
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class Member>
Field real(Member m) {
  return {[m](ExperimentConfig& c, const std::string& v) { m(c) = to_double(v); },
          [m](const ExperimentConfig& c) { return fmt(m(c)); }};
}

template <class Member>
Field count(Member m) {
  return {[m](ExperimentConfig& c, const std::string& v) { m(c) = to_size(v); },
          [m](const ExperimentConfig& c) { return std::to_string(m(c)); }};
}

template <class Member>
Field flag(Member m) {
  return {[m](ExperimentConfig& c, const std::string& v) { m(c) = to_bool(v); },
          [m](const ExperimentConfig& c) { return std::string(m(c) ? "true" : "false"); }};
}

template <class Member>
Field text(Member m) {
  return {[m](ExperimentConfig& c, const std::string& v) { m(c) = v; },
          [m](const ExperimentConfig& c) { return std::string(m(c)); }};
}

template <class Member>
Field reals(Member m) {
  return {[m](ExperimentConfig& c, const std::string& v) {
            std::vector<double> xs;
            for (const auto& s : split_list(v)) xs.push_back(to_double(s));
            m(c) = xs;
          },
          [m](const ExperimentConfig& c) { return join(m(c), fmt); }};
}

#define FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"dataset", text(FIELD(dataset))},
      {"edge_file", {[](ExperimentConfig& c, const std::string& v) { c.edge_file = v; },
                     [](const ExperimentConfig& c) { return c.edge_file.string(); }}},
      {"feature_file", {[](ExperimentConfig& c, const std::string& v) { c.feature_file = v; },
                        [](const ExperimentConfig& c) { return c.feature_file.string(); }}},
      {"label_file", {[](ExperimentConfig& c, const std::string& v) { c.label_file = v; },
                      [](const ExperimentConfig& c) { return c.label_file.string(); }}},
      {"synthetic.node_count", count(FIELD(synthetic.node_count))},
      {"synthetic.noise_dims", count(FIELD(synthetic.noise_dims))},
      {"synthetic.mean_degree", real(FIELD(synthetic.mean_degree))},
      {"synthetic.mixing", real(FIELD(synthetic.mixing))},
      {"synthetic.degree_exponent", real(FIELD(synthetic.degree_exponent))},
      {"synthetic.feature_noise", real(FIELD(synthetic.feature_noise))},
      {"victim.train_fraction", real(FIELD(victim_train_fraction))},
      {"victim.hidden", count(FIELD(victim.hidden))},
      {"victim.epochs", count(FIELD(victim.epochs))},
      {"victim.learning_rate", real(FIELD(victim.learning_rate))},
      {"victim.weight_decay", real(FIELD(victim.weight_decay))},
      {"attack.origins",
       {[](ExperimentConfig& c, const std::string& v) {
          std::vector<Origin> os;
          for (const auto& s : split_list(v)) {
            try {
              os.push_back(parse_origin(s));
            } catch (const std::exception&) {
              throw ConfigError("unknown origin '" + s + "'");
            }
          }
          c.origins = os;
        },
        [](const ExperimentConfig& c) { return join(c.origins, [](Origin o) { return to_string(o); }); }}},
      {"attack.budgets",
       {[](ExperimentConfig& c, const std::string& v) {
          std::vector<std::size_t> bs;
          for (const auto& s : split_list(v)) bs.push_back(to_size(s));
          c.budgets = bs;
        },
        [](const ExperimentConfig& c) { return join(c.budgets, [](std::size_t b) { return std::to_string(b); }); }}},
      {"attack.mask_fractions", reals(FIELD(mask_fractions))},
      {"attack.replicates", count(FIELD(replicates))},
      {"normal.users", count(FIELD(normal_users))},
      {"normal.min_length", count(FIELD(normal_min_length))},
      {"normal.max_length", count(FIELD(normal_max_length))},
      {"normal.random_walk_share", real(FIELD(random_walk_share))},
      {"pool.f_hi", real(FIELD(thresholds.f_hi))},
      {"pool.f_lo", real(FIELD(thresholds.f_lo))},
      {"pool.short_len", count(FIELD(thresholds.short_len))},
      {"seed", {[](ExperimentConfig& c, const std::string& v) { c.seed = to_u64(v); },
                [](const ExperimentConfig& c) { return std::to_string(c.seed); }}},
      {"split.train", real(FIELD(train_fraction))},
      {"split.val", real(FIELD(val_fraction))},
      {"split.test", real(FIELD(test_fraction))},
      {"lambda", real(FIELD(lambda))},
      {"ablation.standard_gru", flag(FIELD(standard_gru))},
      {"ablation.simple_embeddings", flag(FIELD(simple_embeddings))},
      {"ablation.no_mapping_matrix", flag(FIELD(no_mapping_matrix))},
      {"detector.hidden", count(FIELD(training.hidden_dim))},
      {"detector.episodes", count(FIELD(training.episodes))},
      {"detector.batch", count(FIELD(training.batch_size))},
      {"detector.eval_every", count(FIELD(training.eval_every))},
      {"detector.patience", count(FIELD(training.patience))},
      {"reward.tp", real(FIELD(training.reward.w_tp))},
      {"reward.tn", real(FIELD(training.reward.w_tn))},
      {"reward.fp", real(FIELD(training.reward.w_fp))},
      {"reward.fn", real(FIELD(training.reward.w_fn))},
      {"reward.bias", real(FIELD(training.reward.p_bias))},
      {"reward.bias_threshold", real(FIELD(training.reward.bias_fraction_threshold))},
      {"reward.window", count(FIELD(training.reward.window))},
      {"ppo.clip", real(FIELD(training.ppo.clip_eps))},
      {"ppo.gamma", real(FIELD(training.ppo.gamma))},
      {"ppo.gae_lambda", real(FIELD(training.ppo.lambda_gae))},
      {"ppo.entropy", real(FIELD(training.ppo.entropy_coef))},
      {"ppo.value", real(FIELD(training.ppo.value_coef))},
      {"ppo.epochs", count(FIELD(training.ppo.epochs))},
      {"ppo.learning_rate", real(FIELD(training.ppo.learning_rate))},
      {"ppo.max_grad_norm", real(FIELD(training.ppo.max_grad_norm))},
      {"prefixes", reals(FIELD(prefixes))},
      {"sweep.lambdas", reals(FIELD(lambda_grid))},
      {"sweep.seeds", count(FIELD(sweep_seeds))},
  };
  return table;
}

#undef FIELD

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::seed_seq seq{seed, a, b, c};
  std::uint64_t out = 0;
  std::vector<std::uint32_t> words(2);
  seq.generate(words.begin(), words.end());
  out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out;
}

std::string stamp(const ExperimentConfig& cfg) {
  return "seed=" + std::to_string(cfg.seed) + " config=" + config_hash(cfg);
}

template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

StageError::StageError(const std::string& stage, const std::string& what)
    : std::runtime_error(stage + ": " + what), stage_(stage) {}

void ExperimentConfig::validate() const {
  if (dataset != "synthetic" && dataset != "files") throw ConfigError("dataset must be 'synthetic' or 'files'");
  if (dataset == "files" && (edge_file.empty() || feature_file.empty() || label_file.empty())) {
    throw ConfigError("dataset 'files' needs edge_file, feature_file and label_file");
  }
  for (double f : {train_fraction, val_fraction, test_fraction}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0,1]");
  }
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  if (prefixes.empty()) throw ConfigError("at least one prefix fraction is required");
  for (double p : prefixes) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("prefix fractions must lie in (0,1]");
  }
  for (double f : mask_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("mask fractions must lie in (0,1]");
  }
  if (!(victim_train_fraction > 0.0 && victim_train_fraction < 1.0)) {
    throw ConfigError("victim.train_fraction must lie in (0,1)");
  }
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  for (double l : lambda_grid) {
    if (!(l >= 0.0)) throw ConfigError("sweep lambdas must be non-negative");
  }
  if (normal_min_length == 0 || normal_min_length > normal_max_length) {
    throw ConfigError("normal lengths must satisfy 1 <= min <= max");
  }
  if (!(random_walk_share >= 0.0 && random_walk_share <= 1.0)) {
    throw ConfigError("normal.random_walk_share must lie in [0,1]");
  }
  if (sweep_seeds == 0) throw ConfigError("sweep.seeds must be positive");
  try {
    training.reward.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

double ExperimentConfig::effective_lambda() const { return simple_embeddings ? 0.0 : lambda; }

DetectorFlags ExperimentConfig::flags() const {
  DetectorFlags f;
  f.standard_gru = standard_gru;
  f.no_mapping_matrix = no_mapping_matrix;
  return f;
}

std::string ExperimentConfig::model_tag() const {
  std::vector<std::string> parts;
  if (standard_gru) parts.emplace_back("standard_gru");
  if (simple_embeddings) parts.emplace_back("simple_embeddings");
  if (no_mapping_matrix) parts.emplace_back("no_mapping_matrix");
  if (parts.empty()) return "full";
  std::string tag = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) tag += "+" + parts[i];
  return tag;
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig cfg) {
  std::map<std::string, const Field*> index;
  for (const auto& [k, f] : fields()) index[k] = &f;
  std::stringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      it->second->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + key + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_text(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> truths) {
  if (predictions.size() != truths.size()) throw std::invalid_argument("prediction and truth lengths differ");
  if (predictions.empty()) throw std::invalid_argument("no predictions to score");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool p = predictions[i] == 1;
    const bool t = truths[i] == 1;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
    tn += !p && !t;
  }
  Metrics m;
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(predictions.size());
  return m;
}

std::string format_metrics(std::span<const MetricsRow> rows) {
  std::ostringstream out;
  out << "model,dataset,prefix,seed,f1,recall,precision,accuracy\n";
  out << std::fixed;
  for (const auto& r : rows) {
    out << r.model << ',' << r.dataset << ',' << std::setprecision(2) << r.prefix << ',' << r.seed << ','
        << std::setprecision(6) << r.metrics.f1 << ',' << r.metrics.recall << ',' << r.metrics.precision << ','
        << r.metrics.accuracy << '\n';
  }
  return out.str();
}

void write_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_metrics(rows);
}

PoolSplit stratified_split(std::span<const QuerySequence> pool, double train_fraction, double val_fraction,
                           std::uint64_t seed) {
  PoolSplit out;
  std::mt19937_64 rng(seed);
  for (int label : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (pool[i].truth_label == label) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    const auto n_val = std::min(idx.size() - n_train,
                                static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(idx.size()))));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto& part = k < n_train ? out.train : (k < n_train + n_val ? out.validation : out.test);
      part.push_back(pool[idx[k]]);
    }
  }
  const auto by_user = [](const QuerySequence& a, const QuerySequence& b) { return a.user_id < b.user_id; };
  std::sort(out.train.begin(), out.train.end(), by_user);
  std::sort(out.validation.begin(), out.validation.end(), by_user);
  std::sort(out.test.begin(), out.test.end(), by_user);
  return out;
}

std::size_t prefix_step(double fraction, std::size_t length) {
  if (length == 0) throw std::invalid_argument("empty sequence");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("prefix fraction must lie in (0,1]");
  // guard against 0.75 * 4 = 3.0000000000000004
  const double x = fraction * static_cast<double>(length);
  auto step = static_cast<std::size_t>(std::ceil(x - 1e-9));
  return std::clamp<std::size_t>(step, 1, length);
}

std::vector<int> prefix_decisions(const PolicyModel& model, const EmbeddingTable& table,
                                  std::span<const QuerySequence> pool, double fraction) {
  std::vector<int> out;
  out.reserve(pool.size());
  for (const auto& seq : pool) {
    const auto nodes = seq.nodes();
    const std::size_t step = prefix_step(fraction, nodes.size());
    const auto emb = table.sequence(std::span<const NodeId>(nodes).first(step));
    out.push_back(policy_decisions(model, emb).back());
  }
  return out;
}

std::vector<PrefixResult> prefix_evaluate(const PolicyModel& model, const EmbeddingTable& table,
                                          std::span<const QuerySequence> pool, std::span<const double> fractions) {
  if (pool.empty()) throw std::invalid_argument("empty evaluation pool");
  std::vector<std::vector<int>> decisions;
  std::vector<int> truths;
  for (const auto& seq : pool) {
    const auto nodes = seq.nodes();
    decisions.push_back(policy_decisions(model, table.sequence(nodes)));
    truths.push_back(seq.truth_label);
  }
  std::vector<PrefixResult> out;
  for (double f : fractions) {
    std::vector<int> pred;
    for (const auto& d : decisions) pred.push_back(d[prefix_step(f, d.size()) - 1]);
    out.push_back({f, compute_metrics(pred, truths)});
  }
  return out;
}

VictimSetup prepare_victim(const ExperimentConfig& cfg, std::uint64_t seed) {
  VictimSetup s;
  s.graph = stage("load-graph", [&] {
    if (cfg.dataset == "files") return load_graph(cfg.edge_file, cfg.feature_file, cfg.label_file);
    return make_two_community_graph(cfg.synthetic, derive_seed(seed, 1));
  });
  return stage("train-victim", [&] {
    const std::size_t n = s.graph.node_count();
    std::vector<NodeId> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, 2));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.victim_train_fraction * static_cast<double>(n))));
    std::vector<NodeId> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<NodeId> rest(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(train.begin(), train.end());
    VictimConfig vc = cfg.victim;
    vc.seed = derive_seed(seed, 3);
    s.victim = train_victim(s.graph, train, vc);
    s.victim_test_accuracy = rest.empty() ? 0.0 : accuracy(s.victim, s.graph, rest);
    return s;
  });
}

std::vector<QuerySequence> simulate_pool(const ExperimentConfig& cfg, const VictimSetup& setup, std::uint64_t seed) {
  return stage("simulate-attacks", [&] {
    const auto& g = setup.graph;
    const std::size_t n = g.node_count();
    std::vector<QuerySequence> attacks;
    std::size_t combo = 0;
    for (Origin origin : cfg.origins) {
      for (std::size_t budget : cfg.budgets) {
        for (double frac : cfg.mask_fractions) {
          for (std::size_t rep = 0; rep < cfg.replicates; ++rep, ++combo) {
            const std::uint64_t s = derive_seed(seed, 10, combo);
            std::vector<NodeId> order(n);
            std::iota(order.begin(), order.end(), 0);
            std::mt19937_64 rng(s);
            std::shuffle(order.begin(), order.end(), rng);
            const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))));
            std::vector<NodeId> mask(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
            std::sort(mask.begin(), mask.end());
            QuerySequence seq;
            switch (origin) {
              case Origin::AGE: seq = age_sequence(g, setup.victim, mask, budget, s); break;
              case Origin::GRAIN: seq = grain_sequence(g, setup.victim, mask, budget); break;
              case Origin::IGP: seq = igp_sequence(g, setup.victim, mask, budget); break;
              case Origin::NORMAL: throw ConfigError("NORMAL is not an attack origin");
            }
            VictimConfig vc = cfg.victim;
            vc.seed = derive_seed(s, 11);
            seq.fidelity = train_surrogate(g, setup.victim, seq, vc).fidelity;
            attacks.push_back(std::move(seq));
          }
        }
      }
    }
    std::vector<QuerySequence> normals;
    const auto walks = static_cast<std::size_t>(std::llround(cfg.random_walk_share * static_cast<double>(cfg.normal_users)));
    for (std::size_t u = 0; u < cfg.normal_users; ++u) {
      const auto style = u < walks ? NormalStyle::random_walk : NormalStyle::random_nodes;
      normals.push_back(normal_sequence(g, setup.victim, cfg.normal_min_length, cfg.normal_max_length, style,
                                        derive_seed(seed, 20, u)));
    }
    return label_and_pool(std::move(attacks), std::move(normals), cfg.thresholds, derive_seed(seed, 30));
  });
}

PoolSplit benchmark_split(const ExperimentConfig& cfg, std::span<const QuerySequence> pool, std::uint64_t seed) {
  return stratified_split(pool, cfg.train_fraction, cfg.val_fraction, derive_seed(seed, 40));
}

BenchmarkData make_benchmark(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BenchmarkData d;
  d.setup = prepare_victim(cfg, seed);
  d.pool = simulate_pool(cfg, d.setup, seed);
  d.split = benchmark_split(cfg, d.pool, seed);
  return d;
}

VariantResult run_variant(const ExperimentConfig& cfg, const BenchmarkData& data, std::uint64_t seed) {
  VariantResult r;
  const EmbeddingTable table(data.setup.graph, data.setup.victim, cfg.effective_lambda());
  r.detector = stage("train-detector", [&] {
    TrainSettings ts = cfg.training;
    ts.flags = cfg.flags();
    return train_detector(data.split.train, data.split.validation, table, ts, derive_seed(seed, 50));
  });
  const auto results = stage("evaluate", [&] {
    return prefix_evaluate(r.detector.model, table, data.split.test, cfg.prefixes);
  });
  for (const auto& p : results) r.rows.push_back({cfg.model_tag(), cfg.dataset, p.fraction, seed, p.metrics});
  return r;
}

std::vector<MetricsRow> run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const auto data = make_benchmark(cfg, cfg.seed);
  const std::string st = stamp(cfg);
  stage("write-artifacts", [&] {
    save_graph(data.setup.graph, out_dir / "graph.edges", out_dir / "graph.features", out_dir / "graph.labels");
    save_victim(data.setup.victim, out_dir / "victim.txt", st);
    save_pool(data.pool, out_dir / "pool.csv");
    return 0;
  });
  const auto result = run_variant(cfg, data, cfg.seed);
  stage("write-artifacts", [&] {
    save_policy(result.detector.model, out_dir / "detector.txt", st);
    write_train_log(result.detector.log, out_dir / "train_log.csv");
    write_metrics(result.rows, out_dir / "metrics.csv");
    const std::vector<std::string> artifacts{"graph.edges", "graph.features", "graph.labels", "victim.txt",
                                             "pool.csv",    "detector.txt",   "train_log.csv", "metrics.csv"};
    write_manifest(cfg, out_dir, artifacts);
    return 0;
  });
  return result.rows;
}

std::vector<MetricsRow> run_ablation(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<MetricsRow> rows;
  for (std::size_t k = 0; k < cfg.sweep_seeds; ++k) {
    const std::uint64_t seed = cfg.seed + k;
    const auto data = make_benchmark(cfg, seed);
    for (int variant = 0; variant < 4; ++variant) {
      ExperimentConfig v = cfg;
      v.standard_gru = variant == 1;
      v.no_mapping_matrix = variant == 2;
      v.simple_embeddings = variant == 3;
      const auto r = run_variant(v, data, seed);
      rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    }
  }
  return rows;
}

std::vector<MetricsRow> run_lambda_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<MetricsRow> rows;
  for (std::size_t k = 0; k < cfg.sweep_seeds; ++k) {
    const std::uint64_t seed = cfg.seed + k;
    const auto data = make_benchmark(cfg, seed);
    for (double lambda : cfg.lambda_grid) {
      ExperimentConfig v = cfg;
      v.lambda = lambda;
      v.simple_embeddings = false;
      auto r = run_variant(v, data, seed);
      for (auto& row : r.rows) row.model = "lambda=" + fmt(lambda);
      rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    }
  }
  return rows;
}

double median_f1(std::span<const MetricsRow> rows, const std::string& model, double prefix) {
  std::vector<double> xs;
  for (const auto& r : rows)
    if (r.model == model && std::abs(r.prefix - prefix) < 1e-12) xs.push_back(r.metrics.f1);
  if (xs.empty()) throw std::invalid_argument("no rows for model " + model);
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

void write_manifest(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                    std::span<const std::string> artifacts) {
  std::ofstream out(out_dir / "manifest.txt", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  out << "seed " << cfg.seed << "\nconfig_hash " << config_hash(cfg) << "\n";
  for (const auto& a : artifacts) out << "artifact " << a << "\n";
  out << "config\n" << to_text(cfg);
}

}  // namespace atom
