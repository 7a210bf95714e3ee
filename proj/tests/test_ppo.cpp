#include <filesystem>
#include <numeric>
#include <random>

#include "atom/adam.hpp"
#include "atom/ppo.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace atom;

namespace {

Vector random_vector(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  Vector v(n);
  for (auto& x : v) x = gauss(rng);
  return v;
}

Trajectory rollout(const PolicyModel& m, std::vector<Vector> emb, std::mt19937_64& rng) {
  Trajectory tr;
  tr.embeddings = std::move(emb);
  for (const auto& st : policy_forward(m, tr.embeddings)) {
    const int a = std::bernoulli_distribution(st.probs(1))(rng) ? 1 : 0;
    tr.actions.push_back(a);
    tr.logprobs.push_back(std::log(st.probs(a)));
    tr.values.push_back(st.value);
    tr.rewards.push_back(std::normal_distribution<double>()(rng));
  }
  return tr;
}

struct SeparablePool {
  AttributedGraph g = make_two_community_graph({.node_count = 100}, 41);
  VictimModel victim;
  std::vector<QuerySequence> train, val;
  SeparablePool() {
    std::vector<NodeId> all(g.node_count());
    std::iota(all.begin(), all.end(), 0);
    victim = train_victim(g, all, {.epochs = 100});
    std::vector<NodeId> core, leaf;
    for (NodeId v = 0; v < g.node_count(); ++v) {
      if (g.core_numbers()[v] == g.max_core()) core.push_back(v);
      if (g.core_numbers()[v] == 1) leaf.push_back(v);
    }
    REQUIRE(core.size() >= 3);
    REQUIRE(leaf.size() >= 3);
    std::mt19937_64 rng(5);
    auto draw = [&](const std::vector<NodeId>& from, int label) {
      std::vector<NodeId> nodes;
      for (int t = 0; t < 8; ++t) nodes.push_back(from[std::uniform_int_distribution<std::size_t>(0, from.size() - 1)(rng)]);
      QuerySequence s = make_sequence(g, victim, nodes, label ? Origin::AGE : Origin::NORMAL);
      s.truth_label = label;
      return s;
    };
    for (int i = 0; i < 40; ++i) train.push_back(draw(i % 2 ? core : leaf, i % 2));
    for (int i = 0; i < 20; ++i) val.push_back(draw(i % 2 ? core : leaf, i % 2));
  }
};

}  // namespace

TEST_CASE("rewards") {
  const RewardConfig cfg;
  CHECK(compute_reward(1, 1, 0.5, cfg) == 1.0);
  CHECK(compute_reward(0, 0, 0.5, cfg) == 1.0);
  CHECK(compute_reward(0, 1, 0.5, cfg) == -2.0);
  CHECK(compute_reward(1, 0, 0.5, cfg) == -1.0);
  CHECK(compute_reward(1, 1, 0.95, cfg) == -3.0);
  CHECK(compute_reward(1, 1, 0.9, cfg) == 1.0);
}

TEST_CASE("reward ordering enforced at construction") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  for (int i = 0; i < 2000; ++i) {
    const double tp = u(rng), tn = u(rng), fp = u(rng), fn = u(rng), bias = u(rng);
    const bool valid = bias > fn && fn > std::max({tp, tn, fp});
    if (valid) {
      CHECK_NOTHROW(RewardConfig(tp, tn, fp, fn, bias));
    } else {
      CHECK_THROWS_AS(RewardConfig(tp, tn, fp, fn, bias), PpoError);
    }
  }
  CHECK_THROWS_AS(RewardConfig(1, 1, 1, 2, 3, 0.5), PpoError);
}

TEST_CASE("bias window") {
  BiasWindow w(4);
  for (int a : {1, 1, 1}) w.push(a);
  CHECK(w.majority_fraction() == 0.0);
  w.push(0);
  CHECK(w.majority_fraction() == 0.75);
  w.push(1);
  CHECK(w.majority_fraction() == 0.75);
  w.push(1);
  CHECK(w.majority_fraction() == 0.75);
  w.push(1);
  CHECK(w.majority_fraction() == 0.75);
  w.push(1);
  CHECK(w.majority_fraction() == 1.0);
  CHECK(w.count() == 4);
}

TEST_CASE("generalised advantage estimation") {
  const double gamma = 0.9;
  SUBCASE("Bellman fixed point") {
    Trajectory tr;
    const double r = 0.7;
    tr.rewards.assign(6, r);
    tr.values.assign(6, r / (1 - gamma));
    gae_advantages(tr, gamma, 0.95, r / (1 - gamma));
    for (double a : tr.advantages) CHECK(std::abs(a) <= 1e-12);
  }
  SUBCASE("gamma zero") {
    Trajectory tr;
    tr.rewards = {1, -2, 0.5};
    tr.values = {0.3, 0.1, -0.4};
    gae_advantages(tr, 0.0, 0.95);
    for (std::size_t t = 0; t < 3; ++t) CHECK(tr.advantages[t] == doctest::Approx(tr.rewards[t] - tr.values[t]));
  }
  SUBCASE("brute-force weighted sum") {
    Trajectory tr;
    tr.rewards = {0.5, -1.0, 2.0, 0.0, 1.5};
    tr.values = {0.2, 0.4, -0.3, 0.9, 0.1};
    const double lam = 0.8;
    gae_advantages(tr, gamma, lam, 0.0);
    for (std::size_t t = 0; t < 5; ++t) {
      double expect = 0.0;
      for (std::size_t l = 0; t + l < 5; ++l) {
        const double next = t + l + 1 < 5 ? tr.values[t + l + 1] : 0.0;
        const double delta = tr.rewards[t + l] + gamma * next - tr.values[t + l];
        expect += std::pow(gamma * lam, static_cast<double>(l)) * delta;
      }
      CHECK(tr.advantages[t] == doctest::Approx(expect).epsilon(1e-12));
      CHECK(tr.returns[t] == doctest::Approx(expect + tr.values[t]).epsilon(1e-12));
    }
  }
  Trajectory empty;
  CHECK_THROWS_AS(gae_advantages(empty, 0.9, 0.9), PpoError);
}

TEST_CASE("advantage normalisation") {
  std::vector<Trajectory> batch(2);
  batch[0].advantages = {1, 2, 3};
  batch[1].advantages = {4, 5};
  normalize_advantages(batch);
  double sum = 0, sq = 0;
  for (auto& t : batch)
    for (double a : t.advantages) sum += a, sq += a * a;
  CHECK(std::abs(sum) <= 1e-12);
  CHECK(sq / 5 == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("unchanged parameters give ratio one") {
  std::mt19937_64 rng(2);
  const auto m = init_policy(3, 4, 1.0, 7);
  std::vector<Trajectory> batch;
  for (int i = 0; i < 3; ++i) {
    std::vector<Vector> emb;
    for (int t = 0; t < 4; ++t) emb.push_back(random_vector(3, rng));
    batch.push_back(rollout(m, emb, rng));
    gae_advantages(batch.back(), 0.99, 0.95);
  }
  const PpoSettings s;
  const auto loss = ppo_objective(m, batch, s);
  double mean_adv = 0;
  for (auto& t : batch)
    for (double a : t.advantages) mean_adv += a / 12.0;
  CHECK(loss.policy == doctest::Approx(-mean_adv).epsilon(1e-12));
}

TEST_CASE("zero advantages leave only value and entropy gradients") {
  std::mt19937_64 rng(3);
  const auto m = init_policy(3, 4, 1.0, 8);
  std::vector<Vector> emb{random_vector(3, rng), random_vector(3, rng), random_vector(3, rng)};
  auto tr = rollout(m, emb, rng);
  tr.advantages.assign(3, 0.0);
  tr.returns.assign(3, 0.25);
  std::vector<Trajectory> batch{tr};
  PpoSettings s;
  s.entropy_coef = 0.0;
  s.value_coef = 0.0;
  auto g = m.zeros_like();
  const auto loss = ppo_objective(m, batch, s, &g);
  CHECK(loss.policy == 0.0);
  CHECK(flatten(g.tensors()).cwiseAbs().maxCoeff() == 0.0);
  s.value_coef = 0.5;
  auto gv = m.zeros_like();
  ppo_objective(m, batch, s, &gv);
  CHECK(flatten(gv.tensors()).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("full objective gradient matches central differences") {
  for (int variant = 0; variant < 3; ++variant) {
    std::mt19937_64 rng(10 + static_cast<std::uint64_t>(variant));
    const DetectorFlags flags{.standard_gru = variant == 1, .no_mapping_matrix = variant == 2};
    auto m = init_policy(3, 4, 1.0, 9, flags);
    m.detector.Wa = Matrix::Random(4, 2);
    std::vector<Trajectory> batch;
    for (int i = 0; i < 2; ++i) {
      std::vector<Vector> emb{random_vector(3, rng), random_vector(3, rng)};
      batch.push_back(rollout(m, emb, rng));
      gae_advantages(batch.back(), 0.99, 0.95);
    }
    // move away from the rollout parameters so ratios differ from one
    for (Matrix* t : m.tensors()) *t += 0.02 * Matrix::Random(t->rows(), t->cols());
    PpoSettings s;
    s.entropy_coef = 0.05;
    auto g = m.zeros_like();
    ppo_objective(m, batch, s, &g);
    const double eps = 1e-5;
    double worst = 0.0;
    auto tp = m.tensors();
    auto tg = g.tensors();
    for (std::size_t k = 0; k < tp.size(); ++k) {
      for (Eigen::Index i = 0; i < tp[k]->size(); ++i) {
        const double keep = tp[k]->data()[i];
        tp[k]->data()[i] = keep + eps;
        const double up = ppo_objective(m, batch, s).total;
        tp[k]->data()[i] = keep - eps;
        const double down = ppo_objective(m, batch, s).total;
        tp[k]->data()[i] = keep;
        worst = std::max(worst, oracle::relative_error((up - down) / (2 * eps), tg[k]->data()[i]));
      }
    }
    CHECK(worst <= 1e-3);
  }
}

TEST_CASE("updates keep probabilities valid and raise taken-action likelihood") {
  std::mt19937_64 rng(4);
  auto m = init_policy(3, 5, 1.0, 11);
  std::vector<Vector> emb;
  for (int t = 0; t < 5; ++t) emb.push_back(random_vector(3, rng));
  auto tr = rollout(m, emb, rng);
  tr.advantages.assign(tr.length(), 1.0);
  tr.returns.assign(tr.length(), 0.0);
  std::vector<Trajectory> batch{tr};
  PpoSettings s;
  s.entropy_coef = 0.0;
  s.epochs = 1;
  s.learning_rate = 1e-3;
  Adam opt(AdamSettings{.learning_rate = s.learning_rate});
  double prev = -1e9;
  for (int epoch = 0; epoch < 15; ++epoch) {
    double logp = 0.0;
    const auto out = policy_forward(m, emb);
    for (std::size_t t = 0; t < out.size(); ++t) {
      CHECK(out[t].probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(out[t].probs(0) > 0.0);
      CHECK(out[t].probs(0) < 1.0);
      logp += std::log(out[t].probs(tr.actions[t]));
    }
    const double ratio_sum = std::exp(logp - std::accumulate(tr.logprobs.begin(), tr.logprobs.end(), 0.0));
    if (ratio_sum > std::pow(1.0 + s.clip_eps, 5.0)) break;
    CHECK(logp >= prev - 1e-12);
    prev = logp;
    ppo_update(m, opt, batch, s);
  }
}

TEST_CASE("decisions are argmax of the forward pass") {
  std::mt19937_64 rng(5);
  const auto m = init_policy(3, 4, 1.0, 12);
  std::vector<Vector> emb;
  for (int t = 0; t < 6; ++t) emb.push_back(random_vector(3, rng));
  const auto out = policy_forward(m, emb);
  const auto d = policy_decisions(m, emb);
  for (std::size_t t = 0; t < d.size(); ++t) CHECK(d[t] == (out[t].probs(1) > out[t].probs(0) ? 1 : 0));
  CHECK(policy_decisions(m, emb) == d);
}

TEST_CASE("detector learns a separable pool deterministically") {
  const SeparablePool pool;
  const EmbeddingTable table(pool.g, pool.victim, 1.0);
  TrainSettings ts;
  ts.batch_size = 16;
  const auto a = train_detector(pool.train, pool.val, table, ts, 3);
  CHECK(a.best_val_f1 >= 0.95);
  const auto b = train_detector(pool.train, pool.val, table, ts, 3);
  CHECK(flatten(a.model.tensors()) == flatten(b.model.tensors()));
  CHECK(a.log.size() == b.log.size());

  std::vector<QuerySequence> single(pool.train.begin(), pool.train.end());
  for (auto& s : single) s.truth_label = 0;
  CHECK_THROWS_AS(train_detector(single, pool.val, table, ts, 3), PpoError);

  const auto path = std::filesystem::temp_directory_path() / "atom_policy_test.txt";
  save_policy(a.model, path, "seed=3");
  const auto back = load_policy(path);
  CHECK(flatten(back.tensors()) == flatten(a.model.tensors()));
  CHECK(back.lambda == a.model.lambda);
  std::filesystem::remove(path);
}
