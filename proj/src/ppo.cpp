#include "atom/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "atom/adam.hpp"

namespace atom {

RewardConfig::RewardConfig(double tp, double tn, double fp, double fn, double bias, double threshold,
                           std::size_t window_size)
    : w_tp(tp), w_tn(tn), w_fp(fp), w_fn(fn), p_bias(bias), bias_fraction_threshold(threshold),
      window(window_size) {
  validate();
}

void RewardConfig::validate() const {
  if (!(w_tp > 0 && w_tn > 0 && w_fp > 0 && w_fn > 0 && p_bias > 0)) {
    throw PpoError("reward weights must be positive");
  }
  if (!(p_bias > w_fn && w_fn > std::max({w_tp, w_tn, w_fp}))) {
    throw PpoError("reward weights must satisfy p_bias > w_fn > max(w_tp, w_tn, w_fp)");
  }
  if (!(bias_fraction_threshold > 0.5 && bias_fraction_threshold <= 1.0)) {
    throw PpoError("bias fraction threshold must lie in (0.5, 1]");
  }
  if (window == 0) throw PpoError("bias window must be non-empty");
}

double compute_reward(int action, int truth, double batch_action_fraction, const RewardConfig& cfg) {
  cfg.validate();
  if (batch_action_fraction > cfg.bias_fraction_threshold) return -cfg.p_bias;
  if (action == 1 && truth == 1) return cfg.w_tp;
  if (action == 0 && truth == 0) return cfg.w_tn;
  if (action == 0 && truth == 1) return -cfg.w_fn;
  return -cfg.w_fp;
}

void BiasWindow::push(int action) {
  actions_.push_back(action);
  ones_ += action == 1;
  if (actions_.size() > size_) {
    ones_ -= actions_.front() == 1;
    actions_.pop_front();
  }
}

double BiasWindow::majority_fraction() const {
  if (actions_.size() < size_) return 0.0;
  const double ones = static_cast<double>(ones_) / static_cast<double>(actions_.size());
  return std::max(ones, 1.0 - ones);
}

std::vector<Matrix*> PolicyValueHeads::tensors() { return {&Wpi, &bpi, &Wv, &bv}; }
std::vector<const Matrix*> PolicyValueHeads::tensors() const { return {&Wpi, &bpi, &Wv, &bv}; }

PolicyValueHeads init_heads(std::size_t hidden_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto H = static_cast<Eigen::Index>(hidden_dim);
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  std::uniform_real_distribution<double> dist(-k, k);
  PolicyValueHeads h;
  h.Wpi.resize(2, H);
  h.Wv.resize(1, H);
  for (Eigen::Index i = 0; i < h.Wpi.size(); ++i) h.Wpi.data()[i] = dist(rng);
  for (Eigen::Index i = 0; i < h.Wv.size(); ++i) h.Wv.data()[i] = dist(rng);
  h.bpi = Matrix::Zero(2, 1);
  h.bv = Matrix::Zero(1, 1);
  return h;
}

std::vector<Matrix*> PolicyModel::tensors() {
  auto t = detector.tensors();
  for (Matrix* m : heads.tensors()) t.push_back(m);
  return t;
}

std::vector<const Matrix*> PolicyModel::tensors() const {
  auto t = detector.tensors();
  for (const Matrix* m : heads.tensors()) t.push_back(m);
  return t;
}

PolicyModel PolicyModel::zeros_like() const {
  PolicyModel z = *this;
  for (Matrix* m : z.tensors()) m->setZero();
  return z;
}

PolicyModel init_policy(std::size_t input_dim, std::size_t hidden_dim, double lambda, std::uint64_t seed,
                        DetectorFlags flags) {
  PolicyModel m;
  m.detector = init_detector(input_dim, hidden_dim, seed, flags);
  m.heads = init_heads(hidden_dim, seed ^ 0x9e3779b97f4a7c15ULL);
  m.lambda = lambda;
  return m;
}

Eigen::VectorXd flatten(std::span<const Matrix* const> tensors) {
  Eigen::Index total = 0;
  for (const Matrix* t : tensors) total += t->size();
  Eigen::VectorXd flat(total);
  Eigen::Index offset = 0;
  for (const Matrix* t : tensors) {
    flat.segment(offset, t->size()) = t->reshaped();
    offset += t->size();
  }
  return flat;
}

void unflatten(const Eigen::VectorXd& flat, std::span<Matrix* const> tensors) {
  Eigen::Index offset = 0;
  for (Matrix* t : tensors) {
    t->reshaped() = flat.segment(offset, t->size());
    offset += t->size();
  }
  if (offset != flat.size()) throw PpoError("flat parameter vector has the wrong length");
}

namespace {

Vector softmax2(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector p = (logits.array() - mx).exp().matrix();
  return p / p.sum();
}

struct Unrolled {
  std::vector<StepCache> caches;
  std::vector<Vector> hidden;
  std::vector<Vector> probs;
  std::vector<double> values;
};

Unrolled unroll(const PolicyModel& model, std::span<const Vector> embeddings, bool keep_cache) {
  if (embeddings.empty()) throw PpoError("cannot evaluate an empty sequence");
  Unrolled u;
  const std::size_t T = embeddings.size();
  if (keep_cache) u.caches.resize(T);
  u.hidden.reserve(T);
  u.probs.reserve(T);
  u.values.reserve(T);
  DetectorState state = initial_state(model.detector);
  for (std::size_t t = 0; t < T; ++t) {
    state = fused_step(model.detector, state, embeddings[t], keep_cache ? &u.caches[t] : nullptr);
    const Vector logits = model.heads.Wpi * state.hidden + model.heads.bpi;
    const Vector p = softmax2(logits);
    u.values.push_back((model.heads.Wv * state.hidden)(0, 0) + model.heads.bv(0, 0));
    u.hidden.push_back(state.hidden);
    u.probs.push_back(p);
    state.prev_action_probs = p;
  }
  return u;
}

}  // namespace

std::vector<StepOutput> policy_forward(const PolicyModel& model, std::span<const Vector> embeddings) {
  const Unrolled u = unroll(model, embeddings, false);
  std::vector<StepOutput> out(u.probs.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t].probs = u.probs[t];
    out[t].value = u.values[t];
  }
  return out;
}

std::vector<int> policy_decisions(const PolicyModel& model, std::span<const Vector> embeddings) {
  const Unrolled u = unroll(model, embeddings, false);
  std::vector<int> d;
  d.reserve(u.probs.size());
  for (const Vector& p : u.probs) d.push_back(p(1) > p(0) ? 1 : 0);
  return d;
}

void gae_advantages(Trajectory& traj, double gamma, double lambda_gae, double bootstrap_value) {
  const std::size_t T = traj.rewards.size();
  if (T == 0) throw PpoError("empty trajectory");
  if (traj.values.size() != T) throw PpoError("trajectory rewards and values differ in length");
  traj.advantages.assign(T, 0.0);
  traj.returns.assign(T, 0.0);
  double next_value = bootstrap_value;
  double running = 0.0;
  for (std::size_t i = T; i-- > 0;) {
    const double delta = traj.rewards[i] + gamma * next_value - traj.values[i];
    running = delta + gamma * lambda_gae * running;
    traj.advantages[i] = running;
    traj.returns[i] = running + traj.values[i];
    next_value = traj.values[i];
  }
  for (double a : traj.advantages) {
    if (!std::isfinite(a)) throw PpoError("non-finite advantage");
  }
}

void normalize_advantages(std::span<Trajectory> batch) {
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& t : batch)
    for (double a : t.advantages) sum += a, sq += a * a, ++n;
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  const double sd = std::sqrt(var);
  for (auto& t : batch)
    for (double& a : t.advantages) a = (a - mean) / (sd + 1e-8);
}

PpoLoss ppo_objective(const PolicyModel& model, std::span<const Trajectory> batch, const PpoSettings& s,
                      PolicyModel* grads) {
  std::size_t total_steps = 0;
  for (const auto& t : batch) total_steps += t.length();
  if (total_steps == 0) throw PpoError("empty PPO batch");
  const double inv_n = 1.0 / static_cast<double>(total_steps);
  PpoLoss loss;
  const auto& heads = model.heads;

  for (const auto& traj : batch) {
    const std::size_t T = traj.length();
    if (traj.embeddings.size() != T || traj.logprobs.size() != T || traj.advantages.size() != T ||
        traj.returns.size() != T) {
      throw PpoError("inconsistent trajectory lengths");
    }
    const Unrolled u = unroll(model, traj.embeddings, grads != nullptr);
    std::vector<Vector> d_logits(T);
    std::vector<double> d_value(T);
    for (std::size_t t = 0; t < T; ++t) {
      const Vector& p = u.probs[t];
      const int a = traj.actions[t];
      const double logp = std::log(p(a));
      const double ratio = std::exp(logp - traj.logprobs[t]);
      const double adv = traj.advantages[t];
      const double clipped = std::clamp(ratio, 1.0 - s.clip_eps, 1.0 + s.clip_eps);
      const bool unclipped_active = ratio * adv <= clipped * adv;
      loss.policy -= std::min(ratio * adv, clipped * adv) * inv_n;
      const double entropy = -(p.array() * p.array().log()).sum();
      loss.entropy += entropy * inv_n;
      const double err = u.values[t] - traj.returns[t];
      loss.value += err * err * inv_n;

      if (grads) {
        Vector dl = Vector::Zero(2);
        if (unclipped_active) {
          Vector dlogp = -p;
          dlogp(a) += 1.0;
          dl += (-ratio * adv * inv_n) * dlogp;
        }
        // dH/dlogit_j = -p_j (log p_j + H)
        const Vector dH = -(p.array() * (p.array().log() + entropy)).matrix();
        dl += (-s.entropy_coef * inv_n) * dH;
        d_logits[t] = dl;
        d_value[t] = 2.0 * s.value_coef * err * inv_n;
      }
    }
    if (!grads) continue;

    Vector carry_h = Vector::Zero(static_cast<Eigen::Index>(model.detector.hidden_dim()));
    Vector carry_p = Vector::Zero(2);
    for (std::size_t t = T; t-- > 0;) {
      const Vector& p = u.probs[t];
      // softmax Jacobian is symmetric: diag(p) - p pᵀ
      const Vector from_next = p.cwiseProduct(carry_p) - p * p.dot(carry_p);
      const Vector dl = d_logits[t] + from_next;
      const Vector& h = u.hidden[t];
      grads->heads.Wpi += dl * h.transpose();
      grads->heads.bpi += dl;
      grads->heads.Wv += d_value[t] * h.transpose();
      grads->heads.bv(0, 0) += d_value[t];
      const Vector dh = heads.Wpi.transpose() * dl + heads.Wv.transpose() * d_value[t] + carry_h;
      const StepGradients sg = fused_step_backward(model.detector, u.caches[t], dh, grads->detector);
      carry_h = sg.prev_hidden;
      carry_p = sg.prev_probs;
    }
  }
  loss.total = loss.policy + s.value_coef * loss.value - s.entropy_coef * loss.entropy;
  if (!std::isfinite(loss.total)) throw PpoError("non-finite PPO loss");
  return loss;
}

PpoUpdateResult ppo_update(PolicyModel& model, Adam& optimizer, std::span<const Trajectory> batch,
                           const PpoSettings& s) {
  PpoUpdateResult result;
  Eigen::VectorXd params = flatten(model.tensors());
  for (std::size_t epoch = 0; epoch < s.epochs; ++epoch) {
    PolicyModel grads = model.zeros_like();
    const PpoLoss loss = ppo_objective(model, batch, s, &grads);
    if (epoch == 0) result.first = loss;
    result.last = loss;
    Eigen::VectorXd g = flatten(grads.tensors());
    if (!g.allFinite()) throw PpoError("non-finite gradient in update epoch " + std::to_string(epoch));
    const double norm = g.norm();
    if (s.max_grad_norm > 0.0 && norm > s.max_grad_norm) g *= s.max_grad_norm / norm;
    optimizer.step(params, g);
    unflatten(params, model.tensors());
  }
  return result;
}

double f1_score(std::span<const int> predictions, std::span<const int> truths) {
  if (predictions.size() != truths.size()) throw PpoError("prediction and truth lengths differ");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    tp += predictions[i] == 1 && truths[i] == 1;
    fp += predictions[i] == 1 && truths[i] == 0;
    fn += predictions[i] == 0 && truths[i] == 1;
  }
  const double denom = 2 * tp + fp + fn;
  return denom > 0 ? 2 * tp / denom : 0.0;
}

namespace {

double validation_f1(const PolicyModel& model, std::span<const QuerySequence> validation,
                     const EmbeddingTable& table) {
  std::vector<int> pred;
  std::vector<int> truth;
  for (const auto& seq : validation) {
    const auto nodes = seq.nodes();
    pred.push_back(policy_decisions(model, table.sequence(nodes)).back());
    truth.push_back(seq.truth_label);
  }
  return f1_score(pred, truth);
}

}  // namespace

TrainedDetector train_detector(std::span<const QuerySequence> train, std::span<const QuerySequence> validation,
                               const EmbeddingTable& table, const TrainSettings& settings, std::uint64_t seed) {
  settings.reward.validate();
  bool has0 = false;
  bool has1 = false;
  for (const auto& s : train) (s.truth_label == 1 ? has1 : has0) = true;
  if (!has0 || !has1) throw PpoError("training pool must contain both labels");
  if (settings.batch_size == 0 || settings.eval_every == 0) throw PpoError("batch size and eval interval must be positive");

  std::mt19937_64 rng(seed);
  TrainedDetector out;
  out.model = init_policy(table.dim(), settings.hidden_dim, table.lambda(), seed, settings.flags);
  out.best_val_f1 = -1.0;
  PolicyModel best = out.model;
  Adam optimizer(AdamSettings{.learning_rate = settings.ppo.learning_rate});
  BiasWindow window(settings.reward.window);

  std::vector<std::vector<Vector>> embedded(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto nodes = train[i].nodes();
    embedded[i] = table.sequence(nodes);
  }
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min(settings.batch_size, train.size());
  std::size_t stale = 0;

  for (std::size_t episode = 0; episode < settings.episodes; ++episode) {
    for (std::size_t i = 0; i < batch; ++i) {
      std::swap(order[i], order[std::uniform_int_distribution<std::size_t>(i, order.size() - 1)(rng)]);
    }
    std::vector<Trajectory> trajs(batch);
    std::size_t longest = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t idx = order[b];
      Trajectory& tr = trajs[b];
      tr.embeddings = embedded[idx];
      tr.truth = train[idx].truth_label;
      const auto steps = policy_forward(out.model, tr.embeddings);
      for (const auto& st : steps) {
        const int a = std::bernoulli_distribution(st.probs(1))(rng) ? 1 : 0;
        tr.actions.push_back(a);
        tr.logprobs.push_back(std::log(st.probs(a)));
        tr.values.push_back(st.value);
      }
      tr.rewards.assign(tr.length(), 0.0);
      longest = std::max(longest, tr.length());
    }
    double reward_sum = 0.0;
    std::size_t reward_count = 0;
    for (std::size_t t = 0; t < longest; ++t) {
      for (auto& tr : trajs) {
        if (t >= tr.length()) continue;
        window.push(tr.actions[t]);
        tr.rewards[t] = compute_reward(tr.actions[t], tr.truth, window.majority_fraction(), settings.reward);
        reward_sum += tr.rewards[t];
        ++reward_count;
      }
    }
    for (auto& tr : trajs) gae_advantages(tr, settings.ppo.gamma, settings.ppo.lambda_gae);
    normalize_advantages(trajs);
    const auto update = ppo_update(out.model, optimizer, trajs, settings.ppo);

    TrainLogRow row;
    row.episode = episode;
    row.mean_reward = reward_sum / static_cast<double>(reward_count);
    row.policy_loss = update.last.policy;
    row.value_loss = update.last.value;
    row.entropy = update.last.entropy;
    if ((episode + 1) % settings.eval_every == 0 || episode + 1 == settings.episodes) {
      row.val_f1 = validation.empty() ? 0.0 : validation_f1(out.model, validation, table);
      if (row.val_f1 > out.best_val_f1) {
        out.best_val_f1 = row.val_f1;
        out.best_episode = episode;
        best = out.model;
        stale = 0;
      } else {
        ++stale;
      }
    }
    out.log.push_back(row);
    if (settings.patience > 0 && stale >= settings.patience) break;
  }
  out.model = best;
  return out;
}

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PpoError("cannot write " + path.string());
  out << "episode,mean_reward,policy_loss,value_loss,entropy,val_f1\n";
  out << std::fixed << std::setprecision(6);
  for (const auto& r : log) {
    out << r.episode << ',' << r.mean_reward << ',' << r.policy_loss << ',' << r.value_loss << ',' << r.entropy
        << ',';
    if (r.val_f1 >= 0.0) out << r.val_f1;
    out << '\n';
  }
}

namespace {
constexpr const char* kDetectorMagic = "ATOMdetv1";
}

void save_policy(const PolicyModel& model, const std::filesystem::path& path, const std::string& stamp) {
  std::ofstream out(path);
  if (!out) throw PpoError("cannot write " + path.string());
  out << kDetectorMagic << '\n';
  if (!stamp.empty()) out << "stamp " << stamp << '\n';
  out << model.detector.input_dim() << ' ' << model.detector.hidden_dim() << '\n';
  out << "flags " << model.detector.flags.standard_gru << ' ' << model.detector.flags.no_mapping_matrix << '\n';
  out << std::setprecision(17) << "lambda " << model.lambda << '\n';
  write_tensors(out, model.tensors());
}

PolicyModel load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PpoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kDetectorMagic) throw PpoError(path.string() + ": missing ATOMdetv1 magic");
  std::getline(in, line);
  if (line.rfind("stamp ", 0) == 0) std::getline(in, line);
  std::size_t input = 0, hidden = 0;
  if (!(std::istringstream(line) >> input >> hidden)) throw PpoError(path.string() + ": bad dims header");
  std::string tag;
  PolicyModel m;
  if (!(in >> tag >> m.detector.flags.standard_gru >> m.detector.flags.no_mapping_matrix) || tag != "flags") {
    throw PpoError(path.string() + ": bad flags line");
  }
  if (!(in >> tag >> m.lambda) || tag != "lambda") throw PpoError(path.string() + ": bad lambda line");
  read_tensors(in, m.tensors());
  if (m.detector.input_dim() != input || m.detector.hidden_dim() != hidden) {
    throw PpoError(path.string() + ": tensor shapes disagree with header");
  }
  return m;
}

}  // namespace atom
