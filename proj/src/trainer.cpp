#include "ualign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ualign/serde.hpp"

namespace ualign {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double pair_margin(const PolicyModel& policy, const PreferencePair& pair, double beta, double ref_chosen,
                   double ref_rejected) {
  const double lp_c = log_prob(policy, pair.prompt, pair.chosen);
  const double lp_r = log_prob(policy, pair.prompt, pair.rejected);
  return beta * ((lp_c - ref_chosen) - (lp_r - ref_rejected));
}

struct RefCache {
  std::vector<double> chosen;
  std::vector<double> rejected;
};

RefCache cache_reference(const PolicyModel& reference, std::span<const PreferencePair> pairs) {
  RefCache cache;
  cache.chosen.reserve(pairs.size());
  cache.rejected.reserve(pairs.size());
  for (const auto& p : pairs) {
    cache.chosen.push_back(log_prob(reference, p.prompt, p.chosen));
    cache.rejected.push_back(log_prob(reference, p.prompt, p.rejected));
  }
  return cache;
}

BatchGrad batch_gradient_cached(const PolicyModel& policy, std::span<const PreferencePair> batch, double beta,
                                std::span<const double> ref_chosen, std::span<const double> ref_rejected) {
  BatchGrad out;
  out.grad = AdapterGrad::zero(policy);
  if (batch.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  int correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& pair = batch[i];
    const double h = pair_margin(policy, pair, beta, ref_chosen[i], ref_rejected[i]);
    out.loss += softplus(-h) * inv_n;
    if (h > 0.0) ++correct;
    const double w = sigmoid(-h) * beta * inv_n;  // d mean-loss / d h = -sigmoid(-h)/n
    accumulate_log_prob_grad(policy, pair.prompt, pair.chosen, -w, out.grad);
    accumulate_log_prob_grad(policy, pair.prompt, pair.rejected, w, out.grad);
  }
  out.reward_acc = static_cast<double>(correct) / static_cast<double>(batch.size());
  return out;
}

}  // namespace

DpoConfig DpoConfig::desk() { return DpoConfig{}; }

DpoConfig DpoConfig::paper() {
  DpoConfig cfg;
  cfg.batch_size = 512;
  cfg.peak_lr = 1e-6;
  cfg.warmup_steps = 500;
  cfg.total_steps = 100000;
  return cfg;
}

void DpoConfig::validate() const {
  if (beta <= 0.0) throw std::invalid_argument("beta must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (peak_lr <= 0.0) throw std::invalid_argument("peak_lr must be positive");
  if (warmup_steps < 0) throw std::invalid_argument("warmup_steps must be non-negative");
  if (total_steps > 0 && warmup_steps >= total_steps)
    throw std::invalid_argument("warmup_steps must be smaller than total_steps");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be positive");
  if (dev_fraction < 0.0 || dev_fraction >= 1.0) throw std::invalid_argument("dev_fraction must lie in [0,1)");
}

double lr_at_step(const DpoConfig& cfg, int step) {
  if (step < 0 || step >= cfg.total_steps) return 0.0;
  if (step < cfg.warmup_steps)
    return cfg.peak_lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  const int denom = cfg.total_steps - std::max(cfg.warmup_steps, 1);
  if (denom <= 0) return 0.0;
  return cfg.peak_lr * static_cast<double>(cfg.total_steps - 1 - step) / static_cast<double>(denom);
}

double dpo_loss(const PolicyModel& policy, const PolicyModel& reference, const PreferencePair& pair, double beta) {
  const double ref_c = log_prob(reference, pair.prompt, pair.chosen);
  const double ref_r = log_prob(reference, pair.prompt, pair.rejected);
  return softplus(-pair_margin(policy, pair, beta, ref_c, ref_r));
}

double implicit_reward(const PolicyModel& policy, const PolicyModel& reference, const UnitSeq& prompt,
                       const UnitSeq& continuation, double beta) {
  return beta * (log_prob(policy, prompt, continuation) - log_prob(reference, prompt, continuation));
}

double reward_accuracy(const PolicyModel& policy, const PolicyModel& reference,
                       std::span<const PreferencePair> pairs, double beta) {
  if (pairs.empty()) throw std::invalid_argument("reward_accuracy needs at least one pair");
  int correct = 0;
  for (const auto& p : pairs) {
    const double rc = implicit_reward(policy, reference, p.prompt, p.chosen, beta);
    const double rr = implicit_reward(policy, reference, p.prompt, p.rejected, beta);
    if (rc > rr) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

BatchGrad dpo_batch_gradient(const PolicyModel& policy, const PolicyModel& reference,
                             std::span<const PreferencePair> batch, double beta) {
  const RefCache cache = cache_reference(reference, batch);
  return batch_gradient_cached(policy, batch, beta, cache.chosen, cache.rejected);
}

void save_history_csv(const TrainHistory& h, const std::string& path) {
  std::string out = "step,loss,reward_acc,lr,grad_norm\n";
  char buf[256];
  for (std::size_t i = 0; i < h.step.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", h.step[i], h.loss[i], h.reward_acc[i], h.lr[i],
                  h.grad_norm[i]);
    out += buf;
  }
  write_text_file(path, out);
}

TrainResult train_dpo(const PolicyModel& policy, const PolicyModel& reference,
                      const std::vector<PreferencePair>& dataset, const DpoConfig& cfg,
                      const std::vector<PreferencePair>& dev_pairs) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("cannot train on an empty preference dataset");

  TrainResult result;
  result.policy = policy;
  if (cfg.total_steps == 0) {
    if (!dev_pairs.empty())
      result.best_dev_accuracy = reward_accuracy(result.policy, reference, dev_pairs, cfg.beta);
    return result;
  }

  const RefCache train_cache = cache_reference(reference, dataset);

  Eigen::MatrixXd best_a = result.policy.adapter_a;
  Eigen::MatrixXd best_b = result.policy.adapter_b;
  double best_acc = -1.0;
  int best_step = 0;

  // Adam state, used only when cfg.use_adam.
  Eigen::MatrixXd ma, va, mb, vb;
  if (cfg.use_adam) {
    ma = Eigen::MatrixXd::Zero(result.policy.adapter_a.rows(), result.policy.adapter_a.cols());
    va = ma;
    mb = Eigen::MatrixXd::Zero(result.policy.adapter_b.rows(), result.policy.adapter_b.cols());
    vb = mb;
  }

  Rng shuffle_rng = Rng::substream(cfg.seed, {0xd0});
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // forces a shuffle before the first batch

  std::vector<PreferencePair> batch;
  std::vector<double> batch_ref_c, batch_ref_r;
  const std::size_t batch_size = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), dataset.size());

  for (int step = 0; step < cfg.total_steps; ++step) {
    batch.clear();
    batch_ref_c.clear();
    batch_ref_r.clear();
    while (batch.size() < batch_size) {
      if (cursor >= order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      batch.push_back(dataset[idx]);
      batch_ref_c.push_back(train_cache.chosen[idx]);
      batch_ref_r.push_back(train_cache.rejected[idx]);
    }

    const BatchGrad bg = batch_gradient_cached(result.policy, batch, cfg.beta, batch_ref_c, batch_ref_r);
    if (!std::isfinite(bg.loss)) throw std::runtime_error("dpo loss diverged at step " + std::to_string(step));

    const double lr = lr_at_step(cfg, step);
    if (cfg.use_adam) {
      const double t = static_cast<double>(step + 1);
      const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
      const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
      ma = cfg.adam_beta1 * ma + (1.0 - cfg.adam_beta1) * bg.grad.da;
      va = cfg.adam_beta2 * va + (1.0 - cfg.adam_beta2) * bg.grad.da.cwiseProduct(bg.grad.da);
      mb = cfg.adam_beta1 * mb + (1.0 - cfg.adam_beta1) * bg.grad.db;
      vb = cfg.adam_beta2 * vb + (1.0 - cfg.adam_beta2) * bg.grad.db.cwiseProduct(bg.grad.db);
      result.policy.adapter_a -=
          lr * (ma / bc1).cwiseQuotient(((va / bc2).cwiseSqrt().array() + cfg.adam_eps).matrix());
      result.policy.adapter_b -=
          lr * (mb / bc1).cwiseQuotient(((vb / bc2).cwiseSqrt().array() + cfg.adam_eps).matrix());
    } else {
      result.policy.adapter_a -= lr * bg.grad.da;
      result.policy.adapter_b -= lr * bg.grad.db;
    }

    result.history.step.push_back(step);
    result.history.loss.push_back(bg.loss);
    result.history.reward_acc.push_back(bg.reward_acc);
    result.history.lr.push_back(lr);
    result.history.grad_norm.push_back(std::sqrt(bg.grad.squared_norm()));

    if (!dev_pairs.empty() && ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.total_steps)) {
      const double acc = reward_accuracy(result.policy, reference, dev_pairs, cfg.beta);
      if (acc >= best_acc) {  // >= resolves ties toward the later step
        best_acc = acc;
        best_step = step + 1;
        best_a = result.policy.adapter_a;
        best_b = result.policy.adapter_b;
      }
    }
  }

  if (!dev_pairs.empty()) {
    result.policy.adapter_a = std::move(best_a);
    result.policy.adapter_b = std::move(best_b);
    result.best_step = best_step;
    result.best_dev_accuracy = best_acc;
  } else {
    result.best_step = cfg.total_steps;
  }
  return result;
}

void validate_schedule(const CurriculumSchedule& schedule) {
  if (schedule.empty()) throw std::invalid_argument("curriculum schedule must be non-empty");
  for (const auto& stage : schedule) stage.validate();
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    if (schedule[i].s_c < schedule[i - 1].s_c || schedule[i].s_r < schedule[i - 1].s_r)
      throw std::invalid_argument("curriculum thresholds must be non-decreasing");
  }
}

CurriculumResult run_curriculum(const PolicyModel& base_policy, const PromptSet& prompts, const World& world,
                                const CurriculumSchedule& schedule, const SamplingConfig& sampling, Judge& judge,
                                const DpoConfig& dpo, Selector selector, std::uint64_t seed,
                                const PolicyEvaluator& evaluator, bool rebase_reference) {
  validate_schedule(schedule);
  dpo.validate();

  CurriculumResult result;
  PolicyModel policy = base_policy;
  PolicyModel reference = base_policy;

  for (std::size_t stage = 0; stage < schedule.size(); ++stage) {
    const std::uint64_t stage_seed = mix64(seed ^ (0xc0de + stage));
    PreferenceDataset ds =
        build_preference_dataset(policy, prompts, world, sampling, &judge, schedule[stage], selector, stage_seed);
    if (ds.pairs.empty()) {
      result.completed = false;
      result.stop_reason = "empty preference dataset at iteration " + std::to_string(stage + 1);
      return result;
    }

    // Deterministic train/dev split for checkpoint selection.
    std::vector<PreferencePair> train, dev;
    const int stride = dpo.dev_fraction > 0.0 ? std::max(2, static_cast<int>(1.0 / dpo.dev_fraction)) : 0;
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
      if (stride > 0 && static_cast<int>(i % static_cast<std::size_t>(stride)) == stride - 1)
        dev.push_back(ds.pairs[i]);
      else
        train.push_back(ds.pairs[i]);
    }
    if (train.empty()) std::swap(train, dev);
    std::vector<PreferencePair> kept_pairs = std::move(ds.pairs);

    if (rebase_reference) reference = policy;
    DpoConfig stage_cfg = dpo;
    stage_cfg.seed = mix64(dpo.seed ^ (0xd1ce + stage));
    TrainResult tr = train_dpo(policy, reference, train, stage_cfg, dev);
    policy = tr.policy;

    CurriculumIteration iter;
    iter.thresholds = schedule[stage];
    iter.yield = std::move(ds.stats);
    iter.pairs = std::move(kept_pairs);
    iter.history = std::move(tr.history);
    iter.best_step = tr.best_step;
    iter.dev_reward_accuracy = tr.best_dev_accuracy;
    iter.policy = policy;
    if (evaluator) iter.eval = evaluator(policy);
    result.iterations.push_back(std::move(iter));
  }
  return result;
}

}  // namespace ualign
