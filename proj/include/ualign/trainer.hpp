#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ualign/judge.hpp"
#include "ualign/model.hpp"
#include "ualign/selection.hpp"
#include "ualign/serde.hpp"

namespace ualign {

struct DpoConfig {
  double beta = 0.1;
  int batch_size = 64;
  double peak_lr = 1e-2;
  int warmup_steps = 50;
  int total_steps = 2000;
  std::uint64_t seed = 0;
  bool use_adam = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int eval_every = 100;  // dev reward-accuracy cadence for checkpoint selection
  double dev_fraction = 0.1;

  // Tabular-scale defaults (the values above).
  static DpoConfig desk();
  // Large-model schedule: batch 512, peak 1e-6, 500 warmup steps over 100k.
  static DpoConfig paper();

  void validate() const;
};

// Linear warmup to peak_lr, then linear decay to 0 at the final step.
double lr_at_step(const DpoConfig& cfg, int step);

// -log sigmoid(beta * [(log pi(y_c|x) - log ref(y_c|x)) - (log pi(y_r|x) - log ref(y_r|x))]).
double dpo_loss(const PolicyModel& policy, const PolicyModel& reference, const PreferencePair& pair, double beta);

// beta * (log pi(y|x) - log ref(y|x)).
double implicit_reward(const PolicyModel& policy, const PolicyModel& reference, const UnitSeq& prompt,
                       const UnitSeq& continuation, double beta);

// Fraction of pairs whose chosen side earns the strictly larger implicit
// reward; ties count as incorrect.
double reward_accuracy(const PolicyModel& policy, const PolicyModel& reference,
                       std::span<const PreferencePair> pairs, double beta);

struct BatchGrad {
  double loss = 0.0;
  double reward_acc = 0.0;
  AdapterGrad grad;
};

// Mean DPO loss and its exact adapter gradient over a batch.
BatchGrad dpo_batch_gradient(const PolicyModel& policy, const PolicyModel& reference,
                             std::span<const PreferencePair> batch, double beta);

struct TrainHistory {
  std::vector<int> step;
  std::vector<double> loss;
  std::vector<double> reward_acc;
  std::vector<double> lr;
  std::vector<double> grad_norm;
};

void save_history_csv(const TrainHistory& h, const std::string& path);

struct TrainResult {
  PolicyModel policy;
  TrainHistory history;
  int best_step = 0;
  double best_dev_accuracy = 0.0;
};

// Mini-batch first-order optimization of the adapter against a frozen
// reference. Returns the checkpoint with the highest dev reward accuracy
// (ties resolve to the later step). Aborts if the loss turns non-finite.
TrainResult train_dpo(const PolicyModel& policy, const PolicyModel& reference,
                      const std::vector<PreferencePair>& dataset, const DpoConfig& cfg,
                      const std::vector<PreferencePair>& dev_pairs);

using CurriculumSchedule = std::vector<SelectionThresholds>;

// s_c and s_r must be non-decreasing across stages, each stage valid.
void validate_schedule(const CurriculumSchedule& schedule);

struct CurriculumIteration {
  SelectionThresholds thresholds;
  YieldStats yield;
  std::vector<PreferencePair> pairs;
  TrainHistory history;
  int best_step = 0;
  double dev_reward_accuracy = 0.0;
  PolicyModel policy;
  json eval;  // evaluator output for this iteration's policy
};

struct CurriculumResult {
  std::vector<CurriculumIteration> iterations;
  bool completed = true;
  std::string stop_reason;
};

using PolicyEvaluator = std::function<json(const PolicyModel&)>;

// Iteration i regenerates preference data from the previous policy under
// schedule[i], then trains with DPO. The frozen reference stays the original
// base policy unless rebase_reference is set; the adapter carries over
// between iterations. Stops with partial results when an iteration yields
// no pairs.
CurriculumResult run_curriculum(const PolicyModel& base_policy, const PromptSet& prompts, const World& world,
                                const CurriculumSchedule& schedule, const SamplingConfig& sampling, Judge& judge,
                                const DpoConfig& dpo, Selector selector, std::uint64_t seed,
                                const PolicyEvaluator& evaluator = {}, bool rebase_reference = false);

}  // namespace ualign
