#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ualign/judge.hpp"
#include "ualign/model.hpp"
#include "ualign/sampler.hpp"
#include "ualign/selection.hpp"
#include "ualign/serde.hpp"
#include "ualign/trainer.hpp"
#include "ualign/world.hpp"

namespace ualign {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StageError : std::runtime_error {
  StageError(std::string stage_name, const std::string& what)
      : std::runtime_error(stage_name + ": " + what), stage(std::move(stage_name)) {}
  std::string stage;
};

struct JudgeEndpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct JudgeConfig {
  std::string kind = "oracle";  // "oracle" or "http"
  int n_reference = 500;
  std::string endpoint;         // http judge only; env UALIGN_JUDGE_ENDPOINT overrides when set
  std::string template_id = "rate-direct";
  int timeout_ms = 30000;
  int max_attempts = 3;
  int max_in_flight = 4;
};

struct EvalSuiteConfig {
  int n_eval_prompts = 200;
  int n_paired = 500;
  int n_story = 500;
  int story_ending_len = 12;
};

struct RunConfig {
  std::uint64_t seed = 7;
  WorldConfig world;
  int corpus_n = 2000;
  std::array<int, 2> corpus_len_range{52, 150};
  int prompt_target_len = 25;
  int n_train_prompts = 500;
  PretrainConfig pretrain;
  SamplingConfig sampling;
  SelectionThresholds thresholds;
  std::string selector = "score";
  DpoConfig dpo;
  std::vector<std::array<int, 2>> curriculum;  // (s_r, s_c) per iteration; empty = one round at `thresholds`
  bool rebase_reference = false;
  JudgeConfig judge;
  EvalSuiteConfig eval;
  std::string out_dir = "runs/default";

  void validate() const;  // throws ConfigError
  CurriculumSchedule schedule() const;
};

json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const json& j);
RunConfig load_run_config(const std::string& path);

struct RunResult {
  std::string dir;
  bool ok = true;
  std::string failed_stage;
};

// world -> pretrain -> calibrate judge -> preference data -> DPO
// (curriculum) -> eval, with every artifact written under cfg.out_dir.
// Metrics files are byte-stable across identical runs; wall-clock data
// lives only in the manifest.
RunResult run_pipeline(const RunConfig& cfg, bool dry_run = false);

// metrics.csv and score-histogram CSV from a finished run directory.
void emit_report(const std::string& run_dir);

}  // namespace ualign
