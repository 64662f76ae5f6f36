#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ualign/units.hpp"
#include "ualign/world.hpp"

namespace ualign {

struct JudgeVerdict {
  int score = 0;  // 1..5
  std::string raw_response;
  std::chrono::milliseconds latency{0};
  std::string judge_id;
};

enum class JudgeFailureKind { transport, timeout, parse };

struct JudgeFailure {
  JudgeFailureKind kind = JudgeFailureKind::transport;
  std::string detail;
};

const char* judge_failure_name(JudgeFailureKind k);

using JudgeResult = std::variant<JudgeVerdict, JudgeFailure>;

// Semantic judge over transcripts. Implementations rate how likely and
// relevant a continuation is given its prompt, on a 1..5 scale.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeResult score(const std::string& prompt_text, const std::string& continuation_text) = 0;
  virtual std::string id() const = 0;
};

// Instruction template with [text_prompt] / [generated_transcription]
// placeholders, each required exactly once.
struct JudgeTemplate {
  std::string template_id;
  std::string instruction;
  std::string answer_phrase = "rate the score as";

  void validate() const;
  std::string render(const std::string& prompt_text, const std::string& continuation_text) const;
};

// Direct-rating template (single-step rating with a fixed output phrase).
JudgeTemplate rate_template();
// Analyze-then-rate template used for evaluation-time scoring.
JudgeTemplate analyze_then_rate_template();
JudgeTemplate judge_template_by_id(const std::string& template_id);

// First integer after the first occurrence of `answer_phrase`; nullopt when
// missing or outside 1..5. Total: never throws on arbitrary bytes.
std::optional<int> parse_judge_score(const std::string& response, const std::string& answer_phrase = "rate the score as");

// Strictly increasing score cut-points: mean log-probs at the 10/40/70/90
// percentiles of true continuations, so reference data scores roughly
// (10%, 30%, 30%, 20%, 10%) for 1..5.
struct OracleCutpoints {
  std::array<double, 4> c{};
};

struct OracleCalibration {
  int n_reference = 500;
  int prompt_target_len = 25;
  std::pair<int, int> len_range{50, 150};
};

// Mean hidden-chain log-prob of the continuation given the prompt, with a
// trailing eos (and anything after it) excluded. -inf off support.
double oracle_mean_log_prob(const World& world, const UnitSeq& prompt, const UnitSeq& continuation);

OracleCutpoints calibrate_oracle(const World& world, const OracleCalibration& cal, std::uint64_t seed);

int bucket_score(double mean_lp, const OracleCutpoints& cuts);

// Deterministic judge backed by the hidden generator.
JudgeVerdict oracle_judge(const World& world, const OracleCutpoints& cuts, const UnitSeq& prompt,
                          const UnitSeq& continuation);

// Judge-interface adapter: consumes transcripts, inverts them through the
// lexicon, and scores the reconstructed units. Unknown continuation words
// force the score floor, mirroring how ASR junk reads to a text judge.
class OracleJudge final : public Judge {
 public:
  OracleJudge(const World& world, OracleCutpoints cuts) : world_(&world), cuts_(cuts) {}

  JudgeResult score(const std::string& prompt_text, const std::string& continuation_text) override;
  std::string id() const override { return "oracle"; }
  const OracleCutpoints& cutpoints() const { return cuts_; }

 private:
  const World* world_;
  OracleCutpoints cuts_;
};

struct LlmJudgeConfig {
  std::string endpoint;  // http://host:port/path
  JudgeTemplate templ = rate_template();
  std::string auth_token;          // sent as a bearer token when non-empty
  int timeout_ms = 30000;
  int max_attempts = 3;            // per request, covering transport/timeout/parse
  int backoff_ms = 100;            // doubled per retry
  int max_in_flight = 4;           // bounded concurrency for batch scoring
  std::string persist_path;        // verdicts.jsonl audit log, empty = off
};

// Reads UALIGN_JUDGE_ENDPOINT / UALIGN_JUDGE_TOKEN when set.
LlmJudgeConfig llm_judge_config_from_env();

// One rendered-instruction POST per attempt; distinct, retryable failure
// kinds for transport, timeout, and parse errors.
JudgeResult llm_judge(const LlmJudgeConfig& cfg, const std::string& prompt_text,
                      const std::string& continuation_text);

class LlmJudge final : public Judge {
 public:
  explicit LlmJudge(LlmJudgeConfig cfg) : cfg_(std::move(cfg)) { cfg_.templ.validate(); }

  JudgeResult score(const std::string& prompt_text, const std::string& continuation_text) override {
    return llm_judge(cfg_, prompt_text, continuation_text);
  }
  std::string id() const override { return "llm:" + cfg_.templ.template_id; }
  const LlmJudgeConfig& config() const { return cfg_; }

 private:
  LlmJudgeConfig cfg_;
};

// Scores items with at most max_in_flight concurrent judge calls; the
// result order matches the input order regardless of scheduling.
std::vector<JudgeResult> score_batch(Judge& judge,
                                     const std::vector<std::pair<std::string, std::string>>& items,
                                     int max_in_flight = 4);

}  // namespace ualign
