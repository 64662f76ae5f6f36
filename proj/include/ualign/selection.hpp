#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "ualign/candidate.hpp"
#include "ualign/judge.hpp"
#include "ualign/model.hpp"
#include "ualign/rng.hpp"
#include "ualign/sampler.hpp"
#include "ualign/units.hpp"
#include "ualign/world.hpp"

namespace ualign {

struct SelectionThresholds {
  double delta = 0.1;  // auto-BLEU ceiling for chosen candidates
  int s_c = 3;         // minimum judge score of a chosen candidate
  int s_r = 1;         // maximum judge score of a rejected candidate

  void validate() const;
};

struct PairSideMeta {
  double auto_bleu = 0.0;
  std::optional<double> ppl;
  std::optional<int> judge;
};

struct PreferencePair {
  UnitSeq prompt;
  UnitSeq chosen;
  UnitSeq rejected;
  std::string selector;  // "ppl" or "score"
  SelectionThresholds thresholds;
  PairSideMeta chosen_meta;
  PairSideMeta rejected_meta;
};

enum class SelectReject { no_eligible_chosen, no_eligible_rejected, chosen_equals_rejected, all_filtered };

const char* select_reject_name(SelectReject r);

using SelectResult = std::variant<PreferencePair, SelectReject>;

// Perplexity rule: chosen = lowest-PPL candidate whose auto-BLEU passes the
// threshold; rejected = highest-PPL candidate overall. Extremes tie-break
// uniformly at random.
SelectResult select_by_ppl(const UnitSeq& prompt, const std::vector<Candidate>& candidates,
                           const SelectionThresholds& thresholds, Rng& rng);

// Judge-score rule: chosen uniform among top-scoring candidates with
// s >= s_c and auto-BLEU <= delta; rejected uniform among the worst of
// {s <= s_r or auto-BLEU > delta}, with auto-BLEU violators outranking
// score-based rejects at equal score.
SelectResult select_by_score(const UnitSeq& prompt, const std::vector<Candidate>& candidates,
                             const SelectionThresholds& thresholds, Rng& rng);

struct YieldStats {
  int prompts_in = 0;
  int pairs_out = 0;
  std::map<std::string, int> reject_reasons;
  int judge_failures = 0;  // candidates whose judge call failed

  void count_reject(SelectReject r) { ++reject_reasons[select_reject_name(r)]; }
};

enum class Selector { ppl, score };

Selector selector_from_string(const std::string& name);
const char* selector_name(Selector s);

// Prompts with their true continuations, produced by segmenting a corpus.
struct PromptSet {
  std::vector<std::string> ids;
  std::vector<UnitSeq> prompts;
  std::vector<UnitSeq> references;
  std::map<std::string, int> segment_rejects;
};

PromptSet segment_corpus(const Corpus& corpus, int target_len, const Vocabulary& vocab);

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;
  YieldStats stats;
};

// Observer for the scored candidate lists, called once per prompt before
// selection (used to dump candidates.jsonl / scores.jsonl).
using ScoredSink = std::function<void(std::size_t prompt_index, const std::vector<Candidate>&)>;

// Full per-prompt pipeline: sample N continuations, transcribe, score,
// select. Deterministic given the seed and a deterministic judge. Judge
// failures are counted; a prompt whose candidates lack the scores needed
// by the selector yields no pair.
PreferenceDataset build_preference_dataset(const PolicyModel& model, const PromptSet& prompts, const World& world,
                                           const SamplingConfig& sampling, Judge* judge,
                                           const SelectionThresholds& thresholds, Selector selector,
                                           std::uint64_t seed, const ScoredSink& on_scored = {});

void save_preference_dataset(const PreferenceDataset& ds, const std::string& pairs_path,
                             const std::string& yield_path);
std::vector<PreferencePair> load_preference_pairs(const std::string& pairs_path);

}  // namespace ualign
