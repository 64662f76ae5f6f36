#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ualign/judge.hpp"
#include "ualign/model.hpp"
#include "ualign/sampler.hpp"
#include "ualign/selection.hpp"
#include "ualign/units.hpp"
#include "ualign/world.hpp"

namespace ualign {

enum class PairedKind { nonword, syntax };

struct PairedItem {
  UnitSeq positive;
  UnitSeq negative;
  PairedKind kind = PairedKind::nonword;
};

struct StoryItem {
  UnitSeq context;
  UnitSeq ending_true;
  UnitSeq ending_false;
};

// nonword: the negative corrupts one unit inside a lexicon word of a sampled
// carrier, producing an out-of-lexicon run. syntax: the negative swaps two
// adjacent words of the carrier.
std::vector<PairedItem> make_paired_suite(const World& world, int n_items, PairedKind kind, std::uint64_t seed);

// Contexts with their true continuations as the true ending; false endings
// are the true endings shuffled across items (a derangement), truncated to
// ending_len units.
std::vector<StoryItem> make_story_suite(const World& world, int n_items, std::uint64_t seed,
                                        int context_target_len = 25, int ending_len = 12);

// Scores a (prompt, sequence) pair by mean log-probability; prompts may be
// empty for unconditional scoring.
using SequenceScorer = std::function<double(const UnitSeq& prompt, const UnitSeq& seq)>;

SequenceScorer model_scorer(const PolicyModel& model);
SequenceScorer world_scorer(const World& world);

// Item correct iff the positive side's mean log-prob is strictly larger;
// ties count as incorrect.
double eval_paired(const SequenceScorer& scorer, std::span<const PairedItem> items);
double eval_paired(const PolicyModel& model, std::span<const PairedItem> items);

double eval_story(const SequenceScorer& scorer, std::span<const StoryItem> items);
double eval_story(const PolicyModel& model, std::span<const StoryItem> items);

struct ContinuationReport {
  int n_prompts = 0;
  int n_scored = 0;         // candidates with a judge score
  int n_judge_failures = 0;
  double mean_judge = 0.0;
  double mean_auto_bleu = 0.0;
  double mean_ppl = 0.0;
  std::array<int, 5> score_histogram{};
};

// One sampled continuation per prompt under a dedicated eval seed;
// aggregates judge score, auto-BLEU, and unit perplexity.
ContinuationReport eval_continuation(const PolicyModel& model, Judge& judge, std::span<const UnitSeq> prompts,
                                     const World& world, const SamplingConfig& sampling, std::uint64_t eval_seed);

}  // namespace ualign
