#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <variant>
#include <vector>

#include "ualign/candidate.hpp"
#include "ualign/model.hpp"
#include "ualign/rng.hpp"
#include "ualign/units.hpp"

namespace ualign {

struct SamplingConfig {
  double temperature = 0.8;
  double top_p = 0.9;
  int n_continuations = 5;
  int max_len = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

// Nucleus truncation of one softmax step: temperature-scaled probabilities
// of the kept tokens (descending), renormalized. kept.size() >= 1.
struct Nucleus {
  std::vector<Unit> kept;
  Eigen::VectorXd probs;
};

Nucleus nucleus_distribution(const Eigen::RowVectorXd& logits, double temperature, double top_p);

Unit nucleus_pick(const Eigen::RowVectorXd& logits, double temperature, double top_p, Rng& rng);

// Token-by-token top-p sampling from the model, stopping at eos or max_len.
// The returned sequence is deduped; `raw_out`, when given, receives the
// pre-dedup trace for replay checks.
UnitSeq nucleus_sample(const PolicyModel& model, const UnitSeq& prompt, const SamplingConfig& cfg, Rng& rng,
                       UnitSeq* raw_out = nullptr);

// N draws with decorrelated substreams; draw i uses substream
// (cfg.seed, prompt_stream_id, i), so results do not depend on scheduling.
std::vector<Candidate> sample_n(const PolicyModel& model, const UnitSeq& prompt, const SamplingConfig& cfg,
                                std::uint64_t prompt_stream_id = 0);

enum class SegmentReject { too_short, no_boundary, empty_side };

struct Segmented {
  UnitSeq prompt;
  UnitSeq continuation;
};

const char* segment_reject_name(SegmentReject r);

// Splits immediately after the boundary occurrence closest to target_len
// (ties break to the earlier boundary). Sequences shorter than 2*target_len
// or without a boundary are rejected.
std::variant<Segmented, SegmentReject> segment_prompt(const UnitSeq& seq, int target_len, const Vocabulary& vocab);

}  // namespace ualign
