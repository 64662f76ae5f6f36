#pragma once

#include <map>
#include <string>
#include <vector>

#include "ualign/candidate.hpp"
#include "ualign/judge.hpp"
#include "ualign/model.hpp"
#include "ualign/units.hpp"
#include "ualign/world.hpp"

namespace ualign {

// Within-sequence n-gram repetition rate over the n-gram multiset: the
// fraction of occurrences whose gram appears elsewhere in the multiset.
// 0 when there are no n-grams.
template <class Token>
double auto_bleu(const std::vector<Token>& tokens, int n = 2) {
  if (n < 1) return 0.0;
  if (static_cast<int>(tokens.size()) < n) return 0.0;
  std::map<std::vector<Token>, int> counts;
  const std::size_t total = tokens.size() - static_cast<std::size_t>(n) + 1;
  for (std::size_t i = 0; i < total; ++i)
    ++counts[std::vector<Token>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                tokens.begin() + static_cast<std::ptrdiff_t>(i + static_cast<std::size_t>(n)))];
  std::size_t repeated = 0;
  for (const auto& [gram, c] : counts) {
    if (c >= 2) repeated += static_cast<std::size_t>(c);
  }
  return static_cast<double>(repeated) / static_cast<double>(total);
}

double auto_bleu_text(const std::string& text, int n = 2);

// log_prob / length; comparing these is equivalent to comparing geometric
// means of sequence probabilities.
double mean_log_prob(const PolicyModel& model, const UnitSeq& seq);
double mean_log_prob(const PolicyModel& model, const UnitSeq& prompt, const UnitSeq& seq);

// Fills transcript, auto-BLEU (2-gram over transcript tokens), unit-level
// perplexity, and — when a judge is supplied — the judge score. Judge
// failures are recorded per candidate and do not abort the batch.
void score_candidates(std::vector<Candidate>& candidates, const PolicyModel& model, const UnitSeq& prompt,
                      const World& world, Judge* judge);

}  // namespace ualign
