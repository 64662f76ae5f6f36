#include "ualign/metrics.hpp"

namespace ualign {

double auto_bleu_text(const std::string& text, int n) { return auto_bleu(split_tokens(text), n); }

double mean_log_prob(const PolicyModel& model, const UnitSeq& seq) {
  return log_prob(model, {}, seq) / static_cast<double>(seq.size());
}

double mean_log_prob(const PolicyModel& model, const UnitSeq& prompt, const UnitSeq& seq) {
  return log_prob(model, prompt, seq) / static_cast<double>(seq.size());
}

void score_candidates(std::vector<Candidate>& candidates, const PolicyModel& model, const UnitSeq& prompt,
                      const World& world, Judge* judge) {
  const std::string prompt_text = transcribe(prompt, world);
  for (auto& cand : candidates) {
    cand.transcript = transcribe(cand.units, world);
    cand.scores.auto_bleu = auto_bleu_text(cand.transcript, 2);
    cand.scores.ppl = cand.units.empty() ? std::optional<double>{} : perplexity(model, prompt, cand.units);
    if (!judge) continue;
    const JudgeResult r = judge->score(prompt_text, cand.transcript);
    if (std::holds_alternative<JudgeVerdict>(r)) {
      cand.scores.judge = std::get<JudgeVerdict>(r).score;
    } else {
      const auto& f = std::get<JudgeFailure>(r);
      cand.scores.judge_error = std::string(judge_failure_name(f.kind)) + ": " + f.detail;
    }
  }
}

}  // namespace ualign
