#include "ualign/selection.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "ualign/metrics.hpp"
#include "ualign/serde.hpp"

namespace ualign {

void SelectionThresholds::validate() const {
  if (delta < 0.0 || delta > 1.0) throw std::invalid_argument("delta must lie in [0,1]");
  if (s_c < 1 || s_c > 5 || s_r < 1 || s_r > 5) throw std::invalid_argument("score thresholds must lie in 1..5");
  if (s_c <= s_r) throw std::invalid_argument("s_c must be larger than s_r");
}

const char* select_reject_name(SelectReject r) {
  switch (r) {
    case SelectReject::no_eligible_chosen: return "no-eligible-chosen";
    case SelectReject::no_eligible_rejected: return "no-eligible-rejected";
    case SelectReject::chosen_equals_rejected: return "chosen-equals-rejected";
    case SelectReject::all_filtered: return "all-filtered";
  }
  return "unknown";
}

namespace {

PairSideMeta side_meta(const Candidate& c) { return {c.scores.auto_bleu, c.scores.ppl, c.scores.judge}; }

std::size_t pick_uniform(const std::vector<std::size_t>& tie_set, Rng& rng) {
  return tie_set[static_cast<std::size_t>(rng.index(tie_set.size()))];
}

SelectResult finish_pair(const UnitSeq& prompt, const std::vector<Candidate>& candidates, std::size_t chosen,
                         std::size_t rejected, const char* selector, const SelectionThresholds& thresholds) {
  if (chosen == rejected || candidates[chosen].units == candidates[rejected].units)
    return SelectReject::chosen_equals_rejected;
  PreferencePair pair;
  pair.prompt = prompt;
  pair.chosen = candidates[chosen].units;
  pair.rejected = candidates[rejected].units;
  pair.selector = selector;
  pair.thresholds = thresholds;
  pair.chosen_meta = side_meta(candidates[chosen]);
  pair.rejected_meta = side_meta(candidates[rejected]);
  return pair;
}

}  // namespace

SelectResult select_by_ppl(const UnitSeq& prompt, const std::vector<Candidate>& candidates,
                           const SelectionThresholds& thresholds, Rng& rng) {
  thresholds.validate();
  for (const auto& c : candidates) {
    if (!c.scores.ppl) throw std::invalid_argument("select_by_ppl requires ppl on every candidate");
  }

  std::vector<std::size_t> filtered;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].scores.auto_bleu <= thresholds.delta) filtered.push_back(i);
  }
  if (filtered.empty()) return SelectReject::all_filtered;

  double best = *candidates[filtered.front()].scores.ppl;
  for (std::size_t i : filtered) best = std::min(best, *candidates[i].scores.ppl);
  std::vector<std::size_t> chosen_ties;
  for (std::size_t i : filtered) {
    if (*candidates[i].scores.ppl == best) chosen_ties.push_back(i);
  }

  double worst = *candidates.front().scores.ppl;
  for (const auto& c : candidates) worst = std::max(worst, *c.scores.ppl);
  std::vector<std::size_t> rejected_ties;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (*candidates[i].scores.ppl == worst) rejected_ties.push_back(i);
  }

  const std::size_t chosen = pick_uniform(chosen_ties, rng);
  const std::size_t rejected = pick_uniform(rejected_ties, rng);
  return finish_pair(prompt, candidates, chosen, rejected, "ppl", thresholds);
}

SelectResult select_by_score(const UnitSeq& prompt, const std::vector<Candidate>& candidates,
                             const SelectionThresholds& thresholds, Rng& rng) {
  thresholds.validate();
  for (const auto& c : candidates) {
    if (!c.scores.judge) throw std::invalid_argument("select_by_score requires a judge score on every candidate");
  }

  std::vector<std::size_t> chosen_eligible;
  std::vector<std::size_t> rejected_eligible;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const int s = *candidates[i].scores.judge;
    const bool violator = candidates[i].scores.auto_bleu > thresholds.delta;
    if (s >= thresholds.s_c && !violator) chosen_eligible.push_back(i);
    if (s <= thresholds.s_r || violator) rejected_eligible.push_back(i);
  }
  if (chosen_eligible.empty()) return SelectReject::no_eligible_chosen;
  if (rejected_eligible.empty()) return SelectReject::no_eligible_rejected;

  int top = 0;
  for (std::size_t i : chosen_eligible) top = std::max(top, *candidates[i].scores.judge);
  std::vector<std::size_t> chosen_ties;
  for (std::size_t i : chosen_eligible) {
    if (*candidates[i].scores.judge == top) chosen_ties.push_back(i);
  }

  int bottom = 6;
  for (std::size_t i : rejected_eligible) bottom = std::min(bottom, *candidates[i].scores.judge);
  // Auto-BLEU violators sit below score-based rejects at the same score, so
  // they own the tie set whenever both kinds share the minimum.
  std::vector<std::size_t> rejected_ties;
  bool any_violator = false;
  for (std::size_t i : rejected_eligible) {
    if (*candidates[i].scores.judge != bottom) continue;
    if (candidates[i].scores.auto_bleu > thresholds.delta) {
      if (!any_violator) rejected_ties.clear();
      any_violator = true;
      rejected_ties.push_back(i);
    } else if (!any_violator) {
      rejected_ties.push_back(i);
    }
  }

  const std::size_t chosen = pick_uniform(chosen_ties, rng);
  const std::size_t rejected = pick_uniform(rejected_ties, rng);
  return finish_pair(prompt, candidates, chosen, rejected, "score", thresholds);
}

Selector selector_from_string(const std::string& name) {
  if (name == "ppl") return Selector::ppl;
  if (name == "score") return Selector::score;
  throw std::invalid_argument("unknown selector: " + name);
}

const char* selector_name(Selector s) { return s == Selector::ppl ? "ppl" : "score"; }

PromptSet segment_corpus(const Corpus& corpus, int target_len, const Vocabulary& vocab) {
  PromptSet out;
  for (const auto& entry : corpus.entries) {
    const auto seg = segment_prompt(entry.units, target_len, vocab);
    if (std::holds_alternative<SegmentReject>(seg)) {
      ++out.segment_rejects[segment_reject_name(std::get<SegmentReject>(seg))];
      continue;
    }
    const auto& s = std::get<Segmented>(seg);
    out.ids.push_back(entry.id);
    out.prompts.push_back(s.prompt);
    out.references.push_back(s.continuation);
  }
  return out;
}

PreferenceDataset build_preference_dataset(const PolicyModel& model, const PromptSet& prompts, const World& world,
                                           const SamplingConfig& sampling, Judge* judge,
                                           const SelectionThresholds& thresholds, Selector selector,
                                           std::uint64_t seed, const ScoredSink& on_scored) {
  thresholds.validate();
  if (selector == Selector::score && judge == nullptr)
    throw std::invalid_argument("score selector requires a judge");

  SamplingConfig cfg = sampling;
  cfg.seed = seed;

  PreferenceDataset ds;
  ds.stats.prompts_in = static_cast<int>(prompts.prompts.size());
  for (std::size_t i = 0; i < prompts.prompts.size(); ++i) {
    const UnitSeq& prompt = prompts.prompts[i];
    std::vector<Candidate> candidates = sample_n(model, prompt, cfg, static_cast<std::uint64_t>(i));
    score_candidates(candidates, model, prompt, world, judge);
    if (on_scored) on_scored(i, candidates);

    std::vector<Candidate> pool;
    pool.reserve(candidates.size());
    for (auto& c : candidates) {
      if (c.scores.judge_error) {
        ++ds.stats.judge_failures;
        if (selector == Selector::score) continue;  // unusable without a score
      }
      pool.push_back(std::move(c));
    }

    Rng tie_rng = Rng::substream(seed, {0x7e, static_cast<std::uint64_t>(i)});
    SelectResult result = selector == Selector::ppl ? select_by_ppl(prompt, pool, thresholds, tie_rng)
                                                    : select_by_score(prompt, pool, thresholds, tie_rng);
    if (std::holds_alternative<PreferencePair>(result)) {
      ds.pairs.push_back(std::move(std::get<PreferencePair>(result)));
      ++ds.stats.pairs_out;
    } else {
      ds.stats.count_reject(std::get<SelectReject>(result));
    }
  }
  return ds;
}

namespace {

json meta_side_to_json(const PairSideMeta& m) {
  json j{{"auto_bleu", m.auto_bleu}};
  j["ppl"] = m.ppl ? json(*m.ppl) : json(nullptr);
  j["judge"] = m.judge ? json(*m.judge) : json(nullptr);
  return j;
}

PairSideMeta meta_side_from_json(const json& j) {
  PairSideMeta m;
  m.auto_bleu = j.at("auto_bleu").get<double>();
  if (!j.at("ppl").is_null()) m.ppl = j.at("ppl").get<double>();
  if (!j.at("judge").is_null()) m.judge = j.at("judge").get<int>();
  return m;
}

}  // namespace

void save_preference_dataset(const PreferenceDataset& ds, const std::string& pairs_path,
                             const std::string& yield_path) {
  std::string out;
  for (const auto& p : ds.pairs) {
    const json meta{{"s_c", p.thresholds.s_c},
                    {"s_r", p.thresholds.s_r},
                    {"delta", p.thresholds.delta},
                    {"scores", json{{"chosen", meta_side_to_json(p.chosen_meta)},
                                    {"rejected", meta_side_to_json(p.rejected_meta)}}}};
    out += json{{"prompt", p.prompt}, {"chosen", p.chosen}, {"rejected", p.rejected},
                {"selector", p.selector}, {"meta", meta}}
               .dump();
    out += '\n';
  }
  write_text_file(pairs_path, out);

  if (!yield_path.empty()) {
    save_json(yield_path,
              json{{"prompts_in", ds.stats.prompts_in},
                   {"pairs_out", ds.stats.pairs_out},
                   {"reject_reasons", ds.stats.reject_reasons},
                   {"judge_failures", ds.stats.judge_failures}},
              2);
  }
}

std::vector<PreferencePair> load_preference_pairs(const std::string& pairs_path) {
  std::vector<PreferencePair> pairs;
  std::istringstream in(read_text_file(pairs_path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    PreferencePair p;
    p.prompt = j.at("prompt").get<UnitSeq>();
    p.chosen = j.at("chosen").get<UnitSeq>();
    p.rejected = j.at("rejected").get<UnitSeq>();
    p.selector = j.at("selector").get<std::string>();
    const json& meta = j.at("meta");
    p.thresholds.s_c = meta.at("s_c").get<int>();
    p.thresholds.s_r = meta.at("s_r").get<int>();
    p.thresholds.delta = meta.at("delta").get<double>();
    p.chosen_meta = meta_side_from_json(meta.at("scores").at("chosen"));
    p.rejected_meta = meta_side_from_json(meta.at("scores").at("rejected"));
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace ualign
