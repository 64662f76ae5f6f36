#include "ualign/eval.hpp"

#include <algorithm>
#include <stdexcept>

#include "ualign/metrics.hpp"

namespace ualign {

namespace {

struct Run {
  std::size_t start;
  std::size_t len;
};

std::vector<Run> word_runs(const UnitSeq& seq, const Vocabulary& vocab) {
  std::vector<Run> runs;
  std::size_t start = 0;
  std::size_t len = 0;
  for (std::size_t i = 0; i <= seq.size(); ++i) {
    const bool end = i == seq.size() || seq[i] == vocab.boundary_unit || seq[i] == vocab.eos_unit;
    if (end) {
      if (len > 0) runs.push_back({start, len});
      len = 0;
      if (i < seq.size() && seq[i] == vocab.eos_unit) break;
    } else {
      if (len == 0) start = i;
      ++len;
    }
  }
  return runs;
}

UnitSeq sample_carrier(const World& world, Rng& rng, int min_len, int max_len) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    UnitSeq seq = sample_sequence(world, rng, max_len);
    if (static_cast<int>(seq.size()) >= min_len) return seq;
  }
  throw std::runtime_error("could not sample a carrier sequence of the requested length");
}

}  // namespace

std::vector<PairedItem> make_paired_suite(const World& world, int n_items, PairedKind kind, std::uint64_t seed) {
  if (n_items < 1) throw std::invalid_argument("paired suite needs at least one item");
  if (world.lexicon.size() < 2) throw std::invalid_argument("world lexicon too small for paired suites");
  const Vocabulary& vocab = world.vocab();

  std::vector<PairedItem> items;
  items.reserve(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) {
    Rng rng = Rng::substream(seed, {0xea, static_cast<std::uint64_t>(kind == PairedKind::nonword ? 0 : 1),
                                    static_cast<std::uint64_t>(i)});
    bool made = false;
    for (int attempt = 0; attempt < 1000 && !made; ++attempt) {
      UnitSeq carrier = sample_carrier(world, rng, 8, 80);
      const std::vector<Run> runs = word_runs(carrier, vocab);
      if (runs.empty()) continue;

      if (kind == PairedKind::nonword) {
        const Run run = runs[static_cast<std::size_t>(rng.index(runs.size()))];
        const std::size_t pos = run.start + static_cast<std::size_t>(rng.index(run.len));
        UnitSeq negative = carrier;
        for (int swap_try = 0; swap_try < 64; ++swap_try) {
          Unit u = static_cast<Unit>(rng.below(static_cast<std::uint64_t>(vocab.size)));
          if (u == vocab.boundary_unit || u == vocab.eos_unit || u == carrier[pos]) continue;
          if (pos > run.start && u == negative[pos - 1]) continue;
          if (pos + 1 < run.start + run.len && u == negative[pos + 1]) continue;
          negative[pos] = u;
          const UnitSeq mutated(negative.begin() + static_cast<std::ptrdiff_t>(run.start),
                                negative.begin() + static_cast<std::ptrdiff_t>(run.start + run.len));
          if (world.lexicon.word_of_run.count(mutated)) {
            negative[pos] = carrier[pos];
            continue;
          }
          items.push_back({carrier, negative, kind});
          made = true;
          break;
        }
      } else {
        if (runs.size() < 2) continue;
        std::vector<std::size_t> swappable;
        for (std::size_t r = 0; r + 1 < runs.size(); ++r) {
          const UnitSeq a(carrier.begin() + static_cast<std::ptrdiff_t>(runs[r].start),
                          carrier.begin() + static_cast<std::ptrdiff_t>(runs[r].start + runs[r].len));
          const UnitSeq b(carrier.begin() + static_cast<std::ptrdiff_t>(runs[r + 1].start),
                          carrier.begin() + static_cast<std::ptrdiff_t>(runs[r + 1].start + runs[r + 1].len));
          if (a != b) swappable.push_back(r);
        }
        if (swappable.empty()) continue;
        const std::size_t r = swappable[static_cast<std::size_t>(rng.index(swappable.size()))];
        UnitSeq negative;
        negative.reserve(carrier.size());
        negative.insert(negative.end(), carrier.begin(), carrier.begin() + static_cast<std::ptrdiff_t>(runs[r].start));
        negative.insert(negative.end(), carrier.begin() + static_cast<std::ptrdiff_t>(runs[r + 1].start),
                        carrier.begin() + static_cast<std::ptrdiff_t>(runs[r + 1].start + runs[r + 1].len));
        negative.push_back(vocab.boundary_unit);
        negative.insert(negative.end(), carrier.begin() + static_cast<std::ptrdiff_t>(runs[r].start),
                        carrier.begin() + static_cast<std::ptrdiff_t>(runs[r].start + runs[r].len));
        negative.insert(negative.end(), carrier.begin() + static_cast<std::ptrdiff_t>(runs[r + 1].start + runs[r + 1].len),
                        carrier.end());
        items.push_back({carrier, negative, kind});
        made = true;
      }
    }
    if (!made) throw std::runtime_error("could not build a paired item; lexicon or vocabulary too small");
  }
  return items;
}

std::vector<StoryItem> make_story_suite(const World& world, int n_items, std::uint64_t seed, int context_target_len,
                                        int ending_len) {
  if (n_items < 2) throw std::invalid_argument("story suite needs at least two items");
  if (ending_len < 1) throw std::invalid_argument("ending_len must be positive");

  std::vector<UnitSeq> contexts, endings;
  int draw = 0;
  const int max_draws = n_items * 200;
  while (static_cast<int>(contexts.size()) < n_items) {
    if (++draw > max_draws) throw std::runtime_error("could not sample enough story items");
    Rng rng = Rng::substream(seed, {0xe5, static_cast<std::uint64_t>(draw)});
    const UnitSeq seq = sample_sequence(world, rng, 4 * context_target_len);
    const auto seg = segment_prompt(seq, context_target_len, world.vocab());
    if (!std::holds_alternative<Segmented>(seg)) continue;
    const auto& s = std::get<Segmented>(seg);
    UnitSeq ending = s.continuation;
    if (static_cast<int>(ending.size()) > ending_len)
      ending.resize(static_cast<std::size_t>(ending_len));
    if (ending.empty()) continue;
    contexts.push_back(s.prompt);
    endings.push_back(std::move(ending));
  }

  // False endings are the true endings rotated across items.
  std::vector<StoryItem> items;
  items.reserve(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) {
    const std::size_t self = static_cast<std::size_t>(i);
    std::size_t other = (self + 1) % contexts.size();
    while (endings[other] == endings[self]) other = (other + 1) % contexts.size();
    items.push_back({contexts[self], endings[self], endings[other]});
  }
  return items;
}

SequenceScorer model_scorer(const PolicyModel& model) {
  return [&model](const UnitSeq& prompt, const UnitSeq& seq) { return mean_log_prob(model, prompt, seq); };
}

SequenceScorer world_scorer(const World& world) {
  return [&world](const UnitSeq& prompt, const UnitSeq& seq) {
    return world_log_prob(world, prompt, seq) / static_cast<double>(seq.size());
  };
}

double eval_paired(const SequenceScorer& scorer, std::span<const PairedItem> items) {
  if (items.empty()) throw std::invalid_argument("eval_paired needs at least one item");
  int correct = 0;
  for (const auto& item : items) {
    if (scorer({}, item.positive) > scorer({}, item.negative)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

double eval_paired(const PolicyModel& model, std::span<const PairedItem> items) {
  return eval_paired(model_scorer(model), items);
}

double eval_story(const SequenceScorer& scorer, std::span<const StoryItem> items) {
  if (items.empty()) throw std::invalid_argument("eval_story needs at least one item");
  int correct = 0;
  for (const auto& item : items) {
    if (scorer(item.context, item.ending_true) > scorer(item.context, item.ending_false)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

double eval_story(const PolicyModel& model, std::span<const StoryItem> items) {
  return eval_story(model_scorer(model), items);
}

ContinuationReport eval_continuation(const PolicyModel& model, Judge& judge, std::span<const UnitSeq> prompts,
                                     const World& world, const SamplingConfig& sampling, std::uint64_t eval_seed) {
  sampling.validate();
  ContinuationReport report;
  report.n_prompts = static_cast<int>(prompts.size());
  if (prompts.empty()) return report;

  double judge_total = 0.0;
  double bleu_total = 0.0;
  double ppl_total = 0.0;
  int n_all = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Rng rng = Rng::substream(eval_seed, {0xec, static_cast<std::uint64_t>(i)});
    Candidate cand;
    cand.units = nucleus_sample(model, prompts[i], sampling, rng);
    cand.transcript = transcribe(cand.units, world);
    cand.scores.auto_bleu = auto_bleu_text(cand.transcript, 2);
    cand.scores.ppl = perplexity(model, prompts[i], cand.units);

    bleu_total += cand.scores.auto_bleu;
    ppl_total += *cand.scores.ppl;
    ++n_all;

    const JudgeResult r = judge.score(transcribe(prompts[i], world), cand.transcript);
    if (std::holds_alternative<JudgeVerdict>(r)) {
      const int s = std::get<JudgeVerdict>(r).score;
      judge_total += s;
      ++report.n_scored;
      ++report.score_histogram[static_cast<std::size_t>(s - 1)];
    } else {
      ++report.n_judge_failures;
    }
  }
  report.mean_auto_bleu = bleu_total / n_all;
  report.mean_ppl = ppl_total / n_all;
  report.mean_judge = report.n_scored > 0 ? judge_total / report.n_scored : 0.0;
  return report;
}

}  // namespace ualign
