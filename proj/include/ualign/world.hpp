#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ualign/rng.hpp"
#include "ualign/serde.hpp"
#include "ualign/units.hpp"

namespace ualign {

struct WorldConfig {
  Vocabulary vocab;
  int markov_order = 3;
  int n_words = 120;
  int max_word_len = 2;              // at most markov_order; short words keep intra-word
                                     // structure learnable while onsets carry long context
  double word_len1_fraction = 0.25;  // share of single-unit words in the inventory
  double eos_prob = 0.04;            // chance a completed word ends the sequence
  double alpha_first = 0.3;          // Dirichlet concentration, word-onset rows
  double alpha_rest = 0.8;           // Dirichlet concentration, word-continuation rows
  double min_row_ratio = 5.0;        // enforced max/min over nonzero entries per reachable row
  bool uniform = false;              // degenerate diagnostic world: every row uniform

  void validate() const;
};

// Bijection between inter-boundary unit runs and pseudo-word strings.
struct Lexicon {
  std::map<UnitSeq, std::string> word_of_run;
  std::map<std::string, UnitSeq> run_of_word;

  void insert(UnitSeq run, std::string word);
  std::size_t size() const { return word_of_run.size(); }
};

// Hidden ground-truth generative model: an order-m Markov chain over units
// whose support spells a finite word inventory, plus the unit->pseudo-word
// lexicon standing in for the transcription step.
struct World {
  WorldConfig config;
  std::uint64_t seed = 0;
  ContextIndexer ctx;
  Eigen::MatrixXd table;                 // num_contexts x vocab.size, rows sum to 1
  std::vector<std::uint8_t> reachable;   // rows the generator can actually visit
  Lexicon lexicon;

  const Vocabulary& vocab() const { return config.vocab; }

  // log table(ctx, next); -inf where the chain assigns zero mass.
  double step_log_prob(std::int64_t ctx_index, Unit next) const;
};

World generate_world(std::uint64_t seed, const WorldConfig& cfg);

struct CorpusEntry {
  std::string id;
  UnitSeq units;
};

struct Corpus {
  std::vector<CorpusEntry> entries;
};

// One draw from the chain, truncated at eos or max_len. The raw draw may
// or may not reach eos; callers enforce length constraints.
UnitSeq sample_sequence(const World& world, Rng& rng, int max_len);

// n sequences whose lengths (eos included) fall inside len_range, each
// ending with eos. Draws outside the range are rejected and redrawn.
Corpus sample_corpus(const World& world, int n, std::pair<int, int> len_range, std::uint64_t seed,
                     const std::string& id_prefix = "seq");

// Splits at boundary units and maps each run through the lexicon. Unknown
// runs become `unknown_token`; an eos terminates the walk.
std::string transcribe(const UnitSeq& seq, const World& world, const std::string& unknown_token = "?");

std::vector<std::string> split_tokens(const std::string& text);

// Inverse of transcribe for known words: token -> its unit run. Unknown
// tokens yield nullopt entries.
std::vector<std::optional<UnitSeq>> invert_tokens(const std::vector<std::string>& tokens, const World& world);

// Joins inverted runs with boundary units; nullopt if any token is unknown.
std::optional<UnitSeq> invert_transcript(const std::string& text, const World& world);

// Chain log-likelihood of `continuation` given `prompt` as context. -inf as
// soon as one step leaves the support.
double world_log_prob(const World& world, const UnitSeq& prompt, const UnitSeq& continuation);

// Argmax continuation of the chain from `prompt`, up to max_len units.
UnitSeq greedy_path(const World& world, const UnitSeq& prompt, int max_len);

// Max/min over nonzero entries, minimized over reachable rows with at least
// two distinct support entries. Returns +inf if no such row exists.
double min_row_ratio(const World& world);

void save_world(const World& world, const std::string& path);
World load_world(const std::string& path);

json vocabulary_to_json(const Vocabulary& v);
Vocabulary vocabulary_from_json(const json& j);
json world_config_to_json(const WorldConfig& c);
WorldConfig world_config_from_json(const json& j);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

}  // namespace ualign
