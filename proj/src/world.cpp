#include "ualign/world.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ualign/serde.hpp"

namespace ualign {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Deterministic, decodable pseudo-word strings: every syllable is two
// characters, so distinct indices always yield distinct words.
std::string pseudo_word(std::size_t index) {
  static const char* consonants = "bdfgklmnprstvz";
  static const char* vowels = "aeiou";
  std::string s;
  do {
    const std::size_t syl = index % 70;
    s += consonants[syl / 5];
    s += vowels[syl % 5];
    index /= 70;
  } while (index > 0);
  return s;
}

std::vector<Unit> usable_units(const Vocabulary& v) {
  std::vector<Unit> out;
  for (Unit u = 0; u < v.size; ++u) {
    if (u != v.boundary_unit && u != v.eos_unit) out.push_back(u);
  }
  return out;
}

// Word inventory: distinct unit runs over non-reserved units, lengths in
// [1, max_word_len], no consecutive duplicates inside a run.
std::vector<UnitSeq> sample_inventory(const WorldConfig& cfg, Rng& rng) {
  const std::vector<Unit> pool = usable_units(cfg.vocab);
  const int n1 = std::max(1, static_cast<int>(std::lround(cfg.n_words * cfg.word_len1_fraction)));
  std::set<UnitSeq> words;

  std::vector<Unit> singles = pool;
  for (std::size_t i = singles.size(); i > 1; --i) std::swap(singles[i - 1], singles[rng.below(i)]);
  for (int i = 0; i < n1 && i < static_cast<int>(singles.size()); ++i) words.insert({singles[static_cast<std::size_t>(i)]});

  int attempts = 0;
  const int max_attempts = cfg.n_words * 1000;
  while (static_cast<int>(words.size()) < cfg.n_words) {
    if (++attempts > max_attempts) throw std::invalid_argument("word inventory too large for this vocabulary");
    const int len =
        2 + (cfg.max_word_len > 2 ? rng.index(static_cast<std::size_t>(cfg.max_word_len - 1)) : 0);
    UnitSeq w;
    w.push_back(pool[static_cast<std::size_t>(rng.index(pool.size()))]);
    bool ok = true;
    for (int k = 1; k < len; ++k) {
      Unit u = pool[static_cast<std::size_t>(rng.index(pool.size()))];
      int guard = 0;
      while (u == w.back() && ++guard < 64) u = pool[static_cast<std::size_t>(rng.index(pool.size()))];
      if (u == w.back()) {
        ok = false;
        break;
      }
      w.push_back(u);
    }
    if (ok) words.insert(std::move(w));
  }
  return {words.begin(), words.end()};
}

Eigen::VectorXd dirichlet(Rng& rng, std::size_t n, double alpha) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double g = rng.gamma(alpha);
    if (g < 1e-12) g = 1e-12;
    v[i] = g;
    total += g;
  }
  return v / total;
}

// Raises nonzero entries to a power until max/min meets the target ratio,
// then renormalizes. Leaves the support untouched.
void sharpen_row(Eigen::VectorXd& row, double min_ratio) {
  for (int iter = 0; iter < 8; ++iter) {
    double mx = 0.0, mn = std::numeric_limits<double>::infinity();
    int nonzero = 0;
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      if (row[i] > 0.0) {
        ++nonzero;
        mx = std::max(mx, row[i]);
        mn = std::min(mn, row[i]);
      }
    }
    if (nonzero < 2 || mx >= min_ratio * mn) break;
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      if (row[i] > 0.0) row[i] = std::pow(row[i], 1.5);
    }
    row /= row.sum();
  }
  const double s = row.sum();
  if (s > 0.0) row /= s;
}

std::vector<Unit> decode_history(const ContextIndexer& ctx, std::int64_t index) {
  const std::int64_t alphabet = static_cast<std::int64_t>(ctx.vocab_size()) + 1;
  std::vector<Unit> h(static_cast<std::size_t>(ctx.order()));
  for (int i = ctx.order() - 1; i >= 0; --i) {
    h[static_cast<std::size_t>(i)] = static_cast<Unit>(index % alphabet);
    index /= alphabet;
  }
  return h;
}

struct Builder {
  const WorldConfig& cfg;
  const std::vector<UnitSeq>& inventory;
  // onset[key]: distribution over first units, conditioned on the
  // markov_order-1 symbols preceding the boundary. This is where the
  // generator's context reach exceeds what a shorter-context model can
  // represent.
  std::map<std::vector<Unit>, Eigen::VectorXd> onset;
  Rng onset_rng{0};
  std::vector<Unit> first_units;
  // word_weight[first_unit][word]: relative mass of each word sharing that
  // first unit.
  std::map<Unit, std::map<UnitSeq, double>> word_weight;

  Eigen::VectorXd row_for_onset(const std::vector<Unit>& key) {
    auto it = onset.find(key);
    if (it == onset.end()) {
      Eigen::VectorXd p = dirichlet(onset_rng, first_units.size(), cfg.alpha_first);
      sharpen_row(p, cfg.min_row_ratio);
      it = onset.emplace(key, std::move(p)).first;
    }
    Eigen::VectorXd row = Eigen::VectorXd::Zero(cfg.vocab.size);
    const Eigen::VectorXd& p = it->second;
    for (std::size_t i = 0; i < first_units.size(); ++i) row[first_units[i]] = p[static_cast<Eigen::Index>(i)];
    return row;
  }

  Eigen::VectorXd row_for_prefix(const UnitSeq& prefix) const {
    Eigen::VectorXd row = Eigen::VectorXd::Zero(cfg.vocab.size);
    const auto it = word_weight.find(prefix.front());
    if (it == word_weight.end()) return row;
    double total = 0.0;
    for (const auto& [w, q] : it->second) {
      if (w.size() < prefix.size() || !std::equal(prefix.begin(), prefix.end(), w.begin())) continue;
      total += q;
      if (w.size() == prefix.size()) {
        row[cfg.vocab.boundary_unit] += q * (1.0 - cfg.eos_prob);
        row[cfg.vocab.eos_unit] += q * cfg.eos_prob;
      } else {
        row[w[prefix.size()]] += q;
      }
    }
    if (total > 0.0) row /= total;
    return row;
  }
};

}  // namespace

void WorldConfig::validate() const {
  vocab.validate();
  if (markov_order < 2) throw std::invalid_argument("markov_order must be at least 2");
  if (max_word_len < 1 || max_word_len > markov_order)
    throw std::invalid_argument("max_word_len must lie in [1, markov_order]");
  if (n_words < 2) throw std::invalid_argument("n_words must be at least 2");
  if (word_len1_fraction < 0.0 || word_len1_fraction > 1.0)
    throw std::invalid_argument("word_len1_fraction must lie in [0,1]");
  if (eos_prob <= 0.0 || eos_prob > 0.15) throw std::invalid_argument("eos_prob must lie in (0, 0.15]");
  if (alpha_first <= 0.0 || alpha_rest <= 0.0) throw std::invalid_argument("Dirichlet concentrations must be positive");
  if (min_row_ratio < 1.0) throw std::invalid_argument("min_row_ratio must be >= 1");
  ContextIndexer probe(vocab.size, markov_order);  // rejects oversized tables
  (void)probe;
}

void Lexicon::insert(UnitSeq run, std::string word) {
  run_of_word[word] = run;
  word_of_run[std::move(run)] = std::move(word);
}

double World::step_log_prob(std::int64_t ctx_index, Unit next) const {
  const double p = table(ctx_index, next);
  return p > 0.0 ? std::log(p) : kNegInf;
}

World generate_world(std::uint64_t seed, const WorldConfig& cfg) {
  cfg.validate();
  World w;
  w.config = cfg;
  w.seed = seed;
  w.ctx = ContextIndexer(cfg.vocab.size, cfg.markov_order);
  w.table = Eigen::MatrixXd::Constant(w.ctx.num_contexts(), cfg.vocab.size, 1.0 / cfg.vocab.size);
  w.reachable.assign(static_cast<std::size_t>(w.ctx.num_contexts()), 0);

  Rng inv_rng = Rng::substream(seed, {1});
  const std::vector<UnitSeq> inventory = sample_inventory(cfg, inv_rng);
  for (std::size_t i = 0; i < inventory.size(); ++i) w.lexicon.insert(inventory[i], pseudo_word(i));

  if (cfg.uniform) {
    w.reachable.assign(w.reachable.size(), 1);
    return w;
  }

  Builder b{cfg, inventory, {}, Rng::substream(seed, {2}), {}, {}};
  {
    std::set<Unit> firsts;
    for (const auto& word : inventory) firsts.insert(word.front());
    b.first_units.assign(firsts.begin(), firsts.end());
  }
  Rng rest_rng = Rng::substream(seed, {3});
  {
    std::map<Unit, std::vector<UnitSeq>> by_first;
    for (const auto& word : inventory) by_first[word.front()].push_back(word);
    for (auto& [u, words] : by_first) {
      Eigen::VectorXd q = dirichlet(rest_rng, words.size(), cfg.alpha_rest);
      for (std::size_t i = 0; i < words.size(); ++i) b.word_weight[u][words[i]] = q[static_cast<Eigen::Index>(i)];
    }
  }

  // Fill exactly the rows the chain can visit, walking the support from the
  // start context.
  const Unit start = w.ctx.start_symbol();
  const Unit bnd = cfg.vocab.boundary_unit;
  const Unit eos = cfg.vocab.eos_unit;
  std::deque<std::int64_t> queue{w.ctx.start_context()};
  std::set<std::int64_t> seen{w.ctx.start_context()};
  while (!queue.empty()) {
    const std::int64_t ctx = queue.front();
    queue.pop_front();
    const std::vector<Unit> h = decode_history(w.ctx, ctx);
    const Unit last = h.back();

    Eigen::VectorXd row;
    if (last == start || last == bnd) {
      // Word onset: conditioned on everything before the boundary slot.
      row = b.row_for_onset(std::vector<Unit>(h.begin(), h.end() - 1));
    } else {
      UnitSeq prefix;
      for (auto it = h.rbegin(); it != h.rend() && *it != bnd && *it != start; ++it) prefix.push_back(*it);
      std::reverse(prefix.begin(), prefix.end());
      row = b.row_for_prefix(prefix);
    }
    if (row.sum() <= 0.0) continue;  // off-support context reached by construction error; keep uniform
    sharpen_row(row, cfg.min_row_ratio);
    w.table.row(ctx) = row.transpose();
    w.reachable[static_cast<std::size_t>(ctx)] = 1;

    for (Unit u = 0; u < cfg.vocab.size; ++u) {
      if (u == eos || row[u] <= 0.0) continue;
      const std::int64_t next = w.ctx.push(ctx, u);
      if (seen.insert(next).second) queue.push_back(next);
    }
  }
  return w;
}

UnitSeq sample_sequence(const World& world, Rng& rng, int max_len) {
  UnitSeq out;
  std::int64_t ctx = world.ctx.start_context();
  while (static_cast<int>(out.size()) < max_len) {
    const double u = rng.uniform();
    double cum = 0.0;
    Unit pick = world.vocab().size - 1;
    for (Unit c = 0; c < world.vocab().size; ++c) {
      cum += world.table(ctx, c);
      if (u < cum) {
        pick = c;
        break;
      }
    }
    out.push_back(pick);
    if (pick == world.vocab().eos_unit) break;
    ctx = world.ctx.push(ctx, pick);
  }
  return out;
}

Corpus sample_corpus(const World& world, int n, std::pair<int, int> len_range, std::uint64_t seed,
                     const std::string& id_prefix) {
  if (len_range.first < 1 || len_range.second < len_range.first)
    throw std::invalid_argument("invalid corpus length range");
  Corpus corpus;
  corpus.entries.reserve(static_cast<std::size_t>(std::max(0, n)));
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::substream(seed, {0x10, static_cast<std::uint64_t>(i)});
    UnitSeq seq;
    bool ok = false;
    for (int attempt = 0; attempt < 10000; ++attempt) {
      seq = sample_sequence(world, rng, len_range.second);
      const int len = static_cast<int>(seq.size());
      if (len >= len_range.first && len <= len_range.second && !seq.empty() &&
          seq.back() == world.vocab().eos_unit) {
        ok = true;
        break;
      }
    }
    if (!ok) throw std::runtime_error("length range unreachable for this world");
    std::ostringstream id;
    id << id_prefix << "-" << std::setfill('0') << std::setw(6) << i;
    corpus.entries.push_back({id.str(), std::move(seq)});
  }
  return corpus;
}

std::string transcribe(const UnitSeq& seq, const World& world, const std::string& unknown_token) {
  std::string out;
  UnitSeq run;
  auto flush = [&](UnitSeq& r) {
    if (r.empty()) return;
    const auto it = world.lexicon.word_of_run.find(r);
    if (!out.empty()) out += ' ';
    out += it != world.lexicon.word_of_run.end() ? it->second : unknown_token;
    r.clear();
  };
  for (Unit u : seq) {
    if (u == world.vocab().eos_unit) break;
    if (u == world.vocab().boundary_unit) {
      flush(run);
    } else {
      run.push_back(u);
    }
  }
  flush(run);
  return out;
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) tokens.push_back(tok);
  return tokens;
}

std::vector<std::optional<UnitSeq>> invert_tokens(const std::vector<std::string>& tokens, const World& world) {
  std::vector<std::optional<UnitSeq>> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    const auto it = world.lexicon.run_of_word.find(t);
    if (it == world.lexicon.run_of_word.end()) {
      out.emplace_back(std::nullopt);
    } else {
      out.emplace_back(it->second);
    }
  }
  return out;
}

std::optional<UnitSeq> invert_transcript(const std::string& text, const World& world) {
  UnitSeq out;
  const auto runs = invert_tokens(split_tokens(text), world);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!runs[i]) return std::nullopt;
    if (i > 0) out.push_back(world.vocab().boundary_unit);
    out.insert(out.end(), runs[i]->begin(), runs[i]->end());
  }
  return out;
}

double world_log_prob(const World& world, const UnitSeq& prompt, const UnitSeq& continuation) {
  check_units(prompt, world.vocab());
  check_units(continuation, world.vocab());
  std::int64_t ctx = world.ctx.index_of(prompt);
  double lp = 0.0;
  for (Unit u : continuation) {
    lp += world.step_log_prob(ctx, u);
    ctx = world.ctx.push(ctx, u);
  }
  return lp;
}

UnitSeq greedy_path(const World& world, const UnitSeq& prompt, int max_len) {
  check_units(prompt, world.vocab());
  UnitSeq out;
  std::int64_t ctx = world.ctx.index_of(prompt);
  while (static_cast<int>(out.size()) < max_len) {
    Eigen::Index best = 0;
    world.table.row(ctx).maxCoeff(&best);
    const Unit u = static_cast<Unit>(best);
    out.push_back(u);
    if (u == world.vocab().eos_unit) break;
    ctx = world.ctx.push(ctx, u);
  }
  return out;
}

double min_row_ratio(const World& world) {
  double worst = std::numeric_limits<double>::infinity();
  for (std::int64_t r = 0; r < world.ctx.num_contexts(); ++r) {
    if (!world.reachable[static_cast<std::size_t>(r)]) continue;
    double mx = 0.0, mn = std::numeric_limits<double>::infinity();
    int nonzero = 0;
    for (Unit c = 0; c < world.vocab().size; ++c) {
      const double p = world.table(r, c);
      if (p > 0.0) {
        ++nonzero;
        mx = std::max(mx, p);
        mn = std::min(mn, p);
      }
    }
    if (nonzero >= 2 && mx > mn) worst = std::min(worst, mx / mn);
  }
  return worst;
}

json vocabulary_to_json(const Vocabulary& v) {
  return json{{"size", v.size}, {"boundary_unit", v.boundary_unit}, {"eos_unit", v.eos_unit}};
}

Vocabulary vocabulary_from_json(const json& j) {
  Vocabulary v;
  v.size = j.at("size").get<Unit>();
  v.boundary_unit = j.at("boundary_unit").get<Unit>();
  v.eos_unit = j.at("eos_unit").get<Unit>();
  return v;
}

json world_config_to_json(const WorldConfig& c) {
  return json{{"vocab", vocabulary_to_json(c.vocab)},
              {"markov_order", c.markov_order},
              {"n_words", c.n_words},
              {"max_word_len", c.max_word_len},
              {"word_len1_fraction", c.word_len1_fraction},
              {"eos_prob", c.eos_prob},
              {"alpha_first", c.alpha_first},
              {"alpha_rest", c.alpha_rest},
              {"min_row_ratio", c.min_row_ratio},
              {"uniform", c.uniform}};
}

WorldConfig world_config_from_json(const json& j) {
  WorldConfig c;
  c.vocab = vocabulary_from_json(j.at("vocab"));
  c.markov_order = j.at("markov_order").get<int>();
  c.n_words = j.at("n_words").get<int>();
  c.word_len1_fraction = j.at("word_len1_fraction").get<double>();
  c.eos_prob = j.at("eos_prob").get<double>();
  c.alpha_first = j.at("alpha_first").get<double>();
  c.alpha_rest = j.at("alpha_rest").get<double>();
  c.min_row_ratio = j.at("min_row_ratio").get<double>();
  c.uniform = j.at("uniform").get<bool>();
  return c;
}

void save_world(const World& world, const std::string& path) {
  json lex = json::array();
  for (const auto& [run, word] : world.lexicon.word_of_run) lex.push_back(json{{"units", run}, {"word", word}});
  json j{{"version", 1},
         {"seed", world.seed},
         {"config", world_config_to_json(world.config)},
         {"table", matrix_to_json(world.table)},
         {"reachable", world.reachable},
         {"lexicon", std::move(lex)}};
  save_json(path, j);
}

World load_world(const std::string& path) {
  const json j = load_json(path);
  World w;
  w.seed = j.at("seed").get<std::uint64_t>();
  w.config = world_config_from_json(j.at("config"));
  w.config.validate();
  w.ctx = ContextIndexer(w.config.vocab.size, w.config.markov_order);
  w.table = matrix_from_json(j.at("table"));
  if (w.table.rows() != w.ctx.num_contexts() || w.table.cols() != w.config.vocab.size)
    throw std::runtime_error("world table shape mismatch: " + path);
  w.reachable = j.at("reachable").get<std::vector<std::uint8_t>>();
  for (const auto& entry : j.at("lexicon"))
    w.lexicon.insert(entry.at("units").get<UnitSeq>(), entry.at("word").get<std::string>());
  return w;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::string out;
  for (const auto& e : corpus.entries) {
    out += json{{"id", e.id}, {"units", e.units}}.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

Corpus load_corpus(const std::string& path) {
  Corpus corpus;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    corpus.entries.push_back({j.at("id").get<std::string>(), j.at("units").get<UnitSeq>()});
  }
  return corpus;
}

}  // namespace ualign
