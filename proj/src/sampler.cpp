#include "ualign/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ualign {

void SamplingConfig::validate() const {
  if (temperature <= 0.0) throw std::invalid_argument("temperature must be positive");
  if (top_p <= 0.0 || top_p > 1.0) throw std::invalid_argument("top_p must lie in (0,1]");
  if (n_continuations < 1) throw std::invalid_argument("n_continuations must be positive");
  if (max_len < 1) throw std::invalid_argument("max_len must be positive");
}

Nucleus nucleus_distribution(const Eigen::RowVectorXd& logits, double temperature, double top_p) {
  const double t = std::max(temperature, 1e-6);
  Eigen::VectorXd z = logits.transpose() / t;
  const double mx = z.maxCoeff();
  Eigen::VectorXd p = (z.array() - mx).exp();
  p /= p.sum();

  // Descending by probability; index ascending on exact ties keeps the
  // kept set deterministic.
  std::vector<Unit> order(static_cast<std::size_t>(p.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Unit a, Unit b) { return p[a] > p[b]; });

  Nucleus nuc;
  if (top_p >= 1.0) {
    nuc.kept = std::move(order);
  } else {
    double cum = 0.0;
    for (Unit u : order) {
      nuc.kept.push_back(u);
      cum += p[u];
      if (cum >= top_p) break;
    }
  }
  nuc.probs.resize(static_cast<Eigen::Index>(nuc.kept.size()));
  for (std::size_t i = 0; i < nuc.kept.size(); ++i) nuc.probs[static_cast<Eigen::Index>(i)] = p[nuc.kept[i]];
  nuc.probs /= nuc.probs.sum();
  return nuc;
}

Unit nucleus_pick(const Eigen::RowVectorXd& logits, double temperature, double top_p, Rng& rng) {
  const Nucleus nuc = nucleus_distribution(logits, temperature, top_p);
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < nuc.kept.size(); ++i) {
    cum += nuc.probs[static_cast<Eigen::Index>(i)];
    if (u < cum) return nuc.kept[i];
  }
  return nuc.kept.back();
}

UnitSeq nucleus_sample(const PolicyModel& model, const UnitSeq& prompt, const SamplingConfig& cfg, Rng& rng,
                       UnitSeq* raw_out) {
  if (prompt.empty()) throw std::invalid_argument("prompt must be non-empty");
  cfg.validate();
  check_units(prompt, model.vocab);

  UnitSeq raw;
  std::int64_t ctx = model.ctx.index_of(prompt);
  while (static_cast<int>(raw.size()) < cfg.max_len) {
    const Unit u = nucleus_pick(model.effective_logits(ctx), cfg.temperature, cfg.top_p, rng);
    raw.push_back(u);
    if (u == model.vocab.eos_unit) break;
    ctx = model.ctx.push(ctx, u);
  }
  if (raw_out) *raw_out = raw;
  return dedup(raw);
}

std::vector<Candidate> sample_n(const PolicyModel& model, const UnitSeq& prompt, const SamplingConfig& cfg,
                                std::uint64_t prompt_stream_id) {
  cfg.validate();
  std::vector<Candidate> out(static_cast<std::size_t>(cfg.n_continuations));
  for (int i = 0; i < cfg.n_continuations; ++i) {
    Rng rng = Rng::substream(cfg.seed, {0x5a, prompt_stream_id, static_cast<std::uint64_t>(i)});
    out[static_cast<std::size_t>(i)].units = nucleus_sample(model, prompt, cfg, rng);
  }
  return out;
}

const char* segment_reject_name(SegmentReject r) {
  switch (r) {
    case SegmentReject::too_short: return "too-short";
    case SegmentReject::no_boundary: return "no-boundary";
    case SegmentReject::empty_side: return "empty-side";
  }
  return "unknown";
}

std::variant<Segmented, SegmentReject> segment_prompt(const UnitSeq& seq, int target_len, const Vocabulary& vocab) {
  if (target_len < 1) throw std::invalid_argument("target_len must be positive");
  if (static_cast<int>(seq.size()) < 2 * target_len) return SegmentReject::too_short;

  std::ptrdiff_t best = -1;
  long best_dist = 0;
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(seq.size()); ++i) {
    if (seq[static_cast<std::size_t>(i)] != vocab.boundary_unit) continue;
    const long dist = std::labs(static_cast<long>(i) - static_cast<long>(target_len));
    if (best < 0 || dist < best_dist) {
      best = i;
      best_dist = dist;
    }
  }
  if (best < 0) return SegmentReject::no_boundary;
  const std::size_t cut = static_cast<std::size_t>(best) + 1;
  if (cut >= seq.size()) return SegmentReject::empty_side;
  return Segmented{UnitSeq(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(cut)),
                   UnitSeq(seq.begin() + static_cast<std::ptrdiff_t>(cut), seq.end())};
}

}  // namespace ualign
