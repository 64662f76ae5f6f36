#include "ualign/model.hpp"

#include <cmath>
#include <stdexcept>

#include "ualign/rng.hpp"
#include "ualign/serde.hpp"

namespace ualign {

namespace {

int clamped_rank(const AdapterConfig& cfg, std::int64_t contexts, Unit vocab_size) {
  const std::int64_t cap = std::min<std::int64_t>(contexts, vocab_size);
  return static_cast<int>(std::min<std::int64_t>(cfg.rank, cap));
}

PolicyModel blank_model(const Vocabulary& vocab, int order, const AdapterConfig& adapter) {
  vocab.validate();
  if (order < 1) throw std::invalid_argument("model order must be positive");
  if (adapter.rank < 1) throw std::invalid_argument("adapter rank must be positive");
  if (adapter.alpha <= 0.0) throw std::invalid_argument("adapter alpha must be positive");
  PolicyModel m;
  m.vocab = vocab;
  m.order = order;
  m.ctx = ContextIndexer(vocab.size, order);
  m.alpha = adapter.alpha;
  const int r = clamped_rank(adapter, m.ctx.num_contexts(), vocab.size);
  m.base_logits = Eigen::MatrixXd::Zero(m.ctx.num_contexts(), vocab.size);
  m.adapter_a = Eigen::MatrixXd::Zero(m.ctx.num_contexts(), r);
  m.adapter_b = Eigen::MatrixXd::Zero(r, vocab.size);
  return m;
}

double log_softmax_at(const Eigen::RowVectorXd& logits, Unit target) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits[target] - lse;
}

}  // namespace

bool PolicyModel::adapter_is_zero() const {
  return adapter_a.isZero(0.0) && adapter_b.isZero(0.0);
}

void PolicyModel::zero_adapter() {
  adapter_a.setZero();
  adapter_b.setZero();
}

PolicyModel make_uniform_model(const Vocabulary& vocab, int order, AdapterConfig adapter) {
  return blank_model(vocab, order, adapter);
}

PolicyModel make_random_model(const Vocabulary& vocab, int order, std::uint64_t seed, AdapterConfig adapter) {
  PolicyModel m = blank_model(vocab, order, adapter);
  Rng rng = Rng::substream(seed, {0x4d});
  for (Eigen::Index r = 0; r < m.base_logits.rows(); ++r)
    for (Eigen::Index c = 0; c < m.base_logits.cols(); ++c) m.base_logits(r, c) = rng.normal();
  return m;
}

PolicyModel mle_pretrain(const Corpus& corpus, const Vocabulary& vocab, const PretrainConfig& cfg) {
  if (corpus.entries.empty()) throw std::invalid_argument("cannot pretrain on an empty corpus");
  if (cfg.smoothing <= 0.0) throw std::invalid_argument("smoothing must be positive");
  PolicyModel m = blank_model(vocab, cfg.order, cfg.adapter);

  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(m.ctx.num_contexts(), vocab.size);
  for (const auto& entry : corpus.entries) {
    check_units(entry.units, vocab);
    std::int64_t ctx = m.ctx.start_context();
    for (Unit u : entry.units) {
      counts(ctx, u) += 1.0;
      ctx = m.ctx.push(ctx, u);
    }
  }
  const double denom_smoothing = cfg.smoothing * vocab.size;
  for (Eigen::Index r = 0; r < counts.rows(); ++r) {
    const double total = counts.row(r).sum() + denom_smoothing;
    for (Eigen::Index c = 0; c < counts.cols(); ++c)
      m.base_logits(r, c) = std::log((counts(r, c) + cfg.smoothing) / total);
  }
  return m;
}

double log_prob(const PolicyModel& model, const UnitSeq& prompt, const UnitSeq& continuation) {
  if (continuation.empty()) throw std::invalid_argument("continuation must be non-empty");
  check_units(prompt, model.vocab);
  check_units(continuation, model.vocab);
  std::int64_t ctx = model.ctx.index_of(prompt);
  double lp = 0.0;
  for (Unit u : continuation) {
    lp += log_softmax_at(model.effective_logits(ctx), u);
    ctx = model.ctx.push(ctx, u);
  }
  return lp;
}

double perplexity(const PolicyModel& model, const UnitSeq& prompt, const UnitSeq& continuation) {
  const double lp = log_prob(model, prompt, continuation);
  return std::exp(-lp / static_cast<double>(continuation.size()));
}

double mean_nll(const PolicyModel& model, const Corpus& corpus) {
  double total = 0.0;
  std::int64_t units = 0;
  for (const auto& entry : corpus.entries) {
    total -= log_prob(model, {}, entry.units);
    units += static_cast<std::int64_t>(entry.units.size());
  }
  if (units == 0) throw std::invalid_argument("empty corpus");
  return total / static_cast<double>(units);
}

AdapterGrad AdapterGrad::zero(const PolicyModel& model) {
  return {Eigen::MatrixXd::Zero(model.adapter_a.rows(), model.adapter_a.cols()),
          Eigen::MatrixXd::Zero(model.adapter_b.rows(), model.adapter_b.cols())};
}

void AdapterGrad::add_scaled(const AdapterGrad& other, double w) {
  da += w * other.da;
  db += w * other.db;
}

double accumulate_log_prob_grad(const PolicyModel& model, const UnitSeq& prompt, const UnitSeq& continuation,
                                double weight, AdapterGrad& acc) {
  if (continuation.empty()) throw std::invalid_argument("continuation must be non-empty");
  check_units(prompt, model.vocab);
  check_units(continuation, model.vocab);
  const double scale = model.adapter_scale();
  std::int64_t ctx = model.ctx.index_of(prompt);
  double lp = 0.0;
  Eigen::RowVectorXd probs;
  for (Unit u : continuation) {
    const Eigen::RowVectorXd z = model.effective_logits(ctx);
    const double mx = z.maxCoeff();
    probs = (z.array() - mx).exp();
    const double total = probs.sum();
    lp += z[u] - (mx + std::log(total));
    probs /= total;

    // d log softmax / d z = e_u - p; chain through z = base + scale * A_c B.
    probs = -probs;
    probs[u] += 1.0;
    acc.da.row(ctx) += (weight * scale) * (probs * model.adapter_b.transpose());
    acc.db += (weight * scale) * (model.adapter_a.row(ctx).transpose() * probs);
    ctx = model.ctx.push(ctx, u);
  }
  return lp;
}

AdapterGrad grad_adapter(const PolicyModel& model, const UnitSeq& prompt, const UnitSeq& continuation) {
  AdapterGrad g = AdapterGrad::zero(model);
  accumulate_log_prob_grad(model, prompt, continuation, 1.0, g);
  return g;
}

void save_checkpoint(const PolicyModel& model, const std::string& path, CheckpointMeta meta) {
  json body{{"version", 1},
            {"order", model.order},
            {"vocab", {{"size", model.vocab.size},
                       {"boundary_unit", model.vocab.boundary_unit},
                       {"eos_unit", model.vocab.eos_unit}}},
            {"alpha", model.alpha},
            {"rank", model.rank()},
            {"base_logits", matrix_to_json(model.base_logits)},
            {"adapter_a", matrix_to_json(model.adapter_a)},
            {"adapter_b", matrix_to_json(model.adapter_b)}};
  meta.content_hash = hex64(fnv1a(body.dump()));
  body["provenance"] = json{{"seed", meta.seed}, {"corpus_id", meta.corpus_id}, {"content_hash", meta.content_hash}};
  save_json(path, body);
}

PolicyModel load_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
  const json j = load_json(path);
  PolicyModel m;
  m.order = j.at("order").get<int>();
  m.vocab.size = j.at("vocab").at("size").get<Unit>();
  m.vocab.boundary_unit = j.at("vocab").at("boundary_unit").get<Unit>();
  m.vocab.eos_unit = j.at("vocab").at("eos_unit").get<Unit>();
  m.vocab.validate();
  m.ctx = ContextIndexer(m.vocab.size, m.order);
  m.alpha = j.at("alpha").get<double>();
  m.base_logits = matrix_from_json(j.at("base_logits"));
  m.adapter_a = matrix_from_json(j.at("adapter_a"));
  m.adapter_b = matrix_from_json(j.at("adapter_b"));
  if (m.base_logits.rows() != m.ctx.num_contexts() || m.base_logits.cols() != m.vocab.size)
    throw std::runtime_error("checkpoint logits shape mismatch: " + path);
  if (m.adapter_a.rows() != m.ctx.num_contexts() || m.adapter_a.cols() != m.adapter_b.rows() ||
      m.adapter_b.cols() != m.vocab.size)
    throw std::runtime_error("checkpoint adapter shape mismatch: " + path);
  if (meta_out && j.contains("provenance")) {
    meta_out->seed = j.at("provenance").at("seed").get<std::uint64_t>();
    meta_out->corpus_id = j.at("provenance").at("corpus_id").get<std::string>();
    meta_out->content_hash = j.at("provenance").at("content_hash").get<std::string>();
  }
  return m;
}

}  // namespace ualign
