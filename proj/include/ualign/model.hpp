#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>

#include "ualign/units.hpp"
#include "ualign/world.hpp"

namespace ualign {

struct AdapterConfig {
  int rank = 32;
  double alpha = 8.0;
};

// Tabular autoregressive unit model: a frozen logit table over fixed-width
// contexts plus a trainable low-rank additive adapter. With a zero adapter
// the model is exactly the frozen reference.
struct PolicyModel {
  Vocabulary vocab;
  int order = 2;  // context width in units
  ContextIndexer ctx;
  Eigen::MatrixXd base_logits;  // num_contexts x vocab.size, frozen after pretraining
  Eigen::MatrixXd adapter_a;    // num_contexts x rank
  Eigen::MatrixXd adapter_b;    // rank x vocab.size
  double alpha = 8.0;

  int rank() const { return static_cast<int>(adapter_a.cols()); }
  double adapter_scale() const { return alpha / rank(); }
  bool adapter_is_zero() const;
  void zero_adapter();

  Eigen::RowVectorXd effective_logits(std::int64_t ctx_index) const {
    return base_logits.row(ctx_index) + adapter_scale() * (adapter_a.row(ctx_index) * adapter_b);
  }
};

struct PretrainConfig {
  int order = 2;
  double smoothing = 0.5;
  AdapterConfig adapter;
};

// Uniform next-unit distribution everywhere; zero adapter.
PolicyModel make_uniform_model(const Vocabulary& vocab, int order = 2, AdapterConfig adapter = {});

// Independent N(0,1) base logits; zero adapter. Diagnostic baseline.
PolicyModel make_random_model(const Vocabulary& vocab, int order, std::uint64_t seed, AdapterConfig adapter = {});

// Count-based maximum likelihood with additive smoothing over all context
// rows; adapter initialized to zero.
PolicyModel mle_pretrain(const Corpus& corpus, const Vocabulary& vocab, const PretrainConfig& cfg);

// Exact sequence log-probability: sum of per-step log softmax terms.
double log_prob(const PolicyModel& model, const UnitSeq& prompt, const UnitSeq& continuation);

// exp(-log_prob / length).
double perplexity(const PolicyModel& model, const UnitSeq& prompt, const UnitSeq& continuation);

double mean_nll(const PolicyModel& model, const Corpus& corpus);

struct AdapterGrad {
  Eigen::MatrixXd da;  // num_contexts x rank
  Eigen::MatrixXd db;  // rank x vocab.size

  static AdapterGrad zero(const PolicyModel& model);
  void add_scaled(const AdapterGrad& other, double w);
  double squared_norm() const { return da.squaredNorm() + db.squaredNorm(); }
};

// Exact analytic gradient of log_prob with respect to the adapter factors.
AdapterGrad grad_adapter(const PolicyModel& model, const UnitSeq& prompt, const UnitSeq& continuation);

// Fused pass: adds weight * d(log_prob)/d(A,B) into `acc` and returns the
// log-probability. Only rows visited by the continuation are touched.
double accumulate_log_prob_grad(const PolicyModel& model, const UnitSeq& prompt, const UnitSeq& continuation,
                                double weight, AdapterGrad& acc);

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string corpus_id;
  std::string content_hash;  // filled on save
};

void save_checkpoint(const PolicyModel& model, const std::string& path, CheckpointMeta meta = {});
PolicyModel load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr);

}  // namespace ualign
