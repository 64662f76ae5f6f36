#include "ualign/units.hpp"

#include <stdexcept>

namespace ualign {

void Vocabulary::validate() const {
  if (size < 4) throw std::invalid_argument("vocabulary size must be at least 4");
  if (!contains(boundary_unit)) throw std::invalid_argument("boundary_unit out of range");
  if (!contains(eos_unit)) throw std::invalid_argument("eos_unit out of range");
  if (boundary_unit == eos_unit) throw std::invalid_argument("boundary_unit and eos_unit must differ");
}

UnitSeq dedup(const UnitSeq& seq) {
  UnitSeq out;
  out.reserve(seq.size());
  for (Unit u : seq) {
    if (out.empty() || out.back() != u) out.push_back(u);
  }
  return out;
}

bool is_deduped(const UnitSeq& seq) {
  for (std::size_t i = 1; i < seq.size(); ++i) {
    if (seq[i] == seq[i - 1]) return false;
  }
  return true;
}

void check_units(const UnitSeq& seq, const Vocabulary& vocab) {
  for (Unit u : seq) {
    if (!vocab.contains(u)) throw std::out_of_range("unit id " + std::to_string(u) + " outside vocabulary");
  }
}

ContextIndexer::ContextIndexer(Unit vocab_size, int order) : vocab_size_(vocab_size), order_(order) {
  if (vocab_size < 1) throw std::invalid_argument("context indexer needs a non-empty vocabulary");
  if (order < 1) throw std::invalid_argument("context order must be positive");
  alphabet_ = static_cast<std::int64_t>(vocab_size) + 1;
  std::int64_t n = 1;
  for (int i = 0; i < order; ++i) {
    if (n > (1LL << 42) / alphabet_) throw std::invalid_argument("context table too large for this order");
    n *= alphabet_;
  }
  num_contexts_ = n;
  shift_ = n / alphabet_;
  std::int64_t start = 0;
  for (int i = 0; i < order; ++i) start = start * alphabet_ + start_symbol();
  start_context_ = start;
}

std::int64_t ContextIndexer::index_of(std::span<const Unit> history) const {
  std::int64_t ctx = start_context_;
  const std::size_t begin = history.size() > static_cast<std::size_t>(order_)
                                ? history.size() - static_cast<std::size_t>(order_)
                                : 0;
  for (std::size_t i = begin; i < history.size(); ++i) ctx = push(ctx, history[i]);
  return ctx;
}

}  // namespace ualign
