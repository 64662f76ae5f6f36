#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ualign {

using Unit = std::int32_t;
using UnitSeq = std::vector<Unit>;

// Discrete unit vocabulary. Two ids are reserved by convention: a word
// boundary marker and an end-of-sequence terminator.
struct Vocabulary {
  Unit size = 50;
  Unit boundary_unit = 0;
  Unit eos_unit = 1;

  bool contains(Unit u) const { return u >= 0 && u < size; }
  void validate() const;  // throws std::invalid_argument
};

// Collapses consecutive duplicate ids to a single occurrence, preserving
// order otherwise. Idempotent.
UnitSeq dedup(const UnitSeq& seq);

bool is_deduped(const UnitSeq& seq);

// Throws std::out_of_range if any id falls outside the vocabulary.
void check_units(const UnitSeq& seq, const Vocabulary& vocab);

// Maps fixed-width unit histories to dense row indices. Histories shorter
// than the order are left-padded with a reserved start symbol, which gets
// its own context rows. The alphabet is therefore {0..vocab_size-1, start}.
class ContextIndexer {
 public:
  ContextIndexer() = default;
  ContextIndexer(Unit vocab_size, int order);

  int order() const { return order_; }
  Unit vocab_size() const { return vocab_size_; }
  Unit start_symbol() const { return vocab_size_; }
  std::int64_t num_contexts() const { return num_contexts_; }

  // Row index of the all-start history (the context before any unit).
  std::int64_t start_context() const { return start_context_; }

  // Shifts `unit` into the history encoded by `ctx`. O(1).
  std::int64_t push(std::int64_t ctx, Unit unit) const {
    return (ctx % shift_) * alphabet_ + unit;
  }

  // Context reached after reading `history` from the start context.
  std::int64_t index_of(std::span<const Unit> history) const;

  bool valid() const { return order_ > 0; }

 private:
  Unit vocab_size_ = 0;
  int order_ = 0;
  std::int64_t alphabet_ = 0;
  std::int64_t shift_ = 0;         // alphabet_^(order-1)
  std::int64_t num_contexts_ = 0;  // alphabet_^order
  std::int64_t start_context_ = 0;
};

}  // namespace ualign
