#pragma once

#include <optional>
#include <string>

#include "ualign/units.hpp"

namespace ualign {

struct CandidateScores {
  double auto_bleu = 0.0;           // [0,1]
  std::optional<double> ppl;        // >= 1 when present
  std::optional<int> judge;         // 1..5 when present
  std::optional<std::string> judge_error;
};

// One sampled continuation for a prompt, plus whatever scoring has been
// attached so far.
struct Candidate {
  UnitSeq units;
  std::string transcript;
  CandidateScores scores;
};

}  // namespace ualign
