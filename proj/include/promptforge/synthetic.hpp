#pragma once

#include <vector>

#include "promptforge/data_eval.hpp"

namespace promptforge {

// Desk-scale synthetic sentiment corpus in SST-2 shape (single sentence,
// binary label). Sentences mix neutral filler with sentiment-bearing words of
// the labeled class; `noise` is the chance each sentiment slot flips to the
// opposite lexicon.
struct SynthConfig {
  int per_class = 100;
  std::uint64_t seed = 0;
  double noise = 0.03;
  int min_words = 6;
  int max_words = 12;
};

std::vector<LabeledExample> make_synthetic_sentiment(const SynthConfig& config);

}  // namespace promptforge
