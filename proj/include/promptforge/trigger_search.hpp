#pragma once

#include <string>
#include <vector>

#include "promptforge/data_eval.hpp"
#include "promptforge/model_backend.hpp"
#include "promptforge/prompting.hpp"

namespace promptforge {

// attack minimizes the true-label probability; benign maximizes it (the
// Autoprompt-style baseline direction).
enum class Direction { attack, benign };

Direction direction_from_string(const std::string& s);
std::string to_string(Direction d);

// Ranked replacement candidates for one trigger slot. Entries are sorted in
// selection-preference order for the given direction; ties break toward the
// lower token id.
struct CandidateSet {
  int slot_index = 0;
  std::vector<std::pair<TokenId, double>> entries;  // (token, approximation score)
  int k = 0;
  Direction direction = Direction::attack;
  bool truncated = false;  // k exceeded the filtered vocabulary

  std::vector<TokenId> token_ids() const;
};

// First-order approximation of the objective change when token w replaces the
// slot: score(w) = w_in . g, with g the batch-averaged gradient of
// log P(y | prompt) at the slot. One score per vocabulary token.
std::vector<double> approximation_scores(const MaskedLm& lm, std::span<const PromptInstance> batch,
                                         std::span<const int> gold_labels, const Verbalizer& verbalizer,
                                         int slot);

// attack: the k smallest approximation scores; benign: the k largest.
// Filtered tokens (specials, whitespace decodes, the mask token) are excluded.
// If k exceeds the filtered vocabulary, everything is returned and the set is
// flagged truncated.
CandidateSet top_k_candidates(std::span<const double> scores, int k, Direction direction,
                              const std::vector<bool>& allowed, int slot_index = 0);

struct CandidateConfig {
  int k = 100;
  Direction direction = Direction::attack;
  int gradient_batch = 24;
  std::uint64_t seed = 0;
  std::uint64_t resample_tag = 0;  // varies per refresh so the batch is redrawn
  int only_slot = -1;              // >= 0: build just that slot's set
};

// Samples a gradient batch from the train split, instantiates prompts with the
// template, and produces one candidate set per trigger slot.
std::vector<CandidateSet> build_candidate_sets(const MaskedLm& lm,
                                               std::span<const LabeledExample> train_examples,
                                               const Template& tmpl, const Verbalizer& verbalizer,
                                               const CandidateConfig& config);

// Debug dump: JSON lines of {slot, token_id, token_string, score}.
std::string candidates_to_jsonl(std::span<const CandidateSet> sets, const MaskedLm& lm);

}  // namespace promptforge
