#pragma once

#include <functional>
#include <string>
#include <vector>

#include "promptforge/data_eval.hpp"
#include "promptforge/model_backend.hpp"
#include "promptforge/prompting.hpp"
#include "promptforge/trigger_search.hpp"

namespace promptforge {

struct IterationRecord {
  int iteration = 0;
  int evaluated_count = 0;     // train-split template evaluations this iteration
  double train_acc = 0.0;      // iteration winner's train accuracy
  double selection_acc = 0.0;  // winner's selection-split accuracy (NaN if not taken)
  double best_metric = 0.0;    // running best after this iteration (NaN if not yet set)

  bool operator==(const IterationRecord&) const = default;
};

// Partial beam-search hypothesis: trigger prefix plus its train accuracy with
// the remaining slots still mask.
struct BeamEntry {
  TokenSeq prefix;
  double train_accuracy = 0.0;

  bool operator==(const BeamEntry&) const = default;
};

struct AttackState {
  std::string strategy;
  Direction direction = Direction::attack;
  std::uint64_t seed = 0;
  int iterations_done = 0;
  Template current_template;
  Template best_template;
  double best_metric = 0.0;  // best selection-split accuracy observed so far
  std::vector<IterationRecord> history;
  std::vector<BeamEntry> beam;  // beam search resume state
  double ppl = 0.0;             // fluent strategy only (NaN otherwise)
  std::vector<std::string> warnings;
};

std::string attack_state_to_json(const AttackState& state);
AttackState attack_state_from_json(const std::string& json_text);

using CheckpointFn = std::function<void(const AttackState&)>;

struct StrategyConfig {
  int train_eval_subsample = 1000;  // fixed seeded subsample used for all train evaluations
  int eval_batch = 48;
  std::uint64_t seed = 0;
};

// Per iteration: pick a uniform random slot, substitute every candidate token,
// adopt the train-accuracy winner, score it on the selection split, track the
// best. The per-iteration randomness is derived statelessly from (seed,
// iteration) so a resumed run continues the same trajectory.
//
// When refresh is non-null the chosen slot's candidate set is re-derived from
// the current template each iteration.
AttackState random_replacement(const MaskedLm& lm, const Template& init, const CandidateSet& candidates,
                               int iterations, std::span<const LabeledExample> train,
                               std::span<const LabeledExample> selection, const Verbalizer& verbalizer,
                               Direction direction, const StrategyConfig& config,
                               const CandidateConfig* refresh = nullptr,
                               const AttackState* resume_from = nullptr,
                               const CheckpointFn& checkpoint = {});

// Slots filled left to right from all-mask initialization; each step expands
// every beam entry with every candidate for that slot and keeps the
// beam_width best by train accuracy.
//
// When refresh is non-null, the step's candidate set is re-derived from the
// leading beam entry's partial template instead of the precomputed sets.
AttackState beam_search(const MaskedLm& lm, std::span<const CandidateSet> candidates_per_slot,
                        int trigger_count, int beam_width, std::span<const LabeledExample> train,
                        std::span<const LabeledExample> selection, const Verbalizer& verbalizer,
                        Direction direction, const StrategyConfig& config,
                        const CandidateConfig* refresh = nullptr,
                        const AttackState* resume_from = nullptr, const CheckpointFn& checkpoint = {});

// Each candidate token seeds a causal-LM continuation; the continuation is
// re-encoded with the masked-LM tokenizer and padded with mask ids or
// truncated to exactly trigger_count tokens. The train-accuracy winner is
// reported together with its perplexity under the causal LM.
AttackState fluent_attack(const MaskedLm& lm, const CausalLm& causal, const CandidateSet& candidates,
                          int trigger_count, std::span<const LabeledExample> train,
                          std::span<const LabeledExample> selection, const Verbalizer& verbalizer,
                          Direction direction, const StrategyConfig& config);

// exp of mean negative next-token log probability; requires length >= 2.
double perplexity(std::span<const TokenId> token_ids, const CausalLm& causal);

// Perplexity of a template's trigger sequence, bridged through decoded text.
// NaN when the causal encoding is too short to score.
double template_perplexity(const Template& tmpl, const MaskedLm& lm, const CausalLm& causal);

}  // namespace promptforge
