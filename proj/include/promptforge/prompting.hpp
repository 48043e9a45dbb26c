#pragma once

#include <map>
#include <string>
#include <vector>

#include "promptforge/model_backend.hpp"
#include "promptforge/util.hpp"

namespace promptforge {

// A reusable prompt skeleton. The slot layout is fixed to
//   {sentence} [T]*N [P] .
// with the trailing period appended when the backend can encode one.
struct Template {
  TokenSeq trigger_token_ids;

  int trigger_count() const { return static_cast<int>(trigger_token_ids.size()); }
  bool operator==(const Template&) const = default;
};

struct PromptInstance {
  TokenSeq token_ids;
  int mask_index = 0;
  std::vector<int> trigger_indices;
  std::string source_example_id;
};

// Injective map label -> token-id set. Sets are pairwise disjoint and the
// label order is significant (it breaks prediction ties).
struct Verbalizer {
  std::vector<int> labels;
  std::map<int, TokenSeq> label_to_tokens;

  const TokenSeq& tokens_for(int label) const;
  void validate(int vocab_size = -1) const;
  bool operator==(const Verbalizer&) const = default;
};

// Assembles a prompt. If the full sequence would exceed the backend max
// length, the sentence segment is truncated from its right end; triggers and
// mask always survive. A template whose fixed parts alone exceed the max
// length is an error.
PromptInstance instantiate(const MaskedLm& lm, const Template& tmpl, std::string_view sentence,
                           std::string_view example_id = "");

// sum_{w in V_label} P([MASK]=w | prompt), computed in log space.
double label_score(const MaskedLm& lm, const PromptInstance& instance, const Verbalizer& verbalizer,
                   int label);

// log label scores in verbalizer label order, from a single backend call.
std::vector<double> label_log_scores(const MaskedLm& lm, const PromptInstance& instance,
                                     const Verbalizer& verbalizer);
std::vector<double> label_log_scores_from(const MaskDistribution& dist, const Verbalizer& verbalizer);

// Argmax over label scores; ties go to the earlier label in declared order.
int predict_label(const MaskedLm& lm, const PromptInstance& instance, const Verbalizer& verbalizer);
int predict_label_from(const MaskDistribution& dist, const Verbalizer& verbalizer);

std::string template_to_json(const Template& tmpl, const MaskedLm& lm);
Template template_from_json(const std::string& json_text);
std::string verbalizer_to_json(const Verbalizer& verbalizer);
Verbalizer verbalizer_from_json(const std::string& json_text);

}  // namespace promptforge
