#pragma once

#include <string>
#include <vector>

#include "promptforge/data_eval.hpp"
#include "promptforge/model_backend.hpp"
#include "promptforge/prompting.hpp"

namespace promptforge {

// Multinomial logistic head over mask-position hidden states.
struct LabelHead {
  std::vector<int> labels;
  Matrix weights;            // |L| x d
  std::vector<double> bias;  // |L|
};

struct TrainedHead {
  LabelHead head;
  bool degenerate_warning = false;  // all states identical across labels
};

// Per-label vocabulary ranking, sorted descending by score; ties break toward
// the lower token id.
struct ScoredVocab {
  std::vector<int> labels;
  std::vector<std::vector<std::pair<TokenId, double>>> entries;  // parallel to labels
};

struct MaskState {
  std::vector<double> state;
  int label = 0;
  std::string example_id;
};

struct HeadTrainConfig {
  int epochs = 50;
  double learning_rate = 1e-2;
  int batch_size = 24;
  std::uint64_t seed = 0;
};

// Tokens eligible as mask answers / trigger candidates: non-special and with a
// non-empty, non-whitespace decoded form.
std::vector<bool> scorable_tokens(const MaskedLm& lm);

// Final-layer hidden state at the mask position, one per example. Backend
// failures propagate with the example id attached.
std::vector<MaskState> collect_mask_states(const MaskedLm& lm, std::span<const LabeledExample> examples,
                                           const Template& tmpl);

TrainedHead train_label_head(std::span<const MaskState> states, std::vector<int> labels,
                             const HeadTrainConfig& config);

// s(y, w) = w_out . weight_y + bias_y for every non-filtered vocabulary token.
ScoredVocab score_vocab(const LabelHead& head, const EmbeddingView& embeddings,
                        const std::vector<bool>& allowed);

// Top-k per label with disjointness preserved: a token claimed by two labels
// goes to the one where it ranks higher (then higher score, then label order);
// the loser takes its next candidate.
Verbalizer select_verbalizer(const ScoredVocab& scored, int k_labels);

struct VerbalizerSearchConfig {
  int k_labels = 3;
  HeadTrainConfig train;
};

struct VerbalizerSearchResult {
  Verbalizer verbalizer;
  ScoredVocab scores;  // mean over per-epoch snapshots
  bool degenerate_warning = false;
};

// Full search: collect states, train the head for config.train.epochs epochs
// snapshotting vocabulary scores after each, average the snapshots, select
// top-k per label.
VerbalizerSearchResult search_verbalizer(const MaskedLm& lm, std::span<const LabeledExample> examples,
                                         std::vector<int> labels, const Template& tmpl,
                                         const VerbalizerSearchConfig& config);

// Qualitative report: top `top_n` scored words per label.
std::string render_scored_vocab(const ScoredVocab& scored, const MaskedLm& lm, int top_n = 25);

}  // namespace promptforge
