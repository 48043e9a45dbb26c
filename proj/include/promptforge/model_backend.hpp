#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "promptforge/util.hpp"

namespace promptforge {

struct TokenizerView {
  int vocab_size = 0;
  std::vector<TokenId> special_token_ids;  // sorted ascending
  TokenId mask_token_id = -1;
  std::optional<TokenId> bos_token_id;
  std::optional<TokenId> eos_token_id;
  std::optional<TokenId> unk_token_id;

  bool is_special(TokenId id) const;
};

// Read-only views over the backend's embedding tables. Rows = vocab_size.
struct EmbeddingView {
  const Matrix* input = nullptr;   // token input embeddings, |V| x d
  const Matrix* output = nullptr;  // output (softmax-side) embeddings, |V| x d
  int dim = 0;
};

struct MaskDistribution {
  std::vector<double> log_probs;  // natural log, length |V|
  int mask_index = 0;
};

// Gradient of the scalar objective w.r.t. each trigger slot's input embedding.
struct TriggerGradients {
  Matrix per_slot;  // trigger_count x d
};

// Masked-language-model side of the adapter: prediction, hidden states, and
// gradients of the label objective w.r.t. trigger-slot embeddings.
//
// An instance is confined to one logical execution context; the views it hands
// out (TokenizerView, EmbeddingView) are immutable after load and freely
// shareable.
class MaskedLm {
 public:
  virtual ~MaskedLm() = default;

  virtual const TokenizerView& tokenizer() const = 0;
  virtual EmbeddingView embeddings() const = 0;
  virtual int max_len() const = 0;

  // Content token ids only; never adds special framing tokens.
  virtual TokenSeq encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const TokenId> ids) const = 0;

  // Full-vocabulary log distribution at mask_index. prompt[mask_index] must be
  // the mask token; over-length prompts are an error, never truncated here.
  virtual MaskDistribution mask_log_probs(std::span<const TokenId> prompt, int mask_index) const = 0;

  // Final-layer hidden state at the mask position (length = hidden dim).
  virtual std::vector<double> mask_hidden_state(std::span<const TokenId> prompt, int mask_index) const = 0;

  // Objective = log sum_{w in label_token_set} P([MASK]=w | prompt), with
  // gradients w.r.t. the input embeddings currently occupying the trigger
  // slots. All probability math in log space.
  virtual std::pair<double, TriggerGradients> objective_and_trigger_gradients(
      std::span<const TokenId> prompt, int mask_index, std::span<const int> trigger_indices,
      std::span<const TokenId> label_token_set) const = 0;
};

// Causal-language-model side: scoring and generation.
class CausalLm {
 public:
  virtual ~CausalLm() = default;

  virtual const TokenizerView& tokenizer() const = 0;
  virtual TokenSeq encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const TokenId> ids) const = 0;

  // Sum of next-token log probabilities; requires length >= 2.
  virtual double causal_log_likelihood(std::span<const TokenId> ids) const = 0;

  // Continues prefix up to max_len tokens; greedy unless temperature > 0.
  // Deterministic for a fixed seed and sampling config.
  virtual TokenSeq generate(std::span<const TokenId> prefix, int max_len, std::uint64_t seed,
                            double temperature = 0.0) const = 0;
};

// --- toy / linear model specs ------------------------------------------------

// The linear masked model: the hidden state is the mean of selected input
// embeddings and the mask distribution is head(U * h + b).
//
//   head = softmax    log-probs are log_softmax(U h + b); exactly normalized.
//   head = loglinear  log-probs are U h + b verbatim; not normalized. Exists so
//                     that fixtures can make the label objective exactly linear
//                     in a slot embedding (singleton label sets).
//
//   pooling = triggers  h = mean over the trigger_window positions immediately
//                       before the mask; under the fixed prompt layout these
//                       are the trigger slots. Zero vector when the window is
//                       empty.
//   pooling = content   h = mean over every position except bos/eos framing
//                       and the mask slot itself. Mask tokens sitting in
//                       trigger slots still contribute their embedding.
struct ToyMaskedSpec {
  std::vector<std::string> vocab;
  std::vector<std::string> special_tokens;
  std::string mask_token = "<mask>";
  std::string unk_token;  // empty = unknown words are an encode error
  std::string bos_token;  // empty = no framing token
  std::string eos_token;
  int dim = 0;
  int max_len = 128;
  enum class Head { softmax, loglinear } head = Head::softmax;
  enum class Pooling { triggers, content } pooling = Pooling::triggers;
  int trigger_window = 0;         // pooled window size for triggers pooling
  Matrix input_embeddings;        // |V| x d
  Matrix output_embeddings;       // |V| x d; empty = tied to head_weight
  Matrix head_weight;             // |V| x d  (U)
  std::vector<double> head_bias;  // |V|      (b)
};

struct ToyCausalSpec {
  std::vector<std::string> vocab;
  std::vector<std::string> special_tokens;
  std::string unk_token;
  std::string eos_token;  // empty = generation never stops early
  enum class Kind { uniform, bigram } kind = Kind::uniform;
  Matrix log_transitions;  // |V| x |V| row log-distributions (bigram only)
};

ToyMaskedSpec toy_masked_spec_from_json(const std::string& json_text);
std::string toy_masked_spec_to_json(const ToyMaskedSpec& spec);
ToyCausalSpec toy_causal_spec_from_json(const std::string& json_text);
std::string toy_causal_spec_to_json(const ToyCausalSpec& spec);

std::unique_ptr<MaskedLm> make_toy_masked_lm(ToyMaskedSpec spec);
std::unique_ptr<CausalLm> make_toy_causal_lm(ToyCausalSpec spec);

// Backend selection by checkpoint identifier:
//   "toy:<file>"  toy spec JSON at <file>
//   <path>        spec JSON on disk
//   <name>        looked up as $PROMPTFORGE_CACHE/<name>.json
std::unique_ptr<MaskedLm> load_masked_lm(const std::string& identifier);
std::unique_ptr<CausalLm> load_causal_lm(const std::string& identifier);

// One prompt of a gradient batch. Each example carries its own label token set.
struct PromptView {
  std::span<const TokenId> prompt;
  int mask_index = 0;
  std::span<const int> trigger_indices;
  std::span<const TokenId> label_token_set;
  std::string example_id;  // carried into diagnostics
};

// Batch objective and gradients, averaged (not summed) over the batch so that
// scores are independent of batch size. Throws BackendError naming the
// offending example if any per-example result is non-finite.
std::pair<double, TriggerGradients> averaged_objective_and_gradients(const MaskedLm& lm,
                                                                     std::span<const PromptView> batch);

}  // namespace promptforge
