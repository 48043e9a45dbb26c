#include "promptforge/trigger_search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "promptforge/verbalizer_search.hpp"

namespace promptforge {

Direction direction_from_string(const std::string& s) {
  if (s == "attack") return Direction::attack;
  if (s == "benign") return Direction::benign;
  throw ConfigError("unknown direction: " + s);
}

std::string to_string(Direction d) { return d == Direction::attack ? "attack" : "benign"; }

std::vector<TokenId> CandidateSet::token_ids() const {
  std::vector<TokenId> out;
  out.reserve(entries.size());
  for (const auto& [tok, score] : entries) out.push_back(tok);
  return out;
}

std::vector<double> approximation_scores(const MaskedLm& lm, std::span<const PromptInstance> batch,
                                         std::span<const int> gold_labels, const Verbalizer& verbalizer,
                                         int slot) {
  if (batch.empty()) throw Error("approximation_scores: empty batch");
  if (batch.size() != gold_labels.size()) throw Error("approximation_scores: label count mismatch");
  std::vector<PromptView> views;
  views.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    const PromptInstance& inst = batch[i];
    if (slot < 0 || slot >= static_cast<int>(inst.trigger_indices.size()))
      throw Error("approximation_scores: slot out of range");
    PromptView pv;
    pv.prompt = inst.token_ids;
    pv.mask_index = inst.mask_index;
    pv.trigger_indices = inst.trigger_indices;
    pv.label_token_set = verbalizer.tokens_for(gold_labels[i]);
    pv.example_id = inst.source_example_id;
    views.push_back(pv);
  }
  auto [objective, grads] = averaged_objective_and_gradients(lm, views);
  (void)objective;
  auto g = grads.per_slot.row(slot);

  EmbeddingView ev = lm.embeddings();
  const Matrix& input = *ev.input;
  std::vector<double> scores(input.rows);
  for (int v = 0; v < input.rows; ++v) scores[v] = dot(input.row(v), g);
  return scores;
}

CandidateSet top_k_candidates(std::span<const double> scores, int k, Direction direction,
                              const std::vector<bool>& allowed, int slot_index) {
  if (k < 1) throw Error("top_k_candidates: k must be >= 1");
  if (allowed.size() != scores.size()) throw Error("top_k_candidates: filter length mismatch");

  std::vector<TokenId> order;
  for (size_t v = 0; v < scores.size(); ++v)
    if (allowed[v]) order.push_back(static_cast<TokenId>(v));

  const bool ascending = direction == Direction::attack;
  std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    if (scores[a] != scores[b]) return ascending ? scores[a] < scores[b] : scores[a] > scores[b];
    return a < b;
  });

  CandidateSet set;
  set.slot_index = slot_index;
  set.k = k;
  set.direction = direction;
  set.truncated = static_cast<size_t>(k) > order.size();
  size_t take = std::min(static_cast<size_t>(k), order.size());
  for (size_t i = 0; i < take; ++i) set.entries.emplace_back(order[i], scores[order[i]]);
  return set;
}

std::vector<CandidateSet> build_candidate_sets(const MaskedLm& lm,
                                               std::span<const LabeledExample> train_examples,
                                               const Template& tmpl, const Verbalizer& verbalizer,
                                               const CandidateConfig& config) {
  if (train_examples.empty()) throw Error("build_candidate_sets: empty train split");
  if (config.gradient_batch < 1) throw Error("build_candidate_sets: gradient_batch must be >= 1");

  // fixed-size random subsample, redrawn when resample_tag changes
  std::vector<size_t> idx(train_examples.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng rng(Rng::mix(Rng::mix(config.seed, 0x67726164ULL), config.resample_tag));
  rng.shuffle(idx);
  size_t take = std::min(static_cast<size_t>(config.gradient_batch), idx.size());

  std::vector<PromptInstance> batch;
  std::vector<int> gold;
  batch.reserve(take);
  for (size_t i = 0; i < take; ++i) {
    const LabeledExample& ex = train_examples[idx[i]];
    batch.push_back(instantiate(lm, tmpl, ex.text, ex.id));
    gold.push_back(ex.label);
  }

  std::vector<bool> allowed = scorable_tokens(lm);
  // a mask token inside the triggers would corrupt slot accounting
  if (lm.tokenizer().mask_token_id >= 0) allowed[lm.tokenizer().mask_token_id] = false;

  std::vector<CandidateSet> sets;
  for (int slot = 0; slot < tmpl.trigger_count(); ++slot) {
    if (config.only_slot >= 0 && slot != config.only_slot) continue;
    std::vector<double> scores = approximation_scores(lm, batch, gold, verbalizer, slot);
    sets.push_back(top_k_candidates(scores, config.k, config.direction, allowed, slot));
  }
  if (sets.empty()) throw Error("build_candidate_sets: slot selection produced no sets");
  return sets;
}

std::string candidates_to_jsonl(std::span<const CandidateSet> sets, const MaskedLm& lm) {
  std::string out;
  for (const CandidateSet& set : sets) {
    for (const auto& [tok, score] : set.entries) {
      nlohmann::json j;
      j["slot"] = set.slot_index;
      j["token_id"] = tok;
      j["token_string"] = lm.decode(std::span<const TokenId>(&tok, 1));
      j["score"] = score;
      out += j.dump();
      out.push_back('\n');
    }
  }
  return out;
}

}  // namespace promptforge
