#include "promptforge/prompting.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"

namespace promptforge {

namespace {

using nlohmann::json;

// The trailing period is part of the template format. Backends whose
// vocabulary cannot express "." as a single real token assemble without it.
std::optional<TokenId> period_token(const MaskedLm& lm) {
  TokenSeq ids;
  try {
    ids = lm.encode(".");
  } catch (const BackendError&) {
    return std::nullopt;
  }
  if (ids.size() != 1) return std::nullopt;
  if (lm.tokenizer().is_special(ids[0])) return std::nullopt;
  return ids[0];
}

}  // namespace

const TokenSeq& Verbalizer::tokens_for(int label) const {
  auto it = label_to_tokens.find(label);
  if (it == label_to_tokens.end()) throw Error("label not in verbalizer: " + std::to_string(label));
  return it->second;
}

void Verbalizer::validate(int vocab_size) const {
  if (labels.empty()) throw Error("verbalizer has no labels");
  std::set<int> seen_labels;
  std::set<TokenId> seen_tokens;
  for (int label : labels) {
    if (!seen_labels.insert(label).second) throw Error("duplicate label in verbalizer");
    const TokenSeq& toks = tokens_for(label);
    if (toks.empty()) throw Error("empty token set for label " + std::to_string(label));
    for (TokenId t : toks) {
      if (vocab_size >= 0 && (t < 0 || t >= vocab_size))
        throw Error("verbalizer token id out of range: " + std::to_string(t));
      if (!seen_tokens.insert(t).second)
        throw Error("verbalizer token sets are not disjoint (token " + std::to_string(t) + ")");
    }
  }
  if (label_to_tokens.size() != labels.size()) throw Error("verbalizer map does not match label list");
}

PromptInstance instantiate(const MaskedLm& lm, const Template& tmpl, std::string_view sentence,
                           std::string_view example_id) {
  const TokenizerView& tv = lm.tokenizer();
  for (TokenId t : tmpl.trigger_token_ids)
    if (t < 0 || t >= tv.vocab_size) throw Error("template trigger id out of range: " + std::to_string(t));

  TokenSeq sent = lm.encode(sentence);
  std::optional<TokenId> period = period_token(lm);

  int fixed = tmpl.trigger_count() + 1;  // triggers + mask
  if (tv.bos_token_id) ++fixed;
  if (tv.eos_token_id) ++fixed;
  if (period) ++fixed;
  if (fixed > lm.max_len())
    throw Error("template and special tokens alone exceed the model max length (" +
                std::to_string(fixed) + " > " + std::to_string(lm.max_len()) + ")");
  int allowed_sentence = lm.max_len() - fixed;
  if (static_cast<int>(sent.size()) > allowed_sentence)
    sent.resize(allowed_sentence);  // truncate from the right end only

  PromptInstance inst;
  inst.source_example_id = std::string(example_id);
  if (tv.bos_token_id) inst.token_ids.push_back(*tv.bos_token_id);
  inst.token_ids.insert(inst.token_ids.end(), sent.begin(), sent.end());
  for (TokenId t : tmpl.trigger_token_ids) {
    inst.trigger_indices.push_back(static_cast<int>(inst.token_ids.size()));
    inst.token_ids.push_back(t);
  }
  inst.mask_index = static_cast<int>(inst.token_ids.size());
  inst.token_ids.push_back(tv.mask_token_id);
  if (period) inst.token_ids.push_back(*period);
  if (tv.eos_token_id) inst.token_ids.push_back(*tv.eos_token_id);
  return inst;
}

std::vector<double> label_log_scores_from(const MaskDistribution& dist, const Verbalizer& verbalizer) {
  std::vector<double> out;
  out.reserve(verbalizer.labels.size());
  std::vector<double> terms;
  for (int label : verbalizer.labels) {
    const TokenSeq& toks = verbalizer.tokens_for(label);
    terms.clear();
    for (TokenId t : toks) {
      if (t < 0 || t >= static_cast<TokenId>(dist.log_probs.size()))
        throw Error("verbalizer token id out of range: " + std::to_string(t));
      terms.push_back(dist.log_probs[t]);
    }
    out.push_back(log_sum_exp(terms));
  }
  return out;
}

std::vector<double> label_log_scores(const MaskedLm& lm, const PromptInstance& instance,
                                     const Verbalizer& verbalizer) {
  verbalizer.validate(lm.tokenizer().vocab_size);
  MaskDistribution dist = lm.mask_log_probs(instance.token_ids, instance.mask_index);
  return label_log_scores_from(dist, verbalizer);
}

double label_score(const MaskedLm& lm, const PromptInstance& instance, const Verbalizer& verbalizer,
                   int label) {
  auto it = std::find(verbalizer.labels.begin(), verbalizer.labels.end(), label);
  if (it == verbalizer.labels.end()) throw Error("label not in verbalizer: " + std::to_string(label));
  std::vector<double> scores = label_log_scores(lm, instance, verbalizer);
  return std::exp(scores[static_cast<size_t>(it - verbalizer.labels.begin())]);
}

int predict_label_from(const MaskDistribution& dist, const Verbalizer& verbalizer) {
  std::vector<double> scores = label_log_scores_from(dist, verbalizer);
  size_t best = 0;
  for (size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;  // ties keep the earlier label
  return verbalizer.labels[best];
}

int predict_label(const MaskedLm& lm, const PromptInstance& instance, const Verbalizer& verbalizer) {
  verbalizer.validate(lm.tokenizer().vocab_size);
  MaskDistribution dist = lm.mask_log_probs(instance.token_ids, instance.mask_index);
  return predict_label_from(dist, verbalizer);
}

std::string template_to_json(const Template& tmpl, const MaskedLm& lm) {
  json j;
  j["trigger_tokens"] = tmpl.trigger_token_ids;
  json strings = json::array();
  for (TokenId t : tmpl.trigger_token_ids) strings.push_back(lm.decode(std::span<const TokenId>(&t, 1)));
  j["trigger_strings"] = std::move(strings);
  j["layout"] = "input-triggers-mask";
  return j.dump();
}

Template template_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("bad template JSON: ") + e.what());
  }
  std::string layout = j.value("layout", std::string());
  if (layout != "input-triggers-mask") throw Error("unsupported template layout: " + layout);
  Template t;
  t.trigger_token_ids = j.at("trigger_tokens").get<TokenSeq>();
  return t;
}

std::string verbalizer_to_json(const Verbalizer& verbalizer) {
  json j;
  j["labels"] = verbalizer.labels;
  json tokens = json::object();
  for (const auto& [label, toks] : verbalizer.label_to_tokens) tokens[std::to_string(label)] = toks;
  j["tokens"] = std::move(tokens);
  return j.dump();
}

Verbalizer verbalizer_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("bad verbalizer JSON: ") + e.what());
  }
  Verbalizer v;
  v.labels = j.at("labels").get<std::vector<int>>();
  for (const auto& [key, toks] : j.at("tokens").items())
    v.label_to_tokens[std::stoi(key)] = toks.get<TokenSeq>();
  v.validate();
  return v;
}

}  // namespace promptforge
