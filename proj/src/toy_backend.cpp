#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "json.hpp"
#include "promptforge/model_backend.hpp"

namespace promptforge {

namespace {

using nlohmann::json;

// Whitespace word tokenizer shared by the toy masked and causal models.
// Unknown words map to the unk token when one is declared, otherwise encoding
// them is an error.
struct WordVocab {
  std::vector<std::string> words;
  std::unordered_map<std::string, TokenId> index;
  TokenId unk_id = -1;

  explicit WordVocab(const std::vector<std::string>& vocab, const std::string& unk_token) {
    words = vocab;
    for (size_t i = 0; i < words.size(); ++i) {
      if (words[i].empty()) throw BackendError("vocab entry " + std::to_string(i) + " is empty");
      auto [it, inserted] = index.emplace(words[i], static_cast<TokenId>(i));
      if (!inserted) throw BackendError("duplicate vocab entry: " + words[i]);
    }
    if (!unk_token.empty()) {
      auto it = index.find(unk_token);
      if (it == index.end()) throw BackendError("unk token not in vocab: " + unk_token);
      unk_id = it->second;
    }
  }

  TokenSeq encode(std::string_view text) const {
    TokenSeq out;
    for (const auto& w : split_whitespace(text)) {
      auto it = index.find(w);
      if (it != index.end()) {
        out.push_back(it->second);
      } else if (unk_id >= 0) {
        out.push_back(unk_id);
      } else {
        throw BackendError("unknown token: '" + w + "'");
      }
    }
    return out;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id < 0 || id >= static_cast<TokenId>(words.size()))
        throw BackendError("token id out of range: " + std::to_string(id));
      if (!out.empty()) out.push_back(' ');
      out += words[id];
    }
    return out;
  }
};

TokenId required_token(const WordVocab& v, const std::string& tok, const char* what) {
  auto it = v.index.find(tok);
  if (it == v.index.end()) throw BackendError(std::string(what) + " not in vocab: " + tok);
  return it->second;
}

TokenizerView build_view(const WordVocab& vocab, const std::vector<std::string>& specials,
                         const std::string& mask, const std::string& bos, const std::string& eos,
                         const std::string& unk) {
  TokenizerView tv;
  tv.vocab_size = static_cast<int>(vocab.words.size());
  for (const auto& s : specials) tv.special_token_ids.push_back(required_token(vocab, s, "special token"));
  if (!mask.empty()) tv.mask_token_id = required_token(vocab, mask, "mask token");
  if (!bos.empty()) tv.bos_token_id = required_token(vocab, bos, "bos token");
  if (!eos.empty()) tv.eos_token_id = required_token(vocab, eos, "eos token");
  if (!unk.empty()) tv.unk_token_id = required_token(vocab, unk, "unk token");
  // mask/bos/eos/unk are special whether or not the checkpoint listed them
  if (tv.mask_token_id >= 0) tv.special_token_ids.push_back(tv.mask_token_id);
  if (tv.bos_token_id) tv.special_token_ids.push_back(*tv.bos_token_id);
  if (tv.eos_token_id) tv.special_token_ids.push_back(*tv.eos_token_id);
  if (tv.unk_token_id) tv.special_token_ids.push_back(*tv.unk_token_id);
  std::sort(tv.special_token_ids.begin(), tv.special_token_ids.end());
  tv.special_token_ids.erase(std::unique(tv.special_token_ids.begin(), tv.special_token_ids.end()),
                             tv.special_token_ids.end());
  return tv;
}

void check_shape(const Matrix& m, int rows, int cols, const char* name) {
  if (m.rows != rows || m.cols != cols)
    throw BackendError(std::string(name) + " has shape " + std::to_string(m.rows) + "x" +
                       std::to_string(m.cols) + ", expected " + std::to_string(rows) + "x" +
                       std::to_string(cols));
}

void check_matrix(const Matrix& m, int rows, int cols, const char* name) {
  check_shape(m, rows, cols, name);
  for (double v : m.a)
    if (!std::isfinite(v)) throw BackendError(std::string(name) + " contains a non-finite entry");
}

// log-probability table: -inf entries (zero probability) are legal
void check_log_matrix(const Matrix& m, int rows, int cols, const char* name) {
  check_shape(m, rows, cols, name);
  for (double v : m.a)
    if (std::isnan(v) || v > 0.0)
      throw BackendError(std::string(name) + " contains an entry that is not a log probability");
}

class ToyMaskedLm final : public MaskedLm {
 public:
  explicit ToyMaskedLm(ToyMaskedSpec spec)
      : spec_(std::move(spec)), vocab_(spec_.vocab, spec_.unk_token) {
    const int v = static_cast<int>(spec_.vocab.size());
    if (v == 0) throw BackendError("empty vocab");
    if (spec_.dim <= 0) throw BackendError("dim must be positive");
    check_matrix(spec_.input_embeddings, v, spec_.dim, "input_embeddings");
    check_matrix(spec_.head_weight, v, spec_.dim, "head_weight");
    if (!spec_.output_embeddings.empty()) check_matrix(spec_.output_embeddings, v, spec_.dim, "output_embeddings");
    if (static_cast<int>(spec_.head_bias.size()) != v) throw BackendError("head_bias length mismatch");
    if (spec_.mask_token.empty()) throw BackendError("masked spec needs a mask token");
    view_ = build_view(vocab_, spec_.special_tokens, spec_.mask_token, spec_.bos_token, spec_.eos_token,
                       spec_.unk_token);
  }

  const TokenizerView& tokenizer() const override { return view_; }

  EmbeddingView embeddings() const override {
    EmbeddingView ev;
    ev.input = &spec_.input_embeddings;
    ev.output = spec_.output_embeddings.empty() ? &spec_.head_weight : &spec_.output_embeddings;
    ev.dim = spec_.dim;
    return ev;
  }

  int max_len() const override { return spec_.max_len; }

  TokenSeq encode(std::string_view text) const override { return vocab_.encode(text); }
  std::string decode(std::span<const TokenId> ids) const override { return vocab_.decode(ids); }

  MaskDistribution mask_log_probs(std::span<const TokenId> prompt, int mask_index) const override {
    validate_prompt(prompt, mask_index);
    std::vector<double> h = pooled_state(prompt, mask_index);
    MaskDistribution dist;
    dist.mask_index = mask_index;
    dist.log_probs = head_log_probs(h);
    return dist;
  }

  std::vector<double> mask_hidden_state(std::span<const TokenId> prompt, int mask_index) const override {
    validate_prompt(prompt, mask_index);
    return pooled_state(prompt, mask_index);
  }

  std::pair<double, TriggerGradients> objective_and_trigger_gradients(
      std::span<const TokenId> prompt, int mask_index, std::span<const int> trigger_indices,
      std::span<const TokenId> label_token_set) const override {
    validate_prompt(prompt, mask_index);
    if (label_token_set.empty()) throw BackendError("empty label token set");
    for (size_t i = 0; i < trigger_indices.size(); ++i) {
      int t = trigger_indices[i];
      if (t < 0 || t >= static_cast<int>(prompt.size()) || t == mask_index)
        throw BackendError("bad trigger index: " + std::to_string(t));
      for (size_t j = i + 1; j < trigger_indices.size(); ++j)
        if (trigger_indices[j] == t) throw BackendError("duplicate trigger index: " + std::to_string(t));
    }
    for (TokenId w : label_token_set)
      if (w < 0 || w >= view_.vocab_size) throw BackendError("label token id out of range");

    std::vector<int> pooled = pooled_positions(prompt, mask_index);
    std::vector<double> h = mean_embedding(prompt, pooled);
    std::vector<double> z = logits(h);

    // dObjective/dz, all in log space.
    const int v = view_.vocab_size;
    std::vector<double> label_logits;
    label_logits.reserve(label_token_set.size());
    double objective;
    std::vector<double> dz(v, 0.0);
    if (spec_.head == ToyMaskedSpec::Head::softmax) {
      double lse_all = log_sum_exp(z);
      for (TokenId w : label_token_set) label_logits.push_back(z[w]);
      double lse_label = log_sum_exp(label_logits);
      objective = lse_label - lse_all;
      for (int i = 0; i < v; ++i) dz[i] = -std::exp(z[i] - lse_all);
      for (TokenId w : label_token_set) dz[w] += std::exp(z[w] - lse_label);
    } else {
      for (TokenId w : label_token_set) label_logits.push_back(z[w]);
      objective = log_sum_exp(label_logits);
      for (TokenId w : label_token_set) dz[w] += std::exp(z[w] - objective);
    }
    if (!std::isfinite(objective))
      throw BackendError("non-finite objective: label set has zero probability mass");

    // dh = U^T dz, then 1/M per pooled slot.
    std::vector<double> dh(spec_.dim, 0.0);
    for (int i = 0; i < v; ++i) {
      if (dz[i] == 0.0) continue;
      auto u = spec_.head_weight.row(i);
      for (int k = 0; k < spec_.dim; ++k) dh[k] += dz[i] * u[k];
    }
    TriggerGradients grads;
    grads.per_slot = Matrix(static_cast<int>(trigger_indices.size()), spec_.dim, 0.0);
    const double inv_m = pooled.empty() ? 0.0 : 1.0 / static_cast<double>(pooled.size());
    for (size_t s = 0; s < trigger_indices.size(); ++s) {
      bool in_pool = std::find(pooled.begin(), pooled.end(), trigger_indices[s]) != pooled.end();
      if (!in_pool) continue;
      auto g = grads.per_slot.row(static_cast<int>(s));
      for (int k = 0; k < spec_.dim; ++k) g[k] = dh[k] * inv_m;
    }
    return {objective, std::move(grads)};
  }

 private:
  void validate_prompt(std::span<const TokenId> prompt, int mask_index) const {
    if (static_cast<int>(prompt.size()) > spec_.max_len)
      throw BackendError("prompt length " + std::to_string(prompt.size()) + " exceeds model max length " +
                         std::to_string(spec_.max_len));
    if (mask_index < 0 || mask_index >= static_cast<int>(prompt.size()))
      throw BackendError("mask position out of range: " + std::to_string(mask_index));
    for (TokenId id : prompt)
      if (id < 0 || id >= view_.vocab_size) throw BackendError("prompt token id out of range");
    if (prompt[mask_index] != view_.mask_token_id)
      throw BackendError("prompt[mask_index] is not the mask token");
  }

  // triggers pooling: the trigger_window positions immediately before the mask
  // (under the fixed prompt layout these are exactly the trigger slots).
  // content pooling: every position except bos/eos framing and the mask slot.
  std::vector<int> pooled_positions(std::span<const TokenId> prompt, int mask_index) const {
    std::vector<int> out;
    if (spec_.pooling == ToyMaskedSpec::Pooling::triggers) {
      int w = std::min(spec_.trigger_window, mask_index);
      for (int p = mask_index - w; p < mask_index; ++p) out.push_back(p);
    } else {
      for (int p = 0; p < static_cast<int>(prompt.size()); ++p) {
        if (p == mask_index) continue;
        TokenId id = prompt[p];
        if (view_.bos_token_id && id == *view_.bos_token_id) continue;
        if (view_.eos_token_id && id == *view_.eos_token_id) continue;
        out.push_back(p);
      }
    }
    return out;
  }

  std::vector<double> mean_embedding(std::span<const TokenId> prompt, const std::vector<int>& pooled) const {
    std::vector<double> h(spec_.dim, 0.0);
    if (pooled.empty()) return h;
    for (int p : pooled) {
      auto e = spec_.input_embeddings.row(prompt[p]);
      for (int k = 0; k < spec_.dim; ++k) h[k] += e[k];
    }
    for (double& x : h) x /= static_cast<double>(pooled.size());
    return h;
  }

  std::vector<double> pooled_state(std::span<const TokenId> prompt, int mask_index) const {
    return mean_embedding(prompt, pooled_positions(prompt, mask_index));
  }

  std::vector<double> logits(const std::vector<double>& h) const {
    const int v = view_.vocab_size;
    std::vector<double> z(v);
    for (int i = 0; i < v; ++i) z[i] = dot(spec_.head_weight.row(i), h) + spec_.head_bias[i];
    return z;
  }

  std::vector<double> head_log_probs(const std::vector<double>& h) const {
    std::vector<double> z = logits(h);
    if (spec_.head == ToyMaskedSpec::Head::loglinear) return z;
    double lse = log_sum_exp(z);
    for (double& x : z) x -= lse;
    return z;
  }

  ToyMaskedSpec spec_;
  WordVocab vocab_;
  TokenizerView view_;
};

class ToyCausalLm final : public CausalLm {
 public:
  explicit ToyCausalLm(ToyCausalSpec spec) : spec_(std::move(spec)), vocab_(spec_.vocab, spec_.unk_token) {
    const int v = static_cast<int>(spec_.vocab.size());
    if (v == 0) throw BackendError("empty vocab");
    if (spec_.kind == ToyCausalSpec::Kind::bigram) {
      check_log_matrix(spec_.log_transitions, v, v, "log_transitions");
      for (int r = 0; r < v; ++r) {
        double lse = log_sum_exp(spec_.log_transitions.row(r));
        if (std::abs(lse) > 1e-6)
          throw BackendError("log_transitions row " + std::to_string(r) + " is not normalized");
      }
    }
    view_ = build_view(vocab_, spec_.special_tokens, "", "", spec_.eos_token, spec_.unk_token);
  }

  const TokenizerView& tokenizer() const override { return view_; }
  TokenSeq encode(std::string_view text) const override { return vocab_.encode(text); }
  std::string decode(std::span<const TokenId> ids) const override { return vocab_.decode(ids); }

  double causal_log_likelihood(std::span<const TokenId> ids) const override {
    if (ids.size() < 2) throw BackendError("sequence too short for causal scoring (need length >= 2)");
    for (TokenId id : ids)
      if (id < 0 || id >= view_.vocab_size) throw BackendError("token id out of range");
    double ll = 0.0;
    for (size_t t = 1; t < ids.size(); ++t) ll += next_log_prob(ids[t - 1])[ids[t]];
    return ll;
  }

  TokenSeq generate(std::span<const TokenId> prefix, int max_len, std::uint64_t seed,
                    double temperature) const override {
    if (prefix.empty()) throw BackendError("generation prefix must be non-empty");
    if (max_len < static_cast<int>(prefix.size()))
      throw BackendError("max_len smaller than prefix length");
    for (TokenId id : prefix)
      if (id < 0 || id >= view_.vocab_size) throw BackendError("prefix token id out of range");
    TokenSeq out(prefix.begin(), prefix.end());
    Rng rng(Rng::mix(seed, 0x67656e65ULL));
    while (static_cast<int>(out.size()) < max_len) {
      std::span<const double> row = next_log_prob(out.back());
      TokenId next;
      if (temperature <= 0.0) {
        next = 0;
        for (int i = 1; i < view_.vocab_size; ++i)
          if (row[i] > row[next]) next = i;  // ties keep the lower id
      } else {
        std::vector<double> scaled(view_.vocab_size);
        for (int i = 0; i < view_.vocab_size; ++i) scaled[i] = row[i] / temperature;
        double lse = log_sum_exp(scaled);
        double u = rng.uniform();
        double acc = 0.0;
        next = view_.vocab_size - 1;
        for (int i = 0; i < view_.vocab_size; ++i) {
          acc += std::exp(scaled[i] - lse);
          if (u < acc) {
            next = i;
            break;
          }
        }
      }
      out.push_back(next);
      if (view_.eos_token_id && next == *view_.eos_token_id) break;
    }
    return out;
  }

 private:
  std::span<const double> next_log_prob(TokenId prev) const {
    if (spec_.kind == ToyCausalSpec::Kind::uniform) {
      if (uniform_row_.empty())
        uniform_row_.assign(view_.vocab_size, -std::log(static_cast<double>(view_.vocab_size)));
      return uniform_row_;
    }
    return spec_.log_transitions.row(prev);
  }

  ToyCausalSpec spec_;
  WordVocab vocab_;
  TokenizerView view_;
  mutable std::vector<double> uniform_row_;
};

// -inf travels as null (JSON has no infinities); needed for log tables with
// zero-probability entries
json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows; ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols; ++c) {
      double v = m.at(r, c);
      if (std::isinf(v) && v < 0)
        row.push_back(nullptr);
      else
        row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const char* name) {
  if (!j.is_array()) throw BackendError(std::string(name) + ": expected nested array");
  Matrix m;
  m.rows = static_cast<int>(j.size());
  for (const auto& row : j) {
    if (!row.is_array()) throw BackendError(std::string(name) + ": expected nested array");
    if (m.cols == 0) m.cols = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != m.cols) throw BackendError(std::string(name) + ": ragged rows");
    for (const auto& v : row)
      m.a.push_back(v.is_null() ? -std::numeric_limits<double>::infinity() : v.get<double>());
  }
  return m;
}

}  // namespace

bool TokenizerView::is_special(TokenId id) const {
  return std::binary_search(special_token_ids.begin(), special_token_ids.end(), id);
}

std::unique_ptr<MaskedLm> make_toy_masked_lm(ToyMaskedSpec spec) {
  return std::make_unique<ToyMaskedLm>(std::move(spec));
}

std::unique_ptr<CausalLm> make_toy_causal_lm(ToyCausalSpec spec) {
  return std::make_unique<ToyCausalLm>(std::move(spec));
}

ToyMaskedSpec toy_masked_spec_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw BackendError(std::string("bad masked spec JSON: ") + e.what());
  }
  try {
    ToyMaskedSpec s;
    s.vocab = j.at("vocab").get<std::vector<std::string>>();
    s.special_tokens = j.value("special_tokens", std::vector<std::string>{});
    s.mask_token = j.value("mask_token", std::string("<mask>"));
    s.unk_token = j.value("unk_token", std::string());
    s.bos_token = j.value("bos_token", std::string());
    s.eos_token = j.value("eos_token", std::string());
    s.dim = j.at("dim").get<int>();
    s.max_len = j.value("max_len", 128);
    std::string head = j.value("head", std::string("softmax"));
    if (head == "softmax")
      s.head = ToyMaskedSpec::Head::softmax;
    else if (head == "loglinear")
      s.head = ToyMaskedSpec::Head::loglinear;
    else
      throw BackendError("unknown head: " + head);
    std::string pooling = j.value("pooling", std::string("triggers"));
    if (pooling == "triggers")
      s.pooling = ToyMaskedSpec::Pooling::triggers;
    else if (pooling == "content")
      s.pooling = ToyMaskedSpec::Pooling::content;
    else
      throw BackendError("unknown pooling: " + pooling);
    s.trigger_window = j.value("trigger_window", 0);
    s.input_embeddings = matrix_from_json(j.at("input_embeddings"), "input_embeddings");
    if (j.contains("output_embeddings"))
      s.output_embeddings = matrix_from_json(j.at("output_embeddings"), "output_embeddings");
    s.head_weight = matrix_from_json(j.at("head_weight"), "head_weight");
    s.head_bias = j.at("head_bias").get<std::vector<double>>();
    return s;
  } catch (const json::exception& e) {
    throw BackendError(std::string("bad masked spec JSON: ") + e.what());
  }
}

std::string toy_masked_spec_to_json(const ToyMaskedSpec& spec) {
  json j;
  j["vocab"] = spec.vocab;
  j["special_tokens"] = spec.special_tokens;
  j["mask_token"] = spec.mask_token;
  if (!spec.unk_token.empty()) j["unk_token"] = spec.unk_token;
  if (!spec.bos_token.empty()) j["bos_token"] = spec.bos_token;
  if (!spec.eos_token.empty()) j["eos_token"] = spec.eos_token;
  j["dim"] = spec.dim;
  j["max_len"] = spec.max_len;
  j["head"] = spec.head == ToyMaskedSpec::Head::softmax ? "softmax" : "loglinear";
  j["pooling"] = spec.pooling == ToyMaskedSpec::Pooling::triggers ? "triggers" : "content";
  j["trigger_window"] = spec.trigger_window;
  j["input_embeddings"] = matrix_to_json(spec.input_embeddings);
  if (!spec.output_embeddings.empty()) j["output_embeddings"] = matrix_to_json(spec.output_embeddings);
  j["head_weight"] = matrix_to_json(spec.head_weight);
  j["head_bias"] = spec.head_bias;
  return j.dump();
}

ToyCausalSpec toy_causal_spec_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw BackendError(std::string("bad causal spec JSON: ") + e.what());
  }
  try {
    ToyCausalSpec s;
    s.vocab = j.at("vocab").get<std::vector<std::string>>();
    s.special_tokens = j.value("special_tokens", std::vector<std::string>{});
    s.unk_token = j.value("unk_token", std::string());
    s.eos_token = j.value("eos_token", std::string());
    std::string kind = j.value("kind", std::string("uniform"));
    if (kind == "uniform")
      s.kind = ToyCausalSpec::Kind::uniform;
    else if (kind == "bigram")
      s.kind = ToyCausalSpec::Kind::bigram;
    else
      throw BackendError("unknown causal kind: " + kind);
    if (s.kind == ToyCausalSpec::Kind::bigram)
      s.log_transitions = matrix_from_json(j.at("log_transitions"), "log_transitions");
    return s;
  } catch (const json::exception& e) {
    throw BackendError(std::string("bad causal spec JSON: ") + e.what());
  }
}

std::string toy_causal_spec_to_json(const ToyCausalSpec& spec) {
  json j;
  j["vocab"] = spec.vocab;
  j["special_tokens"] = spec.special_tokens;
  if (!spec.unk_token.empty()) j["unk_token"] = spec.unk_token;
  if (!spec.eos_token.empty()) j["eos_token"] = spec.eos_token;
  j["kind"] = spec.kind == ToyCausalSpec::Kind::uniform ? "uniform" : "bigram";
  if (spec.kind == ToyCausalSpec::Kind::bigram) j["log_transitions"] = matrix_to_json(spec.log_transitions);
  return j.dump();
}

}  // namespace promptforge
