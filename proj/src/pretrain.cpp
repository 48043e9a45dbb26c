#include "promptforge/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace promptforge {

namespace {

// specials first, then corpus words alphabetically (deterministic regardless
// of count order)
std::vector<std::string> build_vocab(std::span<const LabeledExample> corpus, int min_count,
                                     bool with_mask) {
  std::map<std::string, int> counts;
  for (const LabeledExample& ex : corpus)
    for (const std::string& w : split_whitespace(ex.text)) ++counts[w];

  std::vector<std::string> vocab;
  vocab.push_back("<unk>");
  if (with_mask) vocab.push_back("<mask>");
  if (!counts.count(".")) vocab.push_back(".");
  for (const auto& [word, count] : counts)
    if (count >= min_count) vocab.push_back(word);
  return vocab;
}

std::vector<TokenSeq> encode_corpus(const MaskedLm& lm, std::span<const LabeledExample> corpus) {
  std::vector<TokenSeq> out;
  out.reserve(corpus.size());
  for (const LabeledExample& ex : corpus) out.push_back(lm.encode(ex.text));
  return out;
}

}  // namespace

ToyMaskedSpec pretrain_masked_lm(std::span<const LabeledExample> corpus, const PretrainConfig& config) {
  if (corpus.empty()) throw Error("pretrain_masked_lm: empty corpus");
  if (config.dim < 1) throw Error("pretrain_masked_lm: dim must be >= 1");

  ToyMaskedSpec spec;
  spec.vocab = build_vocab(corpus, config.min_count, true);
  spec.special_tokens = {"<unk>", "<mask>"};
  spec.mask_token = "<mask>";
  spec.unk_token = "<unk>";
  spec.dim = config.dim;
  spec.max_len = config.max_len;
  spec.head = ToyMaskedSpec::Head::softmax;
  spec.pooling = ToyMaskedSpec::Pooling::content;

  const int v = static_cast<int>(spec.vocab.size());
  const int d = config.dim;
  Rng rng(Rng::mix(config.seed, 0x70726574ULL));
  spec.input_embeddings = Matrix(v, d);
  spec.head_weight = Matrix(v, d);
  for (double& x : spec.input_embeddings.a) x = 0.1 * rng.normal();
  for (double& x : spec.head_weight.a) x = 0.1 * rng.normal();
  spec.head_bias.assign(v, 0.0);

  // encode with a throwaway model over the final vocab
  std::unique_ptr<MaskedLm> tok = make_toy_masked_lm(spec);
  std::vector<TokenSeq> sentences = encode_corpus(*tok, corpus);

  Matrix& emb = spec.input_embeddings;
  Matrix& head = spec.head_weight;
  std::vector<double>& bias = spec.head_bias;

  std::vector<size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), size_t{0});

  std::vector<double> h(d), dh(d), logits(v);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t si : order) {
      const TokenSeq& ids = sentences[si];
      const int len = static_cast<int>(ids.size());
      if (len < 2) continue;
      for (int t = 0; t < len; ++t) {
        // h = mean of the other positions
        std::fill(h.begin(), h.end(), 0.0);
        for (int p = 0; p < len; ++p) {
          if (p == t) continue;
          auto e = emb.row(ids[p]);
          for (int k = 0; k < d; ++k) h[k] += e[k];
        }
        const double inv_m = 1.0 / static_cast<double>(len - 1);
        for (double& x : h) x *= inv_m;

        for (int i = 0; i < v; ++i) logits[i] = dot(head.row(i), h) + bias[i];
        double lse = log_sum_exp(logits);

        // dlogits = softmax - onehot(target); sgd on head, bias, embeddings
        std::fill(dh.begin(), dh.end(), 0.0);
        const double lr = config.learning_rate;
        for (int i = 0; i < v; ++i) {
          double dlogit = std::exp(logits[i] - lse) - (i == ids[t] ? 1.0 : 0.0);
          auto u = head.row(i);
          for (int k = 0; k < d; ++k) {
            dh[k] += dlogit * u[k];
            u[k] -= lr * dlogit * h[k];
          }
          bias[i] -= lr * dlogit;
        }
        for (int p = 0; p < len; ++p) {
          if (p == t) continue;
          auto e = emb.row(ids[p]);
          for (int k = 0; k < d; ++k) e[k] -= lr * dh[k] * inv_m;
        }
      }
    }
  }
  return spec;
}

ToyCausalSpec train_bigram_lm(std::span<const LabeledExample> corpus, const BigramConfig& config) {
  if (corpus.empty()) throw Error("train_bigram_lm: empty corpus");
  if (config.alpha <= 0.0) throw Error("train_bigram_lm: alpha must be positive");

  ToyCausalSpec spec;
  spec.vocab = build_vocab(corpus, 1, false);
  spec.special_tokens = {"<unk>"};
  spec.unk_token = "<unk>";
  spec.kind = ToyCausalSpec::Kind::bigram;

  const int v = static_cast<int>(spec.vocab.size());
  std::map<std::string, TokenId> index;
  for (int i = 0; i < v; ++i) index[spec.vocab[i]] = i;

  Matrix counts(v, v, 0.0);
  for (const LabeledExample& ex : corpus) {
    std::vector<std::string> words = split_whitespace(ex.text);
    TokenId prev = -1;
    for (const std::string& w : words) {
      auto it = index.find(w);
      TokenId cur = it != index.end() ? it->second : index.at("<unk>");
      if (prev >= 0) counts.at(prev, cur) += 1.0;
      prev = cur;
    }
  }

  spec.log_transitions = Matrix(v, v, 0.0);
  for (int r = 0; r < v; ++r) {
    double row_total = 0.0;
    for (int c = 0; c < v; ++c) row_total += counts.at(r, c);
    double denom = row_total + config.alpha * static_cast<double>(v);
    for (int c = 0; c < v; ++c)
      spec.log_transitions.at(r, c) = std::log((counts.at(r, c) + config.alpha) / denom);
  }
  return spec;
}

}  // namespace promptforge
