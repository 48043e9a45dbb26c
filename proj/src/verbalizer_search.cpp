#include "promptforge/verbalizer_search.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace promptforge {

namespace {

// One SGD pass infrastructure shared by train_label_head and the snapshotting
// search driver.
class LogisticTrainer {
 public:
  LogisticTrainer(std::span<const MaskState> states, std::vector<int> labels, const HeadTrainConfig& config)
      : states_(states), config_(config), rng_(Rng::mix(config.seed, 0x68656164ULL)) {
    if (states.empty()) throw Error("no states to train on");
    if (labels.size() < 2) throw Error("label head training needs at least 2 labels");
    dim_ = static_cast<int>(states.front().state.size());
    std::map<int, int> coverage;
    for (const auto& s : states_) {
      if (static_cast<int>(s.state.size()) != dim_) throw Error("inconsistent state dimensions");
      if (std::find(labels.begin(), labels.end(), s.label) == labels.end())
        throw Error("state label " + std::to_string(s.label) + " not in declared label list");
      ++coverage[s.label];
    }
    for (int label : labels)
      if (coverage[label] == 0)
        throw Error("label " + std::to_string(label) + " has no training states");
    head_.labels = std::move(labels);
    head_.weights = Matrix(static_cast<int>(head_.labels.size()), dim_, 0.0);
    head_.bias.assign(head_.labels.size(), 0.0);
    for (size_t i = 0; i < head_.labels.size(); ++i) label_index_[head_.labels[i]] = static_cast<int>(i);
    order_.resize(states_.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }

  void run_epoch() {
    rng_.shuffle(order_);
    const int n_labels = static_cast<int>(head_.labels.size());
    size_t pos = 0;
    while (pos < order_.size()) {
      size_t end = std::min(pos + static_cast<size_t>(std::max(1, config_.batch_size)), order_.size());
      Matrix dw(n_labels, dim_, 0.0);
      std::vector<double> db(n_labels, 0.0);
      for (size_t b = pos; b < end; ++b) {
        const MaskState& s = states_[order_[b]];
        std::vector<double> logits(n_labels);
        for (int l = 0; l < n_labels; ++l) logits[l] = dot(head_.weights.row(l), s.state) + head_.bias[l];
        double lse = log_sum_exp(logits);
        int gold = label_index_.at(s.label);
        for (int l = 0; l < n_labels; ++l) {
          double dlogit = std::exp(logits[l] - lse) - (l == gold ? 1.0 : 0.0);
          auto w = dw.row(l);
          for (int k = 0; k < dim_; ++k) w[k] += dlogit * s.state[k];
          db[l] += dlogit;
        }
      }
      const double scale = config_.learning_rate / static_cast<double>(end - pos);
      for (int l = 0; l < n_labels; ++l) {
        auto w = head_.weights.row(l);
        auto g = dw.row(l);
        for (int k = 0; k < dim_; ++k) w[k] -= scale * g[k];
        head_.bias[l] -= scale * db[l];
      }
      pos = end;
    }
  }

  const LabelHead& head() const { return head_; }
  int dim() const { return dim_; }

  bool degenerate() const {
    for (size_t i = 1; i < states_.size(); ++i)
      if (states_[i].state != states_.front().state) return false;
    return true;
  }

 private:
  std::span<const MaskState> states_;
  HeadTrainConfig config_;
  Rng rng_;
  int dim_ = 0;
  LabelHead head_;
  std::map<int, int> label_index_;
  std::vector<size_t> order_;
};

// Raw score matrix |L| x |V|; filtered tokens hold -inf.
Matrix raw_scores(const LabelHead& head, const EmbeddingView& embeddings, const std::vector<bool>& allowed) {
  if (head.weights.cols != embeddings.dim)
    throw Error("label head dimension " + std::to_string(head.weights.cols) +
                " does not match embedding dimension " + std::to_string(embeddings.dim));
  const Matrix& out = *embeddings.output;
  if (static_cast<int>(allowed.size()) != out.rows) throw Error("token filter length mismatch");
  Matrix scores(head.weights.rows, out.rows, -std::numeric_limits<double>::infinity());
  for (int l = 0; l < head.weights.rows; ++l) {
    auto w = head.weights.row(l);
    for (int v = 0; v < out.rows; ++v) {
      if (!allowed[v]) continue;
      scores.at(l, v) = dot(out.row(v), w) + head.bias[l];
    }
  }
  return scores;
}

ScoredVocab sorted_from_raw(const std::vector<int>& labels, const Matrix& raw) {
  ScoredVocab sv;
  sv.labels = labels;
  sv.entries.resize(labels.size());
  for (int l = 0; l < raw.rows; ++l) {
    auto& entries = sv.entries[l];
    for (int v = 0; v < raw.cols; ++v) {
      double s = raw.at(l, v);
      if (std::isinf(s) && s < 0) continue;
      entries.emplace_back(static_cast<TokenId>(v), s);
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
  }
  return sv;
}

}  // namespace

std::vector<bool> scorable_tokens(const MaskedLm& lm) {
  const TokenizerView& tv = lm.tokenizer();
  std::vector<bool> allowed(tv.vocab_size, true);
  for (TokenId id : tv.special_token_ids) allowed[id] = false;
  for (TokenId id = 0; id < tv.vocab_size; ++id) {
    if (!allowed[id]) continue;
    std::string s = lm.decode(std::span<const TokenId>(&id, 1));
    if (trim(s).empty()) allowed[id] = false;
  }
  return allowed;
}

std::vector<MaskState> collect_mask_states(const MaskedLm& lm, std::span<const LabeledExample> examples,
                                           const Template& tmpl) {
  if (examples.empty()) throw Error("collect_mask_states: no examples");
  std::vector<MaskState> out;
  out.reserve(examples.size());
  for (const LabeledExample& ex : examples) {
    try {
      PromptInstance inst = instantiate(lm, tmpl, ex.text, ex.id);
      MaskState ms;
      ms.state = lm.mask_hidden_state(inst.token_ids, inst.mask_index);
      ms.label = ex.label;
      ms.example_id = ex.id;
      out.push_back(std::move(ms));
    } catch (const std::exception& e) {
      throw Error("collect_mask_states failed at example '" + ex.id + "': " + e.what());
    }
  }
  return out;
}

TrainedHead train_label_head(std::span<const MaskState> states, std::vector<int> labels,
                             const HeadTrainConfig& config) {
  LogisticTrainer trainer(states, std::move(labels), config);
  TrainedHead result;
  result.degenerate_warning = trainer.degenerate();
  for (int e = 0; e < config.epochs; ++e) trainer.run_epoch();
  result.head = trainer.head();
  return result;
}

ScoredVocab score_vocab(const LabelHead& head, const EmbeddingView& embeddings,
                        const std::vector<bool>& allowed) {
  return sorted_from_raw(head.labels, raw_scores(head, embeddings, allowed));
}

Verbalizer select_verbalizer(const ScoredVocab& scored, int k_labels) {
  if (k_labels < 1) throw Error("k_labels must be >= 1");
  const size_t n_labels = scored.labels.size();
  if (n_labels == 0) throw Error("no labels in scored vocab");

  std::set<TokenId> distinct;
  for (const auto& entries : scored.entries)
    for (const auto& [tok, s] : entries) distinct.insert(tok);
  if (distinct.size() < n_labels * static_cast<size_t>(k_labels))
    throw Error("vocabulary too small after filtering: " + std::to_string(distinct.size()) +
                " distinct tokens for " + std::to_string(n_labels * k_labels) + " slots");

  std::set<TokenId> claimed;
  std::vector<TokenSeq> result(n_labels);
  std::vector<size_t> cursor(n_labels, 0);

  auto needs_more = [&] {
    for (size_t l = 0; l < n_labels; ++l)
      if (result[l].size() < static_cast<size_t>(k_labels)) return true;
    return false;
  };

  while (needs_more()) {
    // proposal round: each unfilled label nominates its best unclaimed token
    std::map<TokenId, std::vector<size_t>> proposals;
    for (size_t l = 0; l < n_labels; ++l) {
      if (result[l].size() >= static_cast<size_t>(k_labels)) continue;
      while (cursor[l] < scored.entries[l].size() && claimed.count(scored.entries[l][cursor[l]].first))
        ++cursor[l];
      if (cursor[l] >= scored.entries[l].size())
        throw Error("vocabulary too small after filtering: label " + std::to_string(scored.labels[l]) +
                    " ran out of candidates");
      proposals[scored.entries[l][cursor[l]].first].push_back(l);
    }
    for (const auto& [token, claimants] : proposals) {
      size_t winner = claimants.front();
      for (size_t i = 1; i < claimants.size(); ++i) {
        size_t c = claimants[i];
        size_t rank_c = cursor[c], rank_w = cursor[winner];
        double score_c = scored.entries[c][rank_c].second;
        double score_w = scored.entries[winner][rank_w].second;
        if (rank_c < rank_w || (rank_c == rank_w && score_c > score_w)) winner = c;
        // remaining ties stay with the earlier label
      }
      claimed.insert(token);
      result[winner].push_back(token);
    }
  }

  Verbalizer v;
  v.labels = scored.labels;
  for (size_t l = 0; l < n_labels; ++l) {
    std::sort(result[l].begin(), result[l].end());
    v.label_to_tokens[scored.labels[l]] = std::move(result[l]);
  }
  v.validate();
  return v;
}

VerbalizerSearchResult search_verbalizer(const MaskedLm& lm, std::span<const LabeledExample> examples,
                                         std::vector<int> labels, const Template& tmpl,
                                         const VerbalizerSearchConfig& config) {
  std::vector<MaskState> states = collect_mask_states(lm, examples, tmpl);
  LogisticTrainer trainer(states, labels, config.train);
  std::vector<bool> allowed = scorable_tokens(lm);
  EmbeddingView ev = lm.embeddings();

  Matrix mean_scores;
  for (int e = 0; e < std::max(1, config.train.epochs); ++e) {
    trainer.run_epoch();
    Matrix snap = raw_scores(trainer.head(), ev, allowed);
    if (mean_scores.empty()) {
      mean_scores = std::move(snap);
    } else {
      for (size_t i = 0; i < mean_scores.a.size(); ++i) mean_scores.a[i] += snap.a[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(std::max(1, config.train.epochs));
  for (double& v : mean_scores.a)
    if (std::isfinite(v)) v *= inv;

  VerbalizerSearchResult result;
  result.scores = sorted_from_raw(labels, mean_scores);
  result.verbalizer = select_verbalizer(result.scores, config.k_labels);
  result.degenerate_warning = trainer.degenerate();
  return result;
}

std::string render_scored_vocab(const ScoredVocab& scored, const MaskedLm& lm, int top_n) {
  std::ostringstream out;
  for (size_t l = 0; l < scored.labels.size(); ++l) {
    out << "label " << scored.labels[l] << ":\n";
    int shown = 0;
    for (const auto& [tok, score] : scored.entries[l]) {
      if (shown++ >= top_n) break;
      char buf[64];
      std::snprintf(buf, sizeof buf, "  %9.4f  ", score);
      out << buf << lm.decode(std::span<const TokenId>(&tok, 1)) << "\n";
    }
  }
  return out.str();
}

}  // namespace promptforge
