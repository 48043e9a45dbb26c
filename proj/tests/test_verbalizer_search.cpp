#include <cmath>

#include "doctest.h"
#include "promptforge/verbalizer_search.hpp"
#include "support.hpp"

using namespace promptforge;
using namespace pftest;

namespace {

std::vector<LabeledExample> sentences(std::initializer_list<std::pair<const char*, int>> rows) {
  std::vector<LabeledExample> out;
  int i = 0;
  for (const auto& [text, label] : rows) {
    LabeledExample ex;
    ex.text = text;
    ex.label = label;
    ex.id = "e" + std::to_string(++i);
    out.push_back(std::move(ex));
  }
  return out;
}

// two well-separated gaussian clusters in the plane
std::vector<MaskState> cluster_states(int per_class, std::uint64_t seed) {
  std::vector<MaskState> out;
  Rng rng(seed);
  for (int i = 0; i < per_class * 2; ++i) {
    int label = i % 2;
    MaskState s;
    double cx = label == 0 ? -3.0 : 3.0;
    s.state = {cx + 0.5 * rng.normal(), 0.5 * rng.normal()};
    s.label = label;
    s.example_id = "c" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

int head_predict(const LabelHead& head, const std::vector<double>& state) {
  size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (size_t l = 0; l < head.labels.size(); ++l) {
    double s = dot(head.weights.row(static_cast<int>(l)), state) + head.bias[l];
    if (s > best_score) {
      best_score = s;
      best = l;
    }
  }
  return head.labels[best];
}

}  // namespace

TEST_CASE("collect_mask_states: shape, determinism, closed form") {
  auto lm = make_toy_masked_lm(make_masked_spec({.words = 8, .dim = 4, .seed = 31, .trigger_window = 2}));
  Template tmpl;
  tmpl.trigger_token_ids = {word_id(*lm, "w2"), word_id(*lm, "w4")};

  auto one = collect_mask_states(*lm, sentences({{"w0", 1}}), tmpl);
  REQUIRE(one.size() == 1);
  CHECK(one[0].state.size() == 4);
  CHECK(one[0].label == 1);

  auto twice = collect_mask_states(*lm, sentences({{"w0 w1", 0}, {"w0 w1", 1}}), tmpl);
  CHECK(twice[0].state == twice[1].state);

  // identity encoder: the state is the mean of the trigger embeddings
  EmbeddingView ev = lm->embeddings();
  TokenId w2 = word_id(*lm, "w2"), w4 = word_id(*lm, "w4");
  for (int k = 0; k < 4; ++k) {
    double expect = 0.5 * (ev.input->at(w2, k) + ev.input->at(w4, k));
    CHECK(one[0].state[k] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("train_label_head: separable clusters reach 99% train accuracy") {
  std::vector<MaskState> states = cluster_states(20, 77);
  TrainedHead trained = train_label_head(states, {0, 1}, HeadTrainConfig{});
  CHECK_FALSE(trained.degenerate_warning);
  int correct = 0;
  for (const MaskState& s : states)
    if (head_predict(trained.head, s.state) == s.label) ++correct;
  CHECK(static_cast<double>(correct) / states.size() >= 0.99);
}

TEST_CASE("train_label_head: permuting labels permutes the head rows") {
  std::vector<MaskState> states = cluster_states(10, 5);
  std::vector<MaskState> flipped = states;
  for (MaskState& s : flipped) s.label = 1 - s.label;

  HeadTrainConfig cfg;
  TrainedHead a = train_label_head(states, {0, 1}, cfg);
  TrainedHead b = train_label_head(flipped, {0, 1}, cfg);
  for (int k = 0; k < a.head.weights.cols; ++k) {
    CHECK(a.head.weights.at(0, k) == doctest::Approx(b.head.weights.at(1, k)).epsilon(1e-12));
    CHECK(a.head.weights.at(1, k) == doctest::Approx(b.head.weights.at(0, k)).epsilon(1e-12));
  }
  CHECK(a.head.bias[0] == doctest::Approx(b.head.bias[1]).epsilon(1e-12));
}

TEST_CASE("train_label_head: orthogonal one-shot classes, degeneracy warning") {
  std::vector<MaskState> ortho = {{{1.0, 0.0}, 0, "a"}, {{0.0, 1.0}, 1, "b"}};
  TrainedHead t = train_label_head(ortho, {0, 1}, HeadTrainConfig{});
  CHECK(head_predict(t.head, {1.0, 0.0}) == 0);
  CHECK(head_predict(t.head, {0.0, 1.0}) == 1);
  CHECK_FALSE(t.degenerate_warning);

  std::vector<MaskState> same = {{{0.5, 0.5}, 0, "a"}, {{0.5, 0.5}, 1, "b"}};
  CHECK(train_label_head(same, {0, 1}, HeadTrainConfig{}).degenerate_warning);

  CHECK_THROWS_AS(train_label_head(same, {0}, HeadTrainConfig{}), Error);

  // every declared label needs at least one example
  std::vector<MaskState> lopsided = {{{1.0, 0.0}, 0, "a"}, {{0.9, 0.1}, 0, "b"}};
  CHECK_THROWS_WITH_AS(train_label_head(lopsided, {0, 1}, HeadTrainConfig{}),
                       doctest::Contains("no training states"), Error);
}

TEST_CASE("score_vocab: one-hot projection and the brute-force oracle") {
  auto lm = make_toy_masked_lm(make_masked_spec({.words = 12, .dim = 6, .seed = 41}));
  EmbeddingView ev = lm->embeddings();
  std::vector<bool> allowed = scorable_tokens(*lm);

  // head weight = unit vector e_j against one-hot output embeddings
  ToyMaskedSpec onehot = make_masked_spec({.words = 6, .dim = 7, .seed = 1});
  onehot.output_embeddings = Matrix(7, 7, 0.0);
  for (int i = 0; i < 7; ++i) onehot.output_embeddings.at(i, i) = 1.0;
  onehot.input_embeddings = Matrix(7, 7, 0.0);
  onehot.head_weight = Matrix(7, 7, 0.0);
  onehot.head_bias.assign(7, 0.0);
  auto onehot_lm = make_toy_masked_lm(onehot);
  LabelHead head;
  head.labels = {0};
  head.weights = Matrix(1, 7, 0.0);
  head.weights.at(0, 3) = 1.0;  // picks out token 3
  head.bias = {0.0};
  ScoredVocab sv = score_vocab(head, onehot_lm->embeddings(), scorable_tokens(*onehot_lm));
  CHECK(sv.entries[0].front().first == 3);

  // random head vs an independent dot-product loop
  LabelHead rh;
  rh.labels = {0, 1};
  rh.weights = Matrix(2, 6);
  Rng rng(1234);
  for (double& x : rh.weights.a) x = rng.normal();
  rh.bias = {rng.normal(), rng.normal()};
  ScoredVocab scored = score_vocab(rh, ev, allowed);
  for (size_t l = 0; l < scored.labels.size(); ++l) {
    for (const auto& [tok, score] : scored.entries[l]) {
      double expect = rh.bias[l];
      for (int k = 0; k < 6; ++k) expect += ev.output->at(tok, k) * rh.weights.at(static_cast<int>(l), k);
      CHECK(rel_err(score, expect) <= 1e-6);
    }
    for (size_t i = 1; i < scored.entries[l].size(); ++i) {
      auto [t0, s0] = scored.entries[l][i - 1];
      auto [t1, s1] = scored.entries[l][i];
      CHECK((s0 > s1 || (s0 == s1 && t0 < t1)));
    }
  }

  // constant bias shift moves scores but never the ranking
  LabelHead shifted = rh;
  shifted.bias[0] += 2.5;
  ScoredVocab scored2 = score_vocab(shifted, ev, allowed);
  for (size_t i = 0; i < scored.entries[0].size(); ++i) {
    CHECK(scored2.entries[0][i].first == scored.entries[0][i].first);
    CHECK(scored2.entries[0][i].second == doctest::Approx(scored.entries[0][i].second + 2.5).epsilon(1e-12));
  }

  LabelHead wrong = rh;
  wrong.weights = Matrix(2, 5, 0.0);
  CHECK_THROWS_AS(score_vocab(wrong, ev, allowed), Error);
}

TEST_CASE("select_verbalizer: collisions resolve by rank while sets stay disjoint") {
  ScoredVocab sv;
  sv.labels = {0, 1};
  sv.entries = {
      {{10, 0.90}, {11, 0.80}, {12, 0.70}, {13, 0.60}},
      {{10, 0.85}, {14, 0.65}, {12, 0.50}, {15, 0.40}},
  };
  // token 10 ranks first for both; label 0's score is higher so label 0 keeps it
  Verbalizer v = select_verbalizer(sv, 2);
  CHECK(v.label_to_tokens[0] == TokenSeq{10, 11});
  CHECK(v.label_to_tokens[1] == TokenSeq{12, 14});
  v.validate();

  Verbalizer v1 = select_verbalizer(sv, 1);
  CHECK(v1.label_to_tokens[0].size() == 1);
  CHECK(v1.label_to_tokens[1].size() == 1);
  CHECK(v1.label_to_tokens[0] != v1.label_to_tokens[1]);

  CHECK_THROWS_WITH_AS(select_verbalizer(sv, 4), doctest::Contains("too small"), Error);
}

TEST_CASE("search_verbalizer: deterministic, disjoint, sized k per label") {
  auto lm = make_toy_masked_lm(make_masked_spec(
      {.words = 20, .dim = 4, .seed = 51, .pooling = ToyMaskedSpec::Pooling::content}));
  auto data = sentences({{"w0 w1 w2", 0},
                         {"w0 w3 w2", 0},
                         {"w1 w0 w4", 0},
                         {"w10 w11 w12", 1},
                         {"w10 w13 w12", 1},
                         {"w11 w10 w14", 1}});
  VerbalizerSearchConfig cfg;
  cfg.k_labels = 3;
  VerbalizerSearchResult a = search_verbalizer(*lm, data, {0, 1}, Template{}, cfg);
  VerbalizerSearchResult b = search_verbalizer(*lm, data, {0, 1}, Template{}, cfg);
  CHECK(a.verbalizer == b.verbalizer);
  CHECK(a.verbalizer.label_to_tokens[0].size() == 3);
  CHECK(a.verbalizer.label_to_tokens[1].size() == 3);
  CHECK_FALSE(a.degenerate_warning);

  // the qualitative report mentions the top tokens
  std::string report = render_scored_vocab(a.scores, *lm, 5);
  CHECK(report.find("label 0:") != std::string::npos);
  CHECK(report.find("label 1:") != std::string::npos);
}
