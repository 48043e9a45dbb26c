#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "promptforge/trigger_search.hpp"
#include "promptforge/verbalizer_search.hpp"
#include "support.hpp"

using namespace promptforge;
using namespace pftest;

namespace {

PromptInstance make_instance(const MaskedLm& lm, const Template& tmpl, const std::string& sentence,
                             const std::string& id) {
  return instantiate(lm, tmpl, sentence, id);
}

std::vector<LabeledExample> tiny_dataset(const MaskedLm& lm, int n, std::uint64_t seed, int vocab_words) {
  (void)lm;
  std::vector<LabeledExample> out;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    LabeledExample ex;
    int len = 2 + static_cast<int>(rng.below(3));
    for (int j = 0; j < len; ++j) {
      if (!ex.text.empty()) ex.text.push_back(' ');
      ex.text += "w" + std::to_string(rng.below(static_cast<std::uint64_t>(vocab_words)));
    }
    ex.label = static_cast<int>(rng.below(2));
    ex.id = "d" + std::to_string(i);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

TEST_CASE("approximation scores vanish when the label set is the whole vocabulary") {
  auto lm = make_toy_masked_lm(make_masked_spec({.words = 10, .dim = 4, .seed = 3, .trigger_window = 2}));
  Template tmpl;
  tmpl.trigger_token_ids = {lm->tokenizer().mask_token_id, lm->tokenizer().mask_token_id};
  std::vector<PromptInstance> batch = {make_instance(*lm, tmpl, "w0 w1", "a")};

  Verbalizer everything;
  everything.labels = {0};
  TokenSeq all;
  for (TokenId t = 0; t < lm->tokenizer().vocab_size; ++t) all.push_back(t);
  everything.label_to_tokens[0] = all;

  std::vector<int> gold = {0};
  std::vector<double> scores = approximation_scores(*lm, batch, gold, everything, 0);
  for (double s : scores) CHECK(std::abs(s) <= 1e-9);
}

TEST_CASE("loglinear toy: scores equal exact substitution deltas, rank correlation 1") {
  // |V|=16 content words, zero mask embedding, singleton label set: the
  // objective is exactly linear in the slot embedding
  SpecOptions opt{.words = 16,
                  .dim = 8,
                  .seed = 29,
                  .head = ToyMaskedSpec::Head::loglinear,
                  .trigger_window = 2,
                  .zero_mask_embedding = true};
  ToyMaskedSpec spec = make_masked_spec(opt);
  auto lm = make_toy_masked_lm(spec);
  const TokenId mask = lm->tokenizer().mask_token_id;

  Template init;
  init.trigger_token_ids = {mask, mask};
  PromptInstance inst = make_instance(*lm, init, "w0 w1 w2", "probe");

  Verbalizer v;
  v.labels = {0, 1};
  v.label_to_tokens[0] = {word_id(*lm, "w6")};
  v.label_to_tokens[1] = {word_id(*lm, "w7")};
  std::vector<int> gold = {0};
  std::vector<PromptInstance> batch = {inst};

  for (int slot = 0; slot < 2; ++slot) {
    std::vector<double> scores = approximation_scores(*lm, batch, gold, v, slot);

    // oracle: substitute every token and recompute the objective exactly
    auto objective_of = [&](TokenId w) {
      TokenSeq prompt = inst.token_ids;
      prompt[inst.trigger_indices[slot]] = w;
      return lm
          ->objective_and_trigger_gradients(prompt, inst.mask_index, inst.trigger_indices,
                                            v.label_to_tokens[0])
          .first;
    };
    double base = objective_of(mask);
    std::vector<double> exact, approx;
    for (int i = 0; i < 16; ++i) {
      TokenId w = word_id(*lm, "w" + std::to_string(i));
      double delta = objective_of(w) - base;
      CHECK(rel_err(scores[w], delta) <= 1e-6);
      exact.push_back(delta);
      approx.push_back(scores[w]);
    }
    CHECK(spearman(exact, approx) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("positive embedding scaling scales scores and preserves ranking") {
  // zero mask embedding keeps the gradient base point fixed under scaling
  SpecOptions opt{.words = 12, .dim = 4, .seed = 13, .trigger_window = 1, .zero_mask_embedding = true};
  ToyMaskedSpec spec = make_masked_spec(opt);
  ToyMaskedSpec scaled = spec;
  for (double& x : scaled.input_embeddings.a) x *= 3.0;

  auto run = [&](const ToyMaskedSpec& s) {
    auto lm = make_toy_masked_lm(s);
    Template tmpl;
    tmpl.trigger_token_ids = {lm->tokenizer().mask_token_id};
    std::vector<PromptInstance> batch = {make_instance(*lm, tmpl, "w0 w1", "x")};
    Verbalizer v;
    v.labels = {0};
    v.label_to_tokens[0] = {word_id(*lm, "w5")};
    std::vector<int> gold = {0};
    return approximation_scores(*lm, batch, gold, v, 0);
  };
  std::vector<double> a = run(spec);
  std::vector<double> b = run(scaled);
  for (size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(3.0 * a[i]).epsilon(1e-12));

  std::vector<size_t> order_a, order_b;
  for (size_t i = 1; i < a.size(); ++i) {
    order_a.push_back(i);
    order_b.push_back(i);
  }
  std::sort(order_a.begin(), order_a.end(), [&](size_t l, size_t r) { return a[l] < a[r]; });
  std::sort(order_b.begin(), order_b.end(), [&](size_t l, size_t r) { return b[l] < b[r]; });
  CHECK(order_a == order_b);
}

TEST_CASE("top_k_candidates: ordering, ties, truncation, and the sort oracle") {
  std::vector<double> scores = {0.5, -1.0, 3.0, -2.5, 0.0, 7.0, -2.5, 1.5};
  std::vector<bool> allowed(8, true);
  allowed[0] = false;  // pretend token 0 is special

  CandidateSet attack = top_k_candidates(scores, 3, Direction::attack, allowed);
  CHECK(attack.token_ids() == std::vector<TokenId>{3, 6, 1});  // -2.5 (tie: lower id), -2.5, -1
  CandidateSet benign = top_k_candidates(scores, 3, Direction::benign, allowed);
  CHECK(benign.token_ids() == std::vector<TokenId>{5, 2, 7});

  // attack and benign sets are disjoint when 2k <= distinct tokens
  std::vector<TokenId> benign_ids = benign.token_ids();
  for (TokenId t : attack.token_ids())
    CHECK(std::find(benign_ids.begin(), benign_ids.end(), t) == benign_ids.end());

  // all-equal scores: the first k allowed ids in ascending order
  std::vector<double> flat(8, 1.0);
  CHECK(top_k_candidates(flat, 4, Direction::attack, allowed).token_ids() ==
        std::vector<TokenId>{1, 2, 3, 4});

  // brute-force full sort oracle
  Rng rng(555);
  std::vector<double> rnd(50);
  for (double& x : rnd) x = rng.normal();
  std::vector<bool> all_ok(50, true);
  CandidateSet got = top_k_candidates(rnd, 20, Direction::attack, all_ok);
  std::vector<TokenId> expect(50);
  for (int i = 0; i < 50; ++i) expect[i] = i;
  std::sort(expect.begin(), expect.end(), [&](TokenId l, TokenId r) {
    if (rnd[l] != rnd[r]) return rnd[l] < rnd[r];
    return l < r;
  });
  expect.resize(20);
  CHECK(got.token_ids() == expect);

  // k beyond the filtered vocabulary: return everything, flag it
  CandidateSet trunc = top_k_candidates(scores, 100, Direction::attack, allowed);
  CHECK(trunc.truncated);
  CHECK(trunc.entries.size() == 7);
  CHECK(trunc.k == 100);
}

TEST_CASE("build_candidate_sets: deterministic, filtered, and diagnosable") {
  auto lm = make_toy_masked_lm(make_masked_spec(
      {.words = 14, .dim = 4, .seed = 61, .trigger_window = 3, .zero_mask_embedding = true}));
  std::vector<LabeledExample> data = tiny_dataset(*lm, 30, 8, 14);
  Template init;
  init.trigger_token_ids.assign(3, lm->tokenizer().mask_token_id);
  Verbalizer v;
  v.labels = {0, 1};
  v.label_to_tokens[0] = {word_id(*lm, "w0")};
  v.label_to_tokens[1] = {word_id(*lm, "w1")};

  CandidateConfig cc;
  cc.k = 5;
  cc.gradient_batch = 8;
  cc.seed = 99;
  std::vector<CandidateSet> first = build_candidate_sets(*lm, data, init, v, cc);
  std::vector<CandidateSet> second = build_candidate_sets(*lm, data, init, v, cc);
  REQUIRE(first.size() == 3);
  for (int s = 0; s < 3; ++s) {
    CHECK(first[s].token_ids() == second[s].token_ids());
    for (TokenId t : first[s].token_ids()) CHECK(t != lm->tokenizer().mask_token_id);
  }

  cc.resample_tag = 1;  // refresh draws a different gradient batch
  std::vector<CandidateSet> redrawn = build_candidate_sets(*lm, data, init, v, cc);
  CHECK(redrawn.size() == 3);

  // a zero-mass label token aborts with the offending example named
  ToyMaskedSpec poisoned = make_masked_spec(
      {.words = 14, .dim = 4, .seed = 61, .trigger_window = 3, .zero_mask_embedding = true});
  poisoned.head_bias[word_id(*lm, "w0")] = -std::numeric_limits<double>::infinity();
  auto bad = make_toy_masked_lm(poisoned);
  CHECK_THROWS_WITH_AS(build_candidate_sets(*bad, data, init, v, cc), doctest::Contains("example"),
                       BackendError);
}
