#include <cmath>

#include "doctest.h"
#include "promptforge/prompting.hpp"
#include "support.hpp"

using namespace promptforge;
using namespace pftest;

namespace {

// toy with a fixed hand-set mask distribution, independent of the prompt
std::unique_ptr<MaskedLm> fixed_distribution_lm(const std::vector<double>& probs) {
  ToyMaskedSpec spec = make_masked_spec({.words = static_cast<int>(probs.size()) - 1, .dim = 2});
  spec.head_weight = Matrix(static_cast<int>(probs.size()), 2, 0.0);
  for (size_t i = 0; i < probs.size(); ++i) spec.head_bias[i] = std::log(probs[i]);
  return make_toy_masked_lm(spec);
}

}  // namespace

TEST_CASE("instantiate: empty trigger sequence is sentence + mask (+ period)") {
  SpecOptions opt{.words = 4, .dim = 2, .with_period = true};
  auto lm = make_toy_masked_lm(make_masked_spec(opt));
  Template tmpl;
  PromptInstance inst = instantiate(*lm, tmpl, "w0", "ex");
  TokenId period = word_id(*lm, ".");
  CHECK(inst.token_ids == TokenSeq{word_id(*lm, "w0"), lm->tokenizer().mask_token_id, period});
  CHECK(inst.mask_index == 1);
  CHECK(inst.trigger_indices.empty());
  CHECK(inst.source_example_id == "ex");

  // without "." in the vocabulary the prompt simply ends at the mask
  auto bare = make_toy_masked_lm(make_masked_spec({.words = 4, .dim = 2}));
  PromptInstance inst2 = instantiate(*bare, tmpl, "w0");
  CHECK(inst2.token_ids == TokenSeq{word_id(*bare, "w0"), bare->tokenizer().mask_token_id});
}

TEST_CASE("instantiate: five triggers mirror the {sentence} [T]x5 [P]. layout") {
  auto lm = make_toy_masked_lm(make_masked_spec({.words = 8, .dim = 2, .with_period = true}));
  Template tmpl;
  for (int i = 0; i < 5; ++i) tmpl.trigger_token_ids.push_back(word_id(*lm, "w" + std::to_string(i)));

  PromptInstance inst = instantiate(*lm, tmpl, "w6 w7");
  REQUIRE(inst.token_ids.size() == 9);  // 2 sentence + 5 triggers + mask + period
  CHECK(inst.trigger_indices == std::vector<int>{2, 3, 4, 5, 6});
  CHECK(inst.mask_index == 7);
  for (int j = 0; j < 5; ++j) CHECK(inst.token_ids[inst.trigger_indices[j]] == tmpl.trigger_token_ids[j]);
  CHECK(inst.token_ids[inst.mask_index] == lm->tokenizer().mask_token_id);
}

TEST_CASE("instantiate: oversize sentences are truncated from the right, slots survive") {
  auto lm = make_toy_masked_lm(make_masked_spec({.words = 4, .dim = 2, .max_len = 12}));
  Template tmpl;
  tmpl.trigger_token_ids = {word_id(*lm, "w1"), word_id(*lm, "w2")};

  std::string huge;
  for (int i = 0; i < 10000; ++i) huge += (i ? " w0" : "w0");
  PromptInstance inst = instantiate(*lm, tmpl, huge);
  CHECK(static_cast<int>(inst.token_ids.size()) <= 12);
  CHECK(inst.token_ids[inst.mask_index] == lm->tokenizer().mask_token_id);
  CHECK(inst.token_ids[inst.trigger_indices[0]] == tmpl.trigger_token_ids[0]);
  CHECK(inst.token_ids[inst.trigger_indices[1]] == tmpl.trigger_token_ids[1]);
  // sentence part is a prefix of the full encoding
  for (int p = 0; p < inst.trigger_indices[0]; ++p) CHECK(inst.token_ids[p] == word_id(*lm, "w0"));

  Template too_big;
  too_big.trigger_token_ids.assign(20, word_id(*lm, "w1"));
  CHECK_THROWS_WITH_AS(instantiate(*lm, too_big, "w0"), doctest::Contains("exceed"), Error);
}

TEST_CASE("instantiate: bos/eos framing tokens are accounted for") {
  ToyMaskedSpec spec = make_masked_spec({.words = 4, .dim = 2});
  spec.vocab.insert(spec.vocab.end(), {"<s>", "</s>"});
  spec.bos_token = "<s>";
  spec.eos_token = "</s>";
  spec.input_embeddings = Matrix(static_cast<int>(spec.vocab.size()), 2, 0.0);
  spec.head_weight = Matrix(static_cast<int>(spec.vocab.size()), 2, 0.0);
  spec.head_bias.assign(spec.vocab.size(), 0.0);
  auto lm = make_toy_masked_lm(spec);

  Template tmpl;
  tmpl.trigger_token_ids = {word_id(*lm, "w1")};
  PromptInstance inst = instantiate(*lm, tmpl, "w0 w2");
  CHECK(inst.token_ids.front() == *lm->tokenizer().bos_token_id);
  CHECK(inst.token_ids.back() == *lm->tokenizer().eos_token_id);
  CHECK(inst.token_ids[inst.mask_index] == lm->tokenizer().mask_token_id);
  CHECK(inst.token_ids[inst.trigger_indices[0]] == tmpl.trigger_token_ids[0]);

  // pure function
  PromptInstance again = instantiate(*lm, tmpl, "w0 w2");
  CHECK(inst.token_ids == again.token_ids);
  CHECK(inst.mask_index == again.mask_index);
}

TEST_CASE("label_score: singleton, partition, and the 0.8 hand value") {
  auto lm = fixed_distribution_lm({1e-12, 0.5, 0.3, 0.2 - 1e-12});
  Template tmpl;
  PromptInstance inst = instantiate(*lm, tmpl, "w0");

  Verbalizer singleton;
  singleton.labels = {0};
  singleton.label_to_tokens[0] = {1};
  MaskDistribution dist = lm->mask_log_probs(inst.token_ids, inst.mask_index);
  CHECK(label_score(*lm, inst, singleton, 0) == doctest::Approx(std::exp(dist.log_probs[1])).epsilon(1e-12));

  Verbalizer top_two;
  top_two.labels = {0, 1};
  top_two.label_to_tokens[0] = {1, 2};  // 0.5 + 0.3
  top_two.label_to_tokens[1] = {3};
  CHECK(label_score(*lm, inst, top_two, 0) == doctest::Approx(0.8).epsilon(1e-6));

  // partition of the whole vocabulary: scores sum to 1
  Verbalizer partition;
  partition.labels = {0, 1};
  partition.label_to_tokens[0] = {0, 1};
  partition.label_to_tokens[1] = {2, 3};
  double total = label_score(*lm, inst, partition, 0) + label_score(*lm, inst, partition, 1);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("label_score grows monotonically as tokens join the set") {
  auto lm = make_toy_masked_lm(make_masked_spec({.words = 10, .dim = 3, .seed = 21, .trigger_window = 1}));
  Template tmpl;
  tmpl.trigger_token_ids = {word_id(*lm, "w3")};
  PromptInstance inst = instantiate(*lm, tmpl, "w0 w1");

  Verbalizer v;
  v.labels = {0, 1};
  v.label_to_tokens[0] = {word_id(*lm, "w5")};
  v.label_to_tokens[1] = {word_id(*lm, "w6")};
  double prev = label_score(*lm, inst, v, 0);
  for (int extra : {7, 8, 9}) {
    v.label_to_tokens[0].push_back(word_id(*lm, "w" + std::to_string(extra)));
    double cur = label_score(*lm, inst, v, 0);
    CHECK(cur >= prev);
    prev = cur;
  }
}

TEST_CASE("predict_label: argmax, tie order, and set-swap symmetry") {
  auto lm = fixed_distribution_lm({0.05, 0.6, 0.15, 0.2});
  Template tmpl;
  PromptInstance inst = instantiate(*lm, tmpl, "w0");

  Verbalizer lone;
  lone.labels = {7};
  lone.label_to_tokens[7] = {2};
  CHECK(predict_label(*lm, inst, lone) == 7);

  Verbalizer v;
  v.labels = {0, 1};
  v.label_to_tokens[0] = {1};  // 0.6: mass concentrated on label 0's word
  v.label_to_tokens[1] = {3};  // 0.2
  CHECK(predict_label(*lm, inst, v) == 0);

  std::swap(v.label_to_tokens[0], v.label_to_tokens[1]);
  CHECK(predict_label(*lm, inst, v) == 1);

  // exact tie goes to the first label in declared order
  auto lm2 = fixed_distribution_lm({0.2, 0.3, 0.25, 0.25});
  PromptInstance inst2 = instantiate(*lm2, tmpl, "w0");
  Verbalizer tie2;
  tie2.labels = {4, 2};
  tie2.label_to_tokens[4] = {2};
  tie2.label_to_tokens[2] = {3};
  CHECK(predict_label(*lm2, inst2, tie2) == 4);

  // argmax invariance: predicting from probabilities matches predicting from
  // log scores
  std::vector<double> logs = label_log_scores(*lm2, inst2, tie2);
  size_t best = 0;
  for (size_t i = 1; i < logs.size(); ++i)
    if (std::exp(logs[i]) > std::exp(logs[best])) best = i;
  CHECK(tie2.labels[best] == predict_label(*lm2, inst2, tie2));
}

TEST_CASE("verbalizer validation rejects overlaps and empty sets") {
  Verbalizer v;
  v.labels = {0, 1};
  v.label_to_tokens[0] = {1, 2};
  v.label_to_tokens[1] = {2, 3};
  CHECK_THROWS_WITH_AS(v.validate(), doctest::Contains("disjoint"), Error);
  v.label_to_tokens[1] = {};
  CHECK_THROWS_AS(v.validate(), Error);
  v.label_to_tokens[1] = {3};
  CHECK_NOTHROW(v.validate());
  CHECK_THROWS_AS(v.validate(3), Error);  // token 3 out of range
}

TEST_CASE("template and verbalizer JSON round trips") {
  auto lm = make_toy_masked_lm(make_masked_spec({.words = 6, .dim = 2}));
  Template tmpl;
  tmpl.trigger_token_ids = {word_id(*lm, "w4"), word_id(*lm, "w1"), lm->tokenizer().mask_token_id};
  std::string js = template_to_json(tmpl, *lm);
  CHECK(template_from_json(js) == tmpl);
  CHECK(js.find("input-triggers-mask") != std::string::npos);
  CHECK(js.find("w4") != std::string::npos);
  CHECK_THROWS_AS(template_from_json("{\"trigger_tokens\": [], \"layout\": \"weird\"}"), Error);

  Verbalizer v;
  v.labels = {1, 0};
  v.label_to_tokens[1] = {word_id(*lm, "w0")};
  v.label_to_tokens[0] = {word_id(*lm, "w2"), word_id(*lm, "w3")};
  CHECK(verbalizer_from_json(verbalizer_to_json(v)) == v);
}
