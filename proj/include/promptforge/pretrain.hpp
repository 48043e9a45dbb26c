#pragma once

#include <span>
#include <vector>

#include "promptforge/data_eval.hpp"
#include "promptforge/model_backend.hpp"

namespace promptforge {

struct PretrainConfig {
  int dim = 16;
  int epochs = 30;
  double learning_rate = 0.2;
  std::uint64_t seed = 0;
  int min_count = 1;
  int max_len = 64;
};

// Trains a small masked word predictor on raw text: the hidden state is the
// mean of the other content embeddings and the head is softmax(U h + b).
// Pure self-supervision; labels in the corpus are ignored. The returned spec
// uses content pooling with output embeddings tied to the head weights, so it
// plugs straight into the attack pipeline as a pretrained masked LM.
ToyMaskedSpec pretrain_masked_lm(std::span<const LabeledExample> corpus, const PretrainConfig& config);

struct BigramConfig {
  double alpha = 0.1;  // add-alpha smoothing
};

// Fits an add-alpha bigram causal LM on the corpus text. The desk-scale stand
// in for fine-tuning a generative model on the train split.
ToyCausalSpec train_bigram_lm(std::span<const LabeledExample> corpus, const BigramConfig& config = {});

}  // namespace promptforge
