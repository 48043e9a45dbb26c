// Pretrains the small linear masked LM (and optionally an add-alpha bigram
// causal LM) on a dataset's text, writing checkpoint spec JSON files that the
// main CLI can load by path.

#include <iostream>

#include "CLI11.hpp"
#include "promptforge/pretrain.hpp"

namespace pf = promptforge;

int main(int argc, char** argv) {
  CLI::App app{"pretrain desk-scale language model checkpoints"};
  std::string train_path, format = "tsv", masked_out, causal_out;
  pf::PretrainConfig config;
  app.add_option("--train", train_path, "training dataset path")->required();
  app.add_option("--format", format, "tsv | csv | amazon-jsonl");
  app.add_option("--out", masked_out, "masked LM checkpoint output path")->required();
  app.add_option("--causal-out", causal_out, "bigram causal LM checkpoint output path");
  app.add_option("--dim", config.dim, "embedding dimension");
  app.add_option("--epochs", config.epochs, "training epochs");
  app.add_option("--lr", config.learning_rate, "learning rate");
  app.add_option("--seed", config.seed, "training seed");
  app.add_option("--max-len", config.max_len, "model max sequence length");
  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<pf::LabeledExample> corpus =
        pf::load_dataset(train_path, pf::data_format_from_string(format));
    pf::ToyMaskedSpec spec = pf::pretrain_masked_lm(corpus, config);
    pf::atomic_write_file(masked_out, pf::toy_masked_spec_to_json(spec));
    std::printf("masked LM: |V|=%zu d=%d -> %s\n", spec.vocab.size(), spec.dim, masked_out.c_str());
    if (!causal_out.empty()) {
      pf::ToyCausalSpec causal = pf::train_bigram_lm(corpus);
      pf::atomic_write_file(causal_out, pf::toy_causal_spec_to_json(causal));
      std::printf("causal LM: |V|=%zu -> %s\n", causal.vocab.size(), causal_out.c_str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
