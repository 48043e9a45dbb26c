// Generates a synthetic SST-2-format sentiment TSV for desk-scale runs.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "promptforge/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic sentiment dataset generator"};
  promptforge::SynthConfig config;
  std::string out = "synth.tsv";
  app.add_option("--per-class", config.per_class, "examples per label");
  app.add_option("--seed", config.seed, "generator seed");
  app.add_option("--noise", config.noise, "opposite-sentiment word probability");
  app.add_option("--out", out, "output TSV path")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<promptforge::LabeledExample> examples = promptforge::make_synthetic_sentiment(config);
    promptforge::save_tsv(out, examples);
    std::printf("wrote %zu examples to %s\n", examples.size(), out.c_str());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
