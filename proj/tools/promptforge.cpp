#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "promptforge/cli_harness.hpp"
#include "promptforge/pretrain.hpp"

namespace pf = promptforge;
namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::string> strategy;
  std::optional<std::string> direction;
  std::optional<std::uint64_t> seed;
  std::optional<int> few_shot;
  bool paper_faithful = false;
  std::optional<std::string> out_dir;
  std::optional<std::string> backend;
  std::optional<std::string> resume;
  std::optional<std::string> template_path;
  bool dump_candidates = false;
};

void add_common_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--config", ov.config_path, "run config JSON file")->required();
  cmd->add_option("--strategy", ov.strategy, "random | beam | fluent | none");
  cmd->add_option("--direction", ov.direction, "attack | benign");
  cmd->add_option("--seed", ov.seed, "run seed");
  cmd->add_option("--few-shot", ov.few_shot, "balanced examples per class");
  cmd->add_flag("--paper-faithful", ov.paper_faithful, "select templates on the test split");
  cmd->add_option("--out", ov.out_dir, "output directory");
  cmd->add_option("--backend", ov.backend, "masked LM checkpoint identifier");
  cmd->add_option("--resume", ov.resume, "attack-state checkpoint to resume from");
}

pf::RunConfig load_config(const Overrides& ov) {
  std::string text;
  try {
    text = pf::read_file(ov.config_path);
  } catch (const pf::Error& e) {
    throw pf::ConfigError(e.what());
  }
  pf::RunConfig config = pf::run_config_from_json(text);
  if (ov.strategy) config.strategy = *ov.strategy;
  if (ov.direction) config.direction = pf::direction_from_string(*ov.direction);
  if (ov.seed) config.seed = *ov.seed;
  if (ov.few_shot) config.few_shot = *ov.few_shot;
  if (ov.paper_faithful) config.selection = "paper-faithful";
  if (ov.out_dir) config.out_dir = *ov.out_dir;
  if (ov.backend) config.backend = *ov.backend;
  if (ov.resume) config.resume_path = *ov.resume;
  if (ov.template_path) config.template_path = *ov.template_path;
  if (ov.dump_candidates) config.dump_candidates = true;
  return config;
}

int cmd_attack(const Overrides& ov) {
  pf::RunConfig config = load_config(ov);
  pf::AttackReport report = pf::run(config);
  std::cout << pf::report_render(report);
  std::cout << "report: " << (fs::path(config.out_dir) / "report.json").string() << "\n";
  return 0;
}

int cmd_verbalizer(const Overrides& ov) {
  pf::RunConfig config = load_config(ov);
  pf::validate(config);
  auto lm = pf::load_masked_lm(config.backend);
  std::vector<pf::LabeledExample> train = pf::load_dataset(config.train_path, config.format);
  if (config.few_shot) train = pf::balanced_subset(train, *config.few_shot, config.seed);

  pf::VerbalizerSearchConfig vsc;
  vsc.k_labels = config.k_labels;
  pf::VerbalizerSearchResult res =
      pf::search_verbalizer(*lm, train, config.labels, pf::Template{}, vsc);
  fs::create_directories(config.out_dir);
  pf::atomic_write_file((fs::path(config.out_dir) / "verbalizer.json").string(),
                        pf::verbalizer_to_json(res.verbalizer));
  pf::atomic_write_file((fs::path(config.out_dir) / "verbalizer_report.txt").string(),
                        pf::render_scored_vocab(res.scores, *lm));
  std::cout << pf::render_scored_vocab(res.scores, *lm, 5);
  std::cout << "verbalizer: " << (fs::path(config.out_dir) / "verbalizer.json").string() << "\n";
  if (res.degenerate_warning)
    std::cerr << "warning: mask states were identical across labels; head training was degenerate\n";
  return 0;
}

int cmd_eval(const Overrides& ov, const std::string& split) {
  pf::RunConfig config = load_config(ov);
  if (config.template_path.empty())
    throw pf::ConfigError("eval needs --template (or template_path in the config)");
  if (config.verbalizer_path.empty())
    throw pf::ConfigError("eval needs verbalizer_path in the config");
  if (split != "train" && split != "test") throw pf::ConfigError("--split must be train or test");
  auto lm = pf::load_masked_lm(config.backend);
  pf::Template tmpl = pf::template_from_json(pf::read_file(config.template_path));
  pf::Verbalizer verbalizer = pf::verbalizer_from_json(pf::read_file(config.verbalizer_path));
  verbalizer.validate(lm->tokenizer().vocab_size);
  const std::string& path = split == "train" ? config.train_path : config.test_path;
  std::vector<pf::LabeledExample> examples = pf::load_dataset(path, config.format);
  if (config.few_shot) examples = pf::balanced_subset(examples, *config.few_shot, config.seed);
  pf::EvalResult result = pf::evaluate_accuracy(*lm, examples, tmpl, verbalizer, config.test_batch);
  std::cout << pf::eval_result_to_json(result) << "\n";
  return 0;
}

int cmd_ppl(const Overrides& ov) {
  pf::RunConfig config = load_config(ov);
  if (config.template_path.empty())
    throw pf::ConfigError("ppl needs --template (or template_path in the config)");
  if (config.causal_backend.empty()) throw pf::ConfigError("ppl needs causal_backend in the config");
  auto lm = pf::load_masked_lm(config.backend);
  auto causal = pf::load_causal_lm(config.causal_backend);
  pf::Template tmpl = pf::template_from_json(pf::read_file(config.template_path));
  double ppl = pf::template_perplexity(tmpl, *lm, *causal);
  std::printf("%.6f\n", ppl);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prompt template construction via gradient-guided token search"};
  app.require_subcommand(1);

  Overrides ov;
  std::string eval_split = "test";

  CLI::App* attack = app.add_subcommand("attack", "full pipeline: verbalizer, baseline, attack, report");
  add_common_flags(attack, ov);
  attack->add_flag("--dump-candidates", ov.dump_candidates, "write candidate sets as JSON lines");

  CLI::App* verbalizer = app.add_subcommand("verbalizer", "label-word search only");
  add_common_flags(verbalizer, ov);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a template on a dataset split");
  add_common_flags(eval, ov);
  eval->add_option("--template", ov.template_path, "template JSON file");
  eval->add_option("--split", eval_split, "train | test (default test)");

  CLI::App* ppl = app.add_subcommand("ppl", "perplexity of a template under the causal LM");
  add_common_flags(ppl, ov);
  ppl->add_option("--template", ov.template_path, "template JSON file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(attack)) return cmd_attack(ov);
    if (app.got_subcommand(verbalizer)) return cmd_verbalizer(ov);
    if (app.got_subcommand(eval)) return cmd_eval(ov, eval_split);
    if (app.got_subcommand(ppl)) return cmd_ppl(ov);
  } catch (const pf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pf::StageError& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
