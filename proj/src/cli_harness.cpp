#include "promptforge/cli_harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "json.hpp"

namespace promptforge {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

json double_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double double_from(const json& j) { return j.is_null() ? kNan : j.get<double>(); }

// Carves a per-class 10% dev slice out of train for template selection so the
// test split stays untouched; paper-faithful mode instead selects directly on
// the test split, as the original protocol does.
struct Splits {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> selection;
  std::vector<LabeledExample> test;
};

Splits make_splits(std::vector<LabeledExample> train, std::vector<LabeledExample> test,
                   const RunConfig& config) {
  Splits s;
  s.test = std::move(test);
  if (config.selection == "paper-faithful") {
    s.train = std::move(train);
    s.selection = s.test;
    return s;
  }
  std::map<int, std::vector<size_t>> by_label;
  for (size_t i = 0; i < train.size(); ++i) by_label[train[i].label].push_back(i);
  std::vector<bool> to_selection(train.size(), false);
  for (auto& [label, idxs] : by_label) {
    Rng rng(Rng::mix(config.seed, 0x646576ULL + static_cast<std::uint64_t>(label)));
    rng.shuffle(idxs);
    size_t take = std::max<size_t>(1, idxs.size() / 10);
    for (size_t i = 0; i < take && i < idxs.size(); ++i) to_selection[idxs[i]] = true;
  }
  for (size_t i = 0; i < train.size(); ++i)
    (to_selection[i] ? s.selection : s.train).push_back(std::move(train[i]));
  if (s.train.empty()) throw DataError("train split empty after carving the dev slice");
  return s;
}

struct StageGuard {
  const std::string& hash;

  template <class Fn>
  auto operator()(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    try {
      return fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, hash, e.what());
    }
  }
};

AttackState run_strategy(const RunConfig& config, const MaskedLm& lm, const CausalLm* causal,
                         Direction direction, const Splits& splits, const Verbalizer& verbalizer,
                         const std::vector<CandidateSet>& candidates, const AttackState* resume,
                         const std::string& checkpoint_path) {
  StrategyConfig sc;
  sc.train_eval_subsample = config.train_eval_subsample;
  sc.eval_batch = config.test_batch;
  sc.seed = config.seed;

  CheckpointFn save = [&checkpoint_path](const AttackState& state) {
    atomic_write_file(checkpoint_path, attack_state_to_json(state));
  };

  CandidateConfig refresh;
  refresh.k = config.k_candidates;
  refresh.direction = direction;
  refresh.gradient_batch = config.train_batch;
  refresh.seed = config.seed;
  const CandidateConfig* refresh_ptr = config.refresh_candidates ? &refresh : nullptr;

  if (config.strategy == "random") {
    Template init;
    init.trigger_token_ids.assign(config.trigger_count, lm.tokenizer().mask_token_id);
    return random_replacement(lm, init, candidates.front(), config.iterations, splits.train,
                              splits.selection, verbalizer, direction, sc, refresh_ptr, resume, save);
  }
  if (config.strategy == "beam") {
    return beam_search(lm, candidates, config.trigger_count, config.beam_width, splits.train,
                       splits.selection, verbalizer, direction, sc, refresh_ptr, resume, save);
  }
  if (config.strategy == "fluent") {
    if (!causal) throw Error("fluent strategy requires a causal backend");
    AttackState state = fluent_attack(lm, *causal, candidates.front(), config.trigger_count, splits.train,
                                      splits.selection, verbalizer, direction, sc);
    save(state);
    return state;
  }
  throw Error("unknown strategy: " + config.strategy);
}

}  // namespace

RunConfig run_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config JSON: ") + e.what());
  }
  try {
    RunConfig c;
    c.backend = j.value("backend", std::string());
    c.causal_backend = j.value("causal_backend", std::string());
    if (j.contains("data")) {
      const json& d = j["data"];
      c.train_path = d.value("train", std::string());
      c.test_path = d.value("test", std::string());
      c.format = data_format_from_string(d.value("format", std::string("tsv")));
    }
    c.trigger_count = j.value("trigger_count", 5);
    c.k_candidates = j.value("k_candidates", 100);
    c.k_labels = j.value("k_labels", 3);
    c.labels = j.value("labels", std::vector<int>{0, 1});
    c.strategy = j.value("strategy", std::string("random"));
    c.direction = direction_from_string(j.value("direction", std::string("attack")));
    c.iterations = j.value("iterations", 50);
    c.beam_width = j.value("beam_width", 2);
    c.seed = j.value("seed", std::uint64_t{0});
    c.train_batch = j.value("train_batch", 24);
    c.test_batch = j.value("test_batch", 48);
    c.selection = j.value("selection", std::string("dev-split"));
    if (j.contains("few_shot") && !j["few_shot"].is_null()) c.few_shot = j["few_shot"].get<int>();
    c.train_eval_subsample = j.value("train_eval_subsample", 1000);
    c.refresh_candidates = j.value("refresh_candidates", false);
    c.verbalizer_path = j.value("verbalizer_path", std::string());
    c.template_path = j.value("template_path", std::string());
    c.out_dir = j.value("out_dir", std::string("."));
    c.dump_candidates = j.value("dump_candidates", false);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config JSON: ") + e.what());
  }
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["backend"] = c.backend;
  j["causal_backend"] = c.causal_backend;
  j["data"] = {{"train", c.train_path}, {"test", c.test_path}, {"format", to_string(c.format)}};
  j["trigger_count"] = c.trigger_count;
  j["k_candidates"] = c.k_candidates;
  j["k_labels"] = c.k_labels;
  j["labels"] = c.labels;
  j["strategy"] = c.strategy;
  j["direction"] = to_string(c.direction);
  j["iterations"] = c.iterations;
  j["beam_width"] = c.beam_width;
  j["seed"] = c.seed;
  j["train_batch"] = c.train_batch;
  j["test_batch"] = c.test_batch;
  j["selection"] = c.selection;
  j["few_shot"] = c.few_shot ? json(*c.few_shot) : json(nullptr);
  j["train_eval_subsample"] = c.train_eval_subsample;
  j["refresh_candidates"] = c.refresh_candidates;
  j["verbalizer_path"] = c.verbalizer_path;
  j["template_path"] = c.template_path;
  j["out_dir"] = c.out_dir;
  j["dump_candidates"] = c.dump_candidates;
  return j.dump();
}

void validate(const RunConfig& c) {
  if (c.backend.empty()) throw ConfigError("config: backend is required");
  if (c.train_path.empty()) throw ConfigError("config: data.train is required");
  if (c.test_path.empty()) throw ConfigError("config: data.test is required");
  if (c.trigger_count < 0) throw ConfigError("config: trigger_count must be >= 0");
  if (c.k_candidates < 1) throw ConfigError("config: k_candidates must be >= 1");
  if (c.k_labels < 1) throw ConfigError("config: k_labels must be >= 1");
  if (c.labels.size() < 1) throw ConfigError("config: labels must be non-empty");
  if (c.iterations < 0) throw ConfigError("config: iterations must be >= 0");
  if (c.beam_width < 1) throw ConfigError("config: beam_width must be >= 1");
  if (c.train_batch < 1 || c.test_batch < 1) throw ConfigError("config: batch sizes must be >= 1");
  if (c.strategy != "random" && c.strategy != "beam" && c.strategy != "fluent" && c.strategy != "none")
    throw ConfigError("config: unknown strategy '" + c.strategy + "'");
  if (c.strategy == "none" && c.template_path.empty())
    throw ConfigError("config: strategy 'none' requires an explicit template_path");
  if (c.strategy == "fluent" && c.causal_backend.empty())
    throw ConfigError("config: strategy 'fluent' requires a causal_backend");
  if (c.selection != "dev-split" && c.selection != "paper-faithful")
    throw ConfigError("config: selection must be 'dev-split' or 'paper-faithful'");
  if (c.few_shot && *c.few_shot < 0) throw ConfigError("config: few_shot must be >= 0");
  if (!c.resume_path.empty() && c.strategy != "random" && c.strategy != "beam")
    throw ConfigError("config: only the random and beam strategies support --resume");
}

std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(run_config_to_json(c))); }

std::string report_to_json(const AttackReport& r) {
  json j;
  j["config"] = json::parse(r.config_json);
  j["config_hash"] = r.config_hash;
  j["strategy"] = r.strategy;
  j["direction"] = to_string(r.direction);
  j["verbalizer"] = json::parse(verbalizer_to_json(r.verbalizer));
  j["baseline"] = json::parse(eval_result_to_json(r.baseline));
  j["attacked"] = r.attacked ? json::parse(eval_result_to_json(*r.attacked)) : json(nullptr);
  j["diff"] = r.diff ? json(*r.diff) : json(nullptr);
  j["baseline_template"] =
      r.baseline_template_json.empty() ? json(nullptr) : json::parse(r.baseline_template_json);
  j["attacked_template"] =
      r.attacked_template_json.empty() ? json(nullptr) : json::parse(r.attacked_template_json);
  j["ppl"] = double_or_null(r.ppl);
  j["baseline_ppl"] = double_or_null(r.baseline_ppl);
  j["history_ref"] = r.history_ref;
  j["timing"] = {{"wall_clock_seconds", r.wall_clock_seconds}};
  return j.dump(2);
}

AttackReport report_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  AttackReport r;
  r.config_json = j.at("config").dump();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.strategy = j.at("strategy").get<std::string>();
  r.direction = direction_from_string(j.at("direction").get<std::string>());
  r.verbalizer = verbalizer_from_json(j.at("verbalizer").dump());
  r.baseline = eval_result_from_json(j.at("baseline").dump());
  if (!j.at("attacked").is_null()) r.attacked = eval_result_from_json(j.at("attacked").dump());
  if (!j.at("diff").is_null()) r.diff = j.at("diff").get<double>();
  if (!j.at("baseline_template").is_null()) r.baseline_template_json = j.at("baseline_template").dump();
  if (!j.at("attacked_template").is_null()) r.attacked_template_json = j.at("attacked_template").dump();
  r.ppl = double_from(j.at("ppl"));
  r.baseline_ppl = double_from(j.at("baseline_ppl"));
  r.history_ref = j.value("history_ref", std::string());
  r.wall_clock_seconds = j.at("timing").value("wall_clock_seconds", 0.0);
  return r;
}

AttackReport run(const RunConfig& config) {
  validate(config);
  const std::string hash = config_hash(config);
  StageGuard stage{hash};
  const auto t0 = std::chrono::steady_clock::now();

  fs::create_directories(config.out_dir);

  std::unique_ptr<MaskedLm> lm = stage("load-backend", [&] { return load_masked_lm(config.backend); });
  std::unique_ptr<CausalLm> causal;
  if (!config.causal_backend.empty())
    causal = stage("load-backend", [&] { return load_causal_lm(config.causal_backend); });

  Splits splits = stage("load-data", [&] {
    std::vector<LabeledExample> train = load_dataset(config.train_path, config.format);
    std::vector<LabeledExample> test = load_dataset(config.test_path, config.format);
    if (config.few_shot) {
      train = balanced_subset(train, *config.few_shot, config.seed);
      test = balanced_subset(test, *config.few_shot, config.seed);
    }
    return make_splits(std::move(train), std::move(test), config);
  });

  Verbalizer verbalizer = stage("verbalizer", [&] {
    if (!config.verbalizer_path.empty()) {
      Verbalizer v = verbalizer_from_json(read_file(config.verbalizer_path));
      v.validate(lm->tokenizer().vocab_size);
      return v;
    }
    VerbalizerSearchConfig vsc;
    vsc.k_labels = config.k_labels;
    VerbalizerSearchResult res =
        search_verbalizer(*lm, splits.train, config.labels, Template{}, vsc);
    atomic_write_file((fs::path(config.out_dir) / "verbalizer.json").string(),
                      verbalizer_to_json(res.verbalizer));
    atomic_write_file((fs::path(config.out_dir) / "verbalizer_report.txt").string(),
                      render_scored_vocab(res.scores, *lm));
    return res.verbalizer;
  });

  AttackReport report;
  report.config_json = run_config_to_json(config);
  report.config_hash = hash;
  report.strategy = config.strategy;
  report.direction = config.direction;
  report.verbalizer = verbalizer;
  report.ppl = std::numeric_limits<double>::quiet_NaN();
  report.baseline_ppl = std::numeric_limits<double>::quiet_NaN();

  if (config.strategy == "none") {
    Template tmpl = stage("template", [&] { return template_from_json(read_file(config.template_path)); });
    report.baseline = stage("evaluate", [&] {
      return evaluate_accuracy(*lm, splits.test, tmpl, verbalizer, config.test_batch);
    });
    report.baseline_template_json = template_to_json(tmpl, *lm);
    if (causal) report.baseline_ppl = template_perplexity(tmpl, *lm, *causal);
  } else {
    // candidate sets per direction; identical budget for baseline and attack
    Template init;
    init.trigger_token_ids.assign(config.trigger_count, lm->tokenizer().mask_token_id);
    auto build = [&](Direction d) {
      CandidateConfig cc;
      cc.k = config.k_candidates;
      cc.direction = d;
      cc.gradient_batch = config.train_batch;
      cc.seed = config.seed;
      return build_candidate_sets(*lm, splits.train, init, verbalizer, cc);
    };
    std::vector<CandidateSet> benign_candidates = stage("candidates", [&] { return build(Direction::benign); });
    std::vector<CandidateSet> attack_candidates = stage("candidates", [&] {
      return config.direction == Direction::benign ? benign_candidates : build(Direction::attack);
    });
    if (config.dump_candidates) {
      atomic_write_file((fs::path(config.out_dir) / "candidates_attack.jsonl").string(),
                        candidates_to_jsonl(attack_candidates, *lm));
      atomic_write_file((fs::path(config.out_dir) / "candidates_benign.jsonl").string(),
                        candidates_to_jsonl(benign_candidates, *lm));
    }

    AttackState resume_state;
    const AttackState* resume_benign = nullptr;
    const AttackState* resume_attack = nullptr;
    if (!config.resume_path.empty()) {
      resume_state = stage("resume", [&] { return attack_state_from_json(read_file(config.resume_path)); });
      (resume_state.direction == Direction::benign ? resume_benign : resume_attack) = &resume_state;
    }

    AttackState baseline_state = stage("search-baseline", [&] {
      return run_strategy(config, *lm, causal.get(), Direction::benign, splits, verbalizer,
                          benign_candidates, resume_benign,
                          (fs::path(config.out_dir) / "checkpoint_benign.json").string());
    });
    AttackState attack_state = stage("search-attack", [&] {
      return run_strategy(config, *lm, causal.get(), config.direction, splits, verbalizer,
                          attack_candidates, resume_attack,
                          (fs::path(config.out_dir) / "checkpoint_attack.json").string());
    });

    stage("evaluate", [&] {
      report.baseline =
          evaluate_accuracy(*lm, splits.test, baseline_state.best_template, verbalizer, config.test_batch);
      report.attacked =
          evaluate_accuracy(*lm, splits.test, attack_state.best_template, verbalizer, config.test_batch);
      report.diff = diff_pp(report.baseline, *report.attacked);
      return 0;
    });
    report.baseline_template_json = template_to_json(baseline_state.best_template, *lm);
    report.attacked_template_json = template_to_json(attack_state.best_template, *lm);

    stage("ppl", [&] {
      if (config.strategy == "fluent") {
        report.ppl = attack_state.ppl;
        report.baseline_ppl = baseline_state.ppl;
      } else if (causal) {
        report.ppl = template_perplexity(attack_state.best_template, *lm, *causal);
        report.baseline_ppl = template_perplexity(baseline_state.best_template, *lm, *causal);
      }
      return 0;
    });

    stage("report", [&] {
      atomic_write_file((fs::path(config.out_dir) / "history_benign.json").string(),
                        attack_state_to_json(baseline_state));
      atomic_write_file((fs::path(config.out_dir) / "history_attack.json").string(),
                        attack_state_to_json(attack_state));
      return 0;
    });
    report.history_ref = "history_attack.json";
  }

  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  stage("report", [&] {
    atomic_write_file((fs::path(config.out_dir) / "report.json").string(), report_to_json(report));
    return 0;
  });
  return report;
}

std::string report_render(const AttackReport& r) {
  auto cell = [](double accuracy, std::optional<double> diff) {
    std::string out = format_pct(accuracy);
    out += " ";
    out += diff ? "(" + format_pp(*diff) + ")" : "(\xE2\x80\x94)";
    return out;
  };
  auto ppl_cell = [](double ppl) {
    if (std::isnan(ppl)) return std::string("\xE2\x80\x94");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", ppl);
    return std::string(buf);
  };

  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s  %-20s  %s\n", "strategy", "accuracy (diff)", "ppl");
  out += line;
  std::snprintf(line, sizeof line, "%-12s  %-20s  %s\n", "autoprompt",
                cell(r.baseline.accuracy, std::nullopt).c_str(), ppl_cell(r.baseline_ppl).c_str());
  out += line;
  if (r.attacked) {
    std::snprintf(line, sizeof line, "%-12s  %-20s  %s\n", r.strategy.c_str(),
                  cell(r.attacked->accuracy, r.diff).c_str(), ppl_cell(r.ppl).c_str());
    out += line;
  }
  return out;
}

}  // namespace promptforge
