#pragma once

#include <optional>
#include <string>

#include "promptforge/data_eval.hpp"
#include "promptforge/strategies.hpp"
#include "promptforge/trigger_search.hpp"
#include "promptforge/verbalizer_search.hpp"

namespace promptforge {

struct RunConfig {
  std::string backend;
  std::string causal_backend;  // optional; required for the fluent strategy
  std::string train_path;
  std::string test_path;
  DataFormat format = DataFormat::tsv;
  int trigger_count = 5;
  int k_candidates = 100;
  int k_labels = 3;
  std::vector<int> labels = {0, 1};
  std::string strategy = "random";  // random | beam | fluent | none
  Direction direction = Direction::attack;
  int iterations = 50;  // K for random replacement
  int beam_width = 2;
  std::uint64_t seed = 0;
  int train_batch = 24;  // gradient batch size
  int test_batch = 48;   // evaluation batch size
  std::string selection = "dev-split";  // or "paper-faithful"
  std::optional<int> few_shot;
  int train_eval_subsample = 1000;
  bool refresh_candidates = false;
  std::string verbalizer_path;  // load instead of searching
  std::string template_path;    // required when strategy == none
  std::string out_dir = ".";
  bool dump_candidates = false;

  // CLI-only, never part of the config snapshot or hash
  std::string resume_path;
};

RunConfig run_config_from_json(const std::string& json_text);
std::string run_config_to_json(const RunConfig& config);
void validate(const RunConfig& config);
std::string config_hash(const RunConfig& config);

struct AttackReport {
  std::string config_json;  // frozen snapshot
  std::string config_hash;
  std::string strategy;
  Direction direction = Direction::attack;
  Verbalizer verbalizer;
  EvalResult baseline;
  std::optional<EvalResult> attacked;
  std::optional<double> diff;  // percentage points
  std::string baseline_template_json;
  std::string attacked_template_json;
  double ppl = 0.0;           // attacked template (NaN when unavailable)
  double baseline_ppl = 0.0;  // NaN when unavailable
  double wall_clock_seconds = 0.0;
  std::string history_ref;
};

std::string report_to_json(const AttackReport& report);
AttackReport report_from_json(const std::string& json_text);

// Full pipeline: verbalizer (search or load), benign baseline construction
// under the identical budget, the configured attack strategy, final test-split
// evaluation, and an atomically written report under out_dir.
AttackReport run(const RunConfig& config);

// Table 2-style rendering: one row per strategy with "accuracy (diff)" cells.
// Pure function of the report.
std::string report_render(const AttackReport& report);

}  // namespace promptforge
