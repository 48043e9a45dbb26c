#include "promptforge/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace promptforge {

namespace {

using nlohmann::json;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// attack hunts low accuracy, benign hunts high accuracy
bool better(Direction d, double candidate, double incumbent) {
  if (std::isnan(incumbent)) return true;
  return d == Direction::attack ? candidate < incumbent : candidate > incumbent;
}

std::vector<LabeledExample> train_eval_subsample(std::span<const LabeledExample> train,
                                                 const StrategyConfig& config) {
  if (train.empty()) throw Error("strategy: empty train split");
  if (config.train_eval_subsample <= 0 ||
      train.size() <= static_cast<size_t>(config.train_eval_subsample))
    return {train.begin(), train.end()};
  std::vector<size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng rng(Rng::mix(config.seed, 0x747261696eULL));
  rng.shuffle(idx);
  std::vector<LabeledExample> out;
  out.reserve(config.train_eval_subsample);
  for (int i = 0; i < config.train_eval_subsample; ++i) out.push_back(train[idx[i]]);
  return out;
}

double accuracy_of(const MaskedLm& lm, std::span<const LabeledExample> examples, const Template& tmpl,
                   const Verbalizer& verbalizer, int batch) {
  return evaluate_accuracy(lm, examples, tmpl, verbalizer, batch).accuracy;
}

Template all_mask_template(const MaskedLm& lm, int trigger_count) {
  Template t;
  t.trigger_token_ids.assign(trigger_count, lm.tokenizer().mask_token_id);
  return t;
}

json double_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

double double_from(const json& j) {
  if (j.is_null()) return kNan;
  return j.get<double>();
}

}  // namespace

std::string attack_state_to_json(const AttackState& state) {
  json j;
  j["strategy"] = state.strategy;
  j["direction"] = to_string(state.direction);
  j["seed"] = state.seed;
  j["iterations_done"] = state.iterations_done;
  j["current_template"] = state.current_template.trigger_token_ids;
  j["best_template"] = state.best_template.trigger_token_ids;
  j["best_metric"] = double_or_null(state.best_metric);
  json hist = json::array();
  for (const IterationRecord& r : state.history) {
    json h;
    h["iteration"] = r.iteration;
    h["evaluated_count"] = r.evaluated_count;
    h["train_acc"] = double_or_null(r.train_acc);
    h["selection_acc"] = double_or_null(r.selection_acc);
    h["best_metric"] = double_or_null(r.best_metric);
    hist.push_back(std::move(h));
  }
  j["history"] = std::move(hist);
  json beam = json::array();
  for (const BeamEntry& b : state.beam) {
    json e;
    e["prefix"] = b.prefix;
    e["train_accuracy"] = b.train_accuracy;
    beam.push_back(std::move(e));
  }
  j["beam"] = std::move(beam);
  j["ppl"] = double_or_null(state.ppl);
  j["warnings"] = state.warnings;
  return j.dump();
}

AttackState attack_state_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("bad attack state JSON: ") + e.what());
  }
  AttackState s;
  s.strategy = j.at("strategy").get<std::string>();
  s.direction = direction_from_string(j.at("direction").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  s.iterations_done = j.at("iterations_done").get<int>();
  s.current_template.trigger_token_ids = j.at("current_template").get<TokenSeq>();
  s.best_template.trigger_token_ids = j.at("best_template").get<TokenSeq>();
  s.best_metric = double_from(j.at("best_metric"));
  for (const auto& h : j.at("history")) {
    IterationRecord r;
    r.iteration = h.at("iteration").get<int>();
    r.evaluated_count = h.at("evaluated_count").get<int>();
    r.train_acc = double_from(h.at("train_acc"));
    r.selection_acc = double_from(h.at("selection_acc"));
    r.best_metric = double_from(h.at("best_metric"));
    s.history.push_back(r);
  }
  for (const auto& e : j.value("beam", json::array())) {
    BeamEntry b;
    b.prefix = e.at("prefix").get<TokenSeq>();
    b.train_accuracy = e.at("train_accuracy").get<double>();
    s.beam.push_back(std::move(b));
  }
  s.ppl = double_from(j.value("ppl", json()));
  s.warnings = j.value("warnings", std::vector<std::string>{});
  return s;
}

AttackState random_replacement(const MaskedLm& lm, const Template& init, const CandidateSet& candidates,
                               int iterations, std::span<const LabeledExample> train,
                               std::span<const LabeledExample> selection, const Verbalizer& verbalizer,
                               Direction direction, const StrategyConfig& config,
                               const CandidateConfig* refresh, const AttackState* resume_from,
                               const CheckpointFn& checkpoint) {
  if (iterations < 0) throw Error("random_replacement: negative iteration count");
  if (candidates.entries.empty()) throw Error("random_replacement: empty candidate set");
  if (selection.empty()) throw Error("random_replacement: empty selection split");
  const int n_slots = init.trigger_count();
  if (iterations > 0 && n_slots == 0) throw Error("random_replacement: template has no trigger slots");

  std::vector<LabeledExample> train_eval = train_eval_subsample(train, config);

  AttackState state;
  if (resume_from) {
    state = *resume_from;
    if (state.strategy != "random") throw Error("resume state is not from the random strategy");
    if (state.current_template.trigger_count() != n_slots)
      throw Error("resume state trigger count does not match");
    if (state.seed != config.seed) throw Error("resume state seed does not match the run seed");
    if (state.direction != direction) throw Error("resume state direction does not match");
  } else {
    state.strategy = "random";
    state.direction = direction;
    state.seed = config.seed;
    state.iterations_done = 0;
    state.current_template = init;
    state.best_template = init;
    state.best_metric = accuracy_of(lm, selection, init, verbalizer, config.eval_batch);
    state.ppl = kNan;
  }

  for (int iter = state.iterations_done; iter < iterations; ++iter) {
    int slot = static_cast<int>(Rng(Rng::mix(Rng::mix(config.seed, 0x736c6f74ULL),
                                             static_cast<std::uint64_t>(iter)))
                                    .below(static_cast<std::uint64_t>(n_slots)));

    const CandidateSet* cand = &candidates;
    CandidateSet refreshed;
    if (refresh) {
      CandidateConfig rc = *refresh;
      rc.resample_tag = static_cast<std::uint64_t>(iter) + 1;
      rc.only_slot = slot;
      std::vector<CandidateSet> sets = build_candidate_sets(lm, train, state.current_template, verbalizer, rc);
      refreshed = std::move(sets.front());
      cand = &refreshed;
    }

    Template winner = state.current_template;
    double winner_train = kNan;
    int evaluated = 0;
    for (const auto& [token, score] : cand->entries) {
      Template trial = state.current_template;
      trial.trigger_token_ids[slot] = token;
      double acc = accuracy_of(lm, train_eval, trial, verbalizer, config.eval_batch);
      ++evaluated;
      if (better(direction, acc, winner_train)) {
        winner = trial;
        winner_train = acc;
      }
    }

    double selection_acc = accuracy_of(lm, selection, winner, verbalizer, config.eval_batch);
    state.current_template = winner;
    if (better(direction, selection_acc, state.best_metric)) {
      state.best_template = winner;
      state.best_metric = selection_acc;
    }
    IterationRecord rec;
    rec.iteration = iter;
    rec.evaluated_count = evaluated;
    rec.train_acc = winner_train;
    rec.selection_acc = selection_acc;
    rec.best_metric = state.best_metric;
    state.history.push_back(rec);
    state.iterations_done = iter + 1;
    if (checkpoint) checkpoint(state);
  }
  return state;
}

AttackState beam_search(const MaskedLm& lm, std::span<const CandidateSet> candidates_per_slot,
                        int trigger_count, int beam_width, std::span<const LabeledExample> train,
                        std::span<const LabeledExample> selection, const Verbalizer& verbalizer,
                        Direction direction, const StrategyConfig& config, const CandidateConfig* refresh,
                        const AttackState* resume_from, const CheckpointFn& checkpoint) {
  if (trigger_count < 1) throw Error("beam_search: trigger count must be >= 1");
  if (beam_width < 1) throw Error("beam_search: beam width must be >= 1");
  if (static_cast<int>(candidates_per_slot.size()) != trigger_count)
    throw Error("beam_search: need one candidate set per slot");
  for (const CandidateSet& c : candidates_per_slot)
    if (c.entries.empty()) throw Error("beam_search: empty candidate set");
  if (selection.empty()) throw Error("beam_search: empty selection split");

  std::vector<LabeledExample> train_eval = train_eval_subsample(train, config);
  const TokenId mask_id = lm.tokenizer().mask_token_id;

  AttackState state;
  if (resume_from) {
    state = *resume_from;
    if (state.strategy != "beam") throw Error("resume state is not from the beam strategy");
    if (state.seed != config.seed) throw Error("resume state seed does not match the run seed");
    if (state.direction != direction) throw Error("resume state direction does not match");
    if (state.beam.empty()) throw Error("resume state carries no beam entries");
  } else {
    state.strategy = "beam";
    state.direction = direction;
    state.seed = config.seed;
    state.iterations_done = 0;
    state.current_template = all_mask_template(lm, trigger_count);
    state.best_template = state.current_template;
    state.best_metric = kNan;
    state.ppl = kNan;
    state.beam.push_back(BeamEntry{{}, kNan});
  }

  auto complete = [&](const TokenSeq& prefix) {
    Template t;
    t.trigger_token_ids = prefix;
    t.trigger_token_ids.resize(trigger_count, mask_id);
    return t;
  };

  for (int step = state.iterations_done; step < trigger_count; ++step) {
    const CandidateSet* step_candidates = &candidates_per_slot[step];
    CandidateSet refreshed;
    if (refresh) {
      CandidateConfig rc = *refresh;
      rc.resample_tag = static_cast<std::uint64_t>(step) + 1;
      rc.only_slot = step;
      refreshed = std::move(
          build_candidate_sets(lm, train, complete(state.beam.front().prefix), verbalizer, rc).front());
      step_candidates = &refreshed;
    }
    std::vector<BeamEntry> expansions;
    int evaluated = 0;
    for (const BeamEntry& entry : state.beam) {
      for (const auto& [token, score] : step_candidates->entries) {
        BeamEntry next;
        next.prefix = entry.prefix;
        next.prefix.push_back(token);
        next.train_accuracy = accuracy_of(lm, train_eval, complete(next.prefix), verbalizer, config.eval_batch);
        ++evaluated;
        expansions.push_back(std::move(next));
      }
    }
    std::sort(expansions.begin(), expansions.end(), [&](const BeamEntry& a, const BeamEntry& b) {
      if (a.train_accuracy != b.train_accuracy)
        return direction == Direction::attack ? a.train_accuracy < b.train_accuracy
                                              : a.train_accuracy > b.train_accuracy;
      return a.prefix < b.prefix;
    });
    if (static_cast<int>(expansions.size()) > beam_width) expansions.resize(beam_width);
    state.beam = std::move(expansions);

    IterationRecord rec;
    rec.iteration = step;
    rec.evaluated_count = evaluated;
    rec.train_acc = state.beam.front().train_accuracy;
    rec.selection_acc = kNan;
    rec.best_metric = state.best_metric;
    state.history.push_back(rec);
    state.iterations_done = step + 1;
    state.current_template = complete(state.beam.front().prefix);
    if (checkpoint) checkpoint(state);
  }

  // winner = best complete sequence; only it sees the selection split
  state.best_template = complete(state.beam.front().prefix);
  double selection_acc = accuracy_of(lm, selection, state.best_template, verbalizer, config.eval_batch);
  state.best_metric = selection_acc;
  if (!state.history.empty()) {
    state.history.back().selection_acc = selection_acc;
    state.history.back().best_metric = selection_acc;
  }
  if (checkpoint) checkpoint(state);
  return state;
}

AttackState fluent_attack(const MaskedLm& lm, const CausalLm& causal, const CandidateSet& candidates,
                          int trigger_count, std::span<const LabeledExample> train,
                          std::span<const LabeledExample> selection, const Verbalizer& verbalizer,
                          Direction direction, const StrategyConfig& config) {
  if (candidates.entries.empty()) throw Error("fluent_attack: empty candidate set");
  if (trigger_count < 1) throw Error("fluent_attack: trigger count must be >= 1");
  if (selection.empty()) throw Error("fluent_attack: empty selection split");

  std::vector<LabeledExample> train_eval = train_eval_subsample(train, config);
  const TokenId mask_id = lm.tokenizer().mask_token_id;

  AttackState state;
  state.strategy = "fluent";
  state.direction = direction;
  state.seed = config.seed;
  state.ppl = kNan;

  Template winner;
  double winner_train = kNan;
  int evaluated = 0;
  bool padded_any = false;

  for (const auto& [token, score] : candidates.entries) {
    std::string first = lm.decode(std::span<const TokenId>(&token, 1));
    std::string text = first;
    TokenSeq prefix;
    try {
      prefix = causal.encode(first);
    } catch (const BackendError&) {
      // candidate word unknown to the causal vocabulary: no continuation
    }
    if (!prefix.empty()) {
      TokenSeq generated = causal.generate(prefix, static_cast<int>(prefix.size()) + trigger_count,
                                           config.seed);
      text = causal.decode(generated);
    }

    // bridge back through the masked-LM tokenizer, word by word so an
    // unencodable piece degrades to a mask id instead of failing the run
    Template tmpl;
    for (const std::string& word : split_whitespace(text)) {
      if (tmpl.trigger_count() >= trigger_count) break;
      TokenSeq ids;
      try {
        ids = lm.encode(word);
      } catch (const BackendError&) {
        ids.clear();
      }
      if (ids.empty()) {
        tmpl.trigger_token_ids.push_back(mask_id);
        padded_any = true;
      } else {
        for (TokenId id : ids) {
          if (tmpl.trigger_count() >= trigger_count) break;
          tmpl.trigger_token_ids.push_back(id);
        }
      }
    }
    while (tmpl.trigger_count() < trigger_count) {
      tmpl.trigger_token_ids.push_back(mask_id);
      padded_any = true;
    }

    double acc = accuracy_of(lm, train_eval, tmpl, verbalizer, config.eval_batch);
    ++evaluated;
    if (better(direction, acc, winner_train)) {
      winner = tmpl;
      winner_train = acc;
    }
  }
  if (padded_any) state.warnings.push_back("some generated tokens were unencodable; substituted mask ids");

  double selection_acc = accuracy_of(lm, selection, winner, verbalizer, config.eval_batch);
  state.current_template = winner;
  state.best_template = winner;
  state.best_metric = selection_acc;
  state.iterations_done = 1;
  state.ppl = template_perplexity(winner, lm, causal);
  if (std::isnan(state.ppl))
    state.warnings.push_back("winner template could not be scored for perplexity");

  IterationRecord rec;
  rec.iteration = 0;
  rec.evaluated_count = evaluated;
  rec.train_acc = winner_train;
  rec.selection_acc = selection_acc;
  rec.best_metric = selection_acc;
  state.history.push_back(rec);
  return state;
}

double perplexity(std::span<const TokenId> token_ids, const CausalLm& causal) {
  if (token_ids.size() < 2) throw Error("perplexity: sequence too short (need length >= 2)");
  double ll = causal.causal_log_likelihood(token_ids);
  return std::exp(-ll / static_cast<double>(token_ids.size() - 1));
}

double template_perplexity(const Template& tmpl, const MaskedLm& lm, const CausalLm& causal) {
  TokenSeq causal_ids;
  try {
    causal_ids = causal.encode(lm.decode(tmpl.trigger_token_ids));
  } catch (const BackendError&) {
    return kNan;  // causal vocabulary cannot express the template
  }
  if (causal_ids.size() < 2) return kNan;
  return perplexity(causal_ids, causal);
}

}  // namespace promptforge
