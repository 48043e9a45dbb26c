#include "promptforge/data_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace promptforge {

namespace {

using nlohmann::json;

std::string make_id(size_t ordinal) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "r%06zu", ordinal);
  return buf;
}

bool parse_label(const std::string& s, int& out) {
  std::string t = trim(s);
  if (t.empty()) return false;
  size_t pos = 0;
  int v;
  try {
    v = std::stoi(t, &pos);
  } catch (...) {
    return false;
  }
  if (pos != t.size()) return false;
  if (v != 0 && v != 1) return false;
  out = v;
  return true;
}

// Minimal RFC 4180: quoted fields may contain commas, newlines are not
// supported inside fields (line-oriented input).
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

struct RowSink {
  std::vector<LabeledExample> out;
  LoadStats stats;

  void accept(std::string text, int label) {
    text = normalize_whitespace(text);
    if (text.empty()) {
      ++stats.skipped;
      return;
    }
    LabeledExample ex;
    ex.text = std::move(text);
    ex.label = label;
    ex.id = make_id(out.size() + 1);
    out.push_back(std::move(ex));
    ++stats.loaded;
  }
};

}  // namespace

DataFormat data_format_from_string(const std::string& s) {
  if (s == "tsv") return DataFormat::tsv;
  if (s == "csv") return DataFormat::csv;
  if (s == "amazon-jsonl") return DataFormat::amazon_jsonl;
  throw ConfigError("unknown dataset format: " + s);
}

std::string to_string(DataFormat f) {
  switch (f) {
    case DataFormat::tsv: return "tsv";
    case DataFormat::csv: return "csv";
    case DataFormat::amazon_jsonl: return "amazon-jsonl";
  }
  return "?";
}

std::vector<LabeledExample> load_dataset(const std::string& path, DataFormat format, LoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);

  RowSink sink;
  std::string line;

  if (format == DataFormat::tsv || format == DataFormat::csv) {
    if (!std::getline(in, line)) throw DataError("dataset has no header row: " + path);
    line = strip_cr(line);
    int text_col = -1, label_col = -1;
    std::vector<std::string> header =
        format == DataFormat::tsv ? [&] {
          std::vector<std::string> cols;
          std::istringstream hs(line);
          std::string c;
          while (std::getline(hs, c, '\t')) cols.push_back(c);
          return cols;
        }()
                                  : split_csv_line(line);
    for (size_t i = 0; i < header.size(); ++i) {
      std::string h = trim(header[i]);
      if (h == "sentence" || h == "text") text_col = static_cast<int>(i);
      if (h == "label") label_col = static_cast<int>(i);
    }
    if (text_col < 0 || label_col < 0)
      throw DataError("dataset header must name a sentence/text column and a label column: " + path);

    while (std::getline(in, line)) {
      line = strip_cr(line);
      if (line.empty()) continue;
      std::vector<std::string> cols;
      if (format == DataFormat::tsv) {
        std::istringstream ls(line);
        std::string c;
        while (std::getline(ls, c, '\t')) cols.push_back(c);
      } else {
        cols = split_csv_line(line);
      }
      int label;
      if (static_cast<int>(cols.size()) <= std::max(text_col, label_col) ||
          !parse_label(cols[label_col], label)) {
        ++sink.stats.skipped;
        continue;
      }
      sink.accept(cols[text_col], label);
    }
  } else {
    while (std::getline(in, line)) {
      line = strip_cr(line);
      if (trim(line).empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        ++sink.stats.skipped;
        continue;
      }
      if (!j.contains("summary") || !j.contains("overall") || !j["summary"].is_string() ||
          !j["overall"].is_number()) {
        ++sink.stats.skipped;
        continue;
      }
      double overall = j["overall"].get<double>();
      if (overall == 3.0) {
        ++sink.stats.dropped_neutral;
        continue;
      }
      int label;
      if (overall == 1.0 || overall == 2.0) {
        label = 0;
      } else if (overall == 4.0 || overall == 5.0) {
        label = 1;
      } else {
        ++sink.stats.skipped;
        continue;
      }
      sink.accept(j["summary"].get<std::string>(), label);
    }
  }

  size_t total = sink.stats.loaded + sink.stats.skipped + sink.stats.dropped_neutral;
  if (total > 0 && static_cast<double>(sink.stats.skipped) > 0.05 * static_cast<double>(total))
    throw DataError("more than 5% malformed rows in " + path + " (" + std::to_string(sink.stats.skipped) +
                    " of " + std::to_string(total) + ")");
  if (stats) *stats = sink.stats;
  return std::move(sink.out);
}

void save_tsv(const std::string& path, std::span<const LabeledExample> examples) {
  std::ostringstream out;
  out << "sentence\tlabel\n";
  for (const auto& ex : examples) out << ex.text << '\t' << ex.label << '\n';
  atomic_write_file(path, out.str());
}

std::vector<LabeledExample> balanced_subset(std::span<const LabeledExample> examples, int per_class,
                                            std::uint64_t seed) {
  if (per_class < 0) throw Error("per_class must be non-negative");
  std::map<int, std::vector<size_t>> by_label;
  for (size_t i = 0; i < examples.size(); ++i) by_label[examples[i].label].push_back(i);

  std::vector<size_t> chosen;
  for (auto& [label, idxs] : by_label) {
    if (static_cast<int>(idxs.size()) < per_class)
      throw DataError("class " + std::to_string(label) + " has only " + std::to_string(idxs.size()) +
                      " examples, need " + std::to_string(per_class));
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(label) + 0x62616cULL));
    rng.shuffle(idxs);
    chosen.insert(chosen.end(), idxs.begin(), idxs.begin() + per_class);
  }
  Rng order_rng(Rng::mix(seed, 0x6f72646572ULL));
  order_rng.shuffle(chosen);
  std::vector<LabeledExample> out;
  out.reserve(chosen.size());
  for (size_t i : chosen) out.push_back(examples[i]);
  return out;
}

std::string dataset_ref(std::span<const LabeledExample> examples) {
  // order-independent content hash: evaluation is permutation-invariant
  std::vector<std::string> parts;
  parts.reserve(examples.size());
  for (const auto& ex : examples)
    parts.push_back(ex.id + '\x1f' + ex.text + '\x1f' + std::to_string(ex.label));
  std::sort(parts.begin(), parts.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : parts) h = fnv1a64(hex64(h) + p);
  return hex64(h);
}

std::string verbalizer_ref(const Verbalizer& verbalizer) { return hex64(fnv1a64(verbalizer_to_json(verbalizer))); }

EvalResult evaluate_accuracy(const MaskedLm& lm, std::span<const LabeledExample> examples,
                             const Template& tmpl, const Verbalizer& verbalizer, int batch_size) {
  if (examples.empty()) throw Error("evaluate_accuracy: no examples");
  if (batch_size < 1) throw Error("evaluate_accuracy: batch_size must be >= 1");
  verbalizer.validate(lm.tokenizer().vocab_size);

  std::map<int, int> correct_by_label;
  std::map<int, int> count_by_label;
  size_t done = 0;
  while (done < examples.size()) {
    size_t end = std::min(done + static_cast<size_t>(batch_size), examples.size());
    for (size_t i = done; i < end; ++i) {
      const LabeledExample& ex = examples[i];
      PromptInstance inst;
      try {
        inst = instantiate(lm, tmpl, ex.text, ex.id);
      } catch (const std::exception& e) {
        throw Error("evaluation aborted at example '" + ex.id + "': " + e.what());
      }
      int predicted = predict_label(lm, inst, verbalizer);
      ++count_by_label[ex.label];
      if (predicted == ex.label) ++correct_by_label[ex.label];
    }
    done = end;
  }

  EvalResult r;
  int total_correct = 0;
  for (const auto& [label, count] : count_by_label) {
    int correct = correct_by_label[label];
    total_correct += correct;
    r.per_label_counts[label] = count;
    r.per_label_accuracy[label] = static_cast<double>(correct) / static_cast<double>(count);
  }
  r.n = static_cast<int>(examples.size());
  r.accuracy = static_cast<double>(total_correct) / static_cast<double>(r.n);
  r.template_json = template_to_json(tmpl, lm);
  r.verbalizer_ref = verbalizer_ref(verbalizer);
  r.dataset_ref = dataset_ref(examples);
  return r;
}

double diff_pp(const EvalResult& baseline, const EvalResult& attacked) {
  if (baseline.dataset_ref != attacked.dataset_ref)
    throw Error("diff: results reference different datasets");
  if (baseline.verbalizer_ref != attacked.verbalizer_ref)
    throw Error("diff: results reference different verbalizers");
  return (baseline.accuracy - attacked.accuracy) * 100.0;
}

std::string eval_result_to_json(const EvalResult& r) {
  json j;
  j["accuracy"] = r.accuracy;
  j["n"] = r.n;
  json pla = json::object(), plc = json::object();
  for (const auto& [label, acc] : r.per_label_accuracy) pla[std::to_string(label)] = acc;
  for (const auto& [label, cnt] : r.per_label_counts) plc[std::to_string(label)] = cnt;
  j["per_label_accuracy"] = std::move(pla);
  j["per_label_counts"] = std::move(plc);
  j["template"] = r.template_json.empty() ? json(nullptr) : json::parse(r.template_json);
  j["verbalizer_ref"] = r.verbalizer_ref;
  j["dataset_ref"] = r.dataset_ref;
  return j.dump();
}

EvalResult eval_result_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  EvalResult r;
  r.accuracy = j.at("accuracy").get<double>();
  r.n = j.at("n").get<int>();
  for (const auto& [k, v] : j.at("per_label_accuracy").items()) r.per_label_accuracy[std::stoi(k)] = v.get<double>();
  for (const auto& [k, v] : j.at("per_label_counts").items()) r.per_label_counts[std::stoi(k)] = v.get<int>();
  r.template_json = j.at("template").is_null() ? std::string() : j.at("template").dump();
  r.verbalizer_ref = j.at("verbalizer_ref").get<std::string>();
  r.dataset_ref = j.at("dataset_ref").get<std::string>();
  return r;
}

}  // namespace promptforge
