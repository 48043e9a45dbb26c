#pragma once

#include <map>
#include <string>
#include <vector>

#include "promptforge/prompting.hpp"
#include "promptforge/util.hpp"

namespace promptforge {

struct LabeledExample {
  std::string text;  // whitespace-normalized, non-empty
  int label = 0;
  std::string id;  // dense ordinal, stable for a given file

  bool operator==(const LabeledExample&) const = default;
};

enum class DataFormat { tsv, csv, amazon_jsonl };

DataFormat data_format_from_string(const std::string& s);
std::string to_string(DataFormat f);

struct LoadStats {
  size_t loaded = 0;
  size_t skipped = 0;          // malformed rows
  size_t dropped_neutral = 0;  // amazon overall == 3.0
};

// tsv: header "sentence<TAB>label". csv: header row with text/label columns.
// amazon-jsonl: text from `summary`, label from `overall` (1,2 -> 0; 4,5 -> 1;
// 3 dropped). Malformed rows are skipped with a counted warning; more than 5%
// skipped is a hard error.
std::vector<LabeledExample> load_dataset(const std::string& path, DataFormat format,
                                         LoadStats* stats = nullptr);

void save_tsv(const std::string& path, std::span<const LabeledExample> examples);

// Exactly per_class examples per label, seeded selection, stable ids retained.
std::vector<LabeledExample> balanced_subset(std::span<const LabeledExample> examples, int per_class,
                                            std::uint64_t seed);

struct EvalResult {
  double accuracy = 0.0;
  int n = 0;
  std::map<int, double> per_label_accuracy;
  std::map<int, int> per_label_counts;
  std::string template_json;
  std::string verbalizer_ref;  // content hash
  std::string dataset_ref;     // content hash
};

// Fraction of examples whose predicted label equals gold, evaluated in batches
// of batch_size. Any instantiation failure aborts carrying the example id.
EvalResult evaluate_accuracy(const MaskedLm& lm, std::span<const LabeledExample> examples,
                             const Template& tmpl, const Verbalizer& verbalizer, int batch_size = 48);

// baseline.accuracy - attacked.accuracy in percentage points. Requires both
// results to reference the same dataset and verbalizer.
double diff_pp(const EvalResult& baseline, const EvalResult& attacked);

std::string dataset_ref(std::span<const LabeledExample> examples);
std::string verbalizer_ref(const Verbalizer& verbalizer);

std::string eval_result_to_json(const EvalResult& r);
EvalResult eval_result_from_json(const std::string& json_text);

}  // namespace promptforge
