#pragma once

// Shared fixtures: deterministic toy model specs, temp directories, and the
// independent oracle helpers the tests check the implementation against.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "promptforge/model_backend.hpp"
#include "promptforge/prompting.hpp"

namespace pftest {

using namespace promptforge;

struct SpecOptions {
  int words = 16;  // content vocabulary size (mask and friends extra)
  int dim = 8;
  std::uint64_t seed = 1;
  ToyMaskedSpec::Head head = ToyMaskedSpec::Head::softmax;
  ToyMaskedSpec::Pooling pooling = ToyMaskedSpec::Pooling::triggers;
  int trigger_window = 0;
  bool zero_mask_embedding = false;
  bool with_unk = false;
  bool with_period = false;
  int max_len = 64;
};

// vocab: ["<mask>", ("<unk>"), ("."), "w0", "w1", ...]; random small weights
inline ToyMaskedSpec make_masked_spec(const SpecOptions& opt) {
  ToyMaskedSpec s;
  s.vocab.push_back("<mask>");
  s.special_tokens = {"<mask>"};
  if (opt.with_unk) {
    s.vocab.push_back("<unk>");
    s.special_tokens.push_back("<unk>");
    s.unk_token = "<unk>";
  }
  if (opt.with_period) s.vocab.push_back(".");
  for (int i = 0; i < opt.words; ++i) s.vocab.push_back("w" + std::to_string(i));
  s.mask_token = "<mask>";
  s.dim = opt.dim;
  s.max_len = opt.max_len;
  s.head = opt.head;
  s.pooling = opt.pooling;
  s.trigger_window = opt.trigger_window;

  const int v = static_cast<int>(s.vocab.size());
  Rng rng(Rng::mix(opt.seed, 0x73706563ULL));
  s.input_embeddings = Matrix(v, opt.dim);
  for (double& x : s.input_embeddings.a) x = rng.normal();
  s.head_weight = Matrix(v, opt.dim);
  for (double& x : s.head_weight.a) x = 0.5 * rng.normal();
  s.head_bias.resize(v);
  for (double& x : s.head_bias) x = 0.1 * rng.normal();
  if (opt.zero_mask_embedding)
    for (int k = 0; k < opt.dim; ++k) s.input_embeddings.at(0, k) = 0.0;
  return s;
}

inline TokenId word_id(const MaskedLm& lm, const std::string& word) {
  TokenSeq ids = lm.encode(word);
  if (ids.size() != 1) throw Error("word_id: not a single token: " + word);
  return ids[0];
}

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    path = std::filesystem::temp_directory_path() / ("pf_test_" + hex64(random_device_like()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }

 private:
  static std::uint64_t random_device_like() {
    static std::uint64_t counter = 0x74657374ULL;
    return Rng::mix(counter++, reinterpret_cast<std::uintptr_t>(&counter));
  }
};

// Spearman rank correlation; ranks use average-of-ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& xs) {
    std::vector<size_t> idx(xs.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t l, size_t r) { return xs[l] < xs[r]; });
    std::vector<double> rank(xs.size());
    size_t i = 0;
    while (i < idx.size()) {
      size_t j = i;
      while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
      double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0;
      for (size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
      i = j + 1;
    }
    return rank;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

inline double rel_err(double got, double want) {
  double denom = std::max({std::abs(got), std::abs(want), 1e-300});
  return std::abs(got - want) / denom;
}

}  // namespace pftest
