#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace promptforge {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Pipeline-stage failure carrying the stage name and config hash (CLI exit code 3).
class StageError : public Error {
 public:
  StageError(std::string stage, std::string config_hash, const std::string& what)
      : Error("[stage " + stage + ", config " + config_hash + "] " + what),
        stage_(std::move(stage)),
        config_hash_(std::move(config_hash)) {}
  const std::string& stage() const { return stage_; }
  const std::string& config_hash() const { return config_hash_; }

 private:
  std::string stage_;
  std::string config_hash_;
};

// Dense row-major matrix of doubles. Small models only; no BLAS.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

  double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {a.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {a.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }
  bool empty() const { return a.empty(); }
};

double log_sum_exp(std::span<const double> xs);
double dot(std::span<const double> x, std::span<const double> y);

// Deterministic splitmix64 generator. Used instead of <random> distributions so
// that seeded runs are bit-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double normal();

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent substream seed; used for stateless per-iteration draws.
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b);

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view s);
std::string hex64(std::uint64_t v);

std::string trim(std::string_view s);
// Trims and collapses internal whitespace runs to single spaces.
std::string normalize_whitespace(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);

std::string read_file(const std::string& path);
// Writes via temp file + rename so a crash never leaves a partial file at `path`.
void atomic_write_file(const std::string& path, std::string_view content);

// "0.3302" -> "33.02%"
std::string format_pct(double fraction);
// "56.77" (already percentage points) -> "56.77%"
std::string format_pp(double pp);

}  // namespace promptforge
