#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rldf {

// ----------------------------------------------------------------------------
// Errors
//
// Every failure the pipeline can surface carries a stable `kind` string used
// by the CLI to emit machine-readable error records and pick exit codes.
// ----------------------------------------------------------------------------

class RldfError : public std::runtime_error {
 public:
  RldfError(std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

// Backend-layer failures map to CLI exit code 3.
class BackendError : public RldfError {
  using RldfError::RldfError;
};
struct BackendUnreachable : BackendError {
  explicit BackendUnreachable(const std::string& m) : BackendError("BackendUnreachable", m) {}
};
struct RateLimited : BackendError {
  explicit RateLimited(const std::string& m) : BackendError("RateLimited", m) {}
};
struct ScriptExhausted : BackendError {
  explicit ScriptExhausted(const std::string& m) : BackendError("ScriptExhausted", m) {}
};
struct MalformedResponse : BackendError {
  explicit MalformedResponse(const std::string& m) : BackendError("MalformedResponse", m) {}
};
struct CassetteMiss : BackendError {
  explicit CassetteMiss(const std::string& m) : BackendError("CassetteMiss", m) {}
};
struct CassetteCorrupt : BackendError {
  explicit CassetteCorrupt(const std::string& m) : BackendError("CassetteCorrupt", m) {}
};

// Data-layer failures map to CLI exit code 4.
class DataError : public RldfError {
  using RldfError::RldfError;
};
struct IoFailure : DataError {
  explicit IoFailure(const std::string& m) : DataError("IoFailure", m) {}
};
struct TopicShortfall : DataError {
  explicit TopicShortfall(const std::string& m) : DataError("TopicShortfall", m) {}
};
struct VerdictParseFailure : DataError {
  explicit VerdictParseFailure(const std::string& m) : DataError("VerdictParseFailure", m) {}
};
struct SchemaViolation : DataError {
  explicit SchemaViolation(const std::string& m) : DataError("SchemaViolation", m) {}
};
struct ScoreParseFailure : DataError {
  explicit ScoreParseFailure(const std::string& m) : DataError("ScoreParseFailure", m) {}
};
struct NonFiniteLoss : DataError {
  explicit NonFiniteLoss(const std::string& m) : DataError("NonFiniteLoss", m) {}
};
struct NonFiniteUpdate : DataError {
  explicit NonFiniteUpdate(const std::string& m) : DataError("NonFiniteUpdate", m) {}
};
struct SupportMismatch : DataError {
  explicit SupportMismatch(const std::string& m) : DataError("SupportMismatch", m) {}
};
struct UndefinedKappa : DataError {
  explicit UndefinedKappa(const std::string& m) : DataError("UndefinedKappa", m) {}
};
struct RowSumViolation : DataError {
  explicit RowSumViolation(const std::string& m) : DataError("RowSumViolation", m) {}
};
struct PairBudgetShortfall : DataError {
  explicit PairBudgetShortfall(const std::string& m) : DataError("PairBudgetShortfall", m) {}
};

// Configuration failures map to CLI exit code 2.
struct ConfigError : RldfError {
  explicit ConfigError(const std::string& m) : RldfError("ConfigError", m) {}
};

// ----------------------------------------------------------------------------
// Hashing
// ----------------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t fnv1a64(std::span<const std::int32_t> values, std::uint64_t seed);

// Hex-encoded SHA-256 of the given bytes. Used for request digests, config
// digests and artifact manifests.
std::string sha256_hex(std::string_view bytes);

// ----------------------------------------------------------------------------
// Deterministic RNG
//
// One master seed fans out to named per-stage streams; each (stage, index)
// pair yields an independent mt19937_64 stream, so stages and parallel units
// are individually reproducible. mt19937_64 is fully specified by the
// standard; all draws below avoid std distributions, which are not.
// ----------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x);

// Stream seed for (master, stage name, index within stage).
std::uint64_t derive_stream(std::uint64_t master, std::string_view stage, std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  // Gaussian via Box-Muller (no cached spare; two draws per call).
  double gauss(double mean = 0.0, double stddev = 1.0);

  // Index draw from an unnormalized non-negative weight vector.
  std::size_t categorical(std::span<const double> weights);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// ----------------------------------------------------------------------------
// Stable math
// ----------------------------------------------------------------------------

// softplus(t) = ln(1 + e^t), computed without overflow.
inline double softplus(double t) {
  if (t > 0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

// -ln sigma(z) == softplus(-z)
inline double neg_log_sigmoid(double z) { return softplus(-z); }

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// ----------------------------------------------------------------------------
// Strings and files
// ----------------------------------------------------------------------------

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::string replace_all(std::string text, std::string_view from, std::string_view to);

std::string read_file(const std::filesystem::path& path);
// Writes to a temp file in the same directory, then renames into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace rldf
