#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rldf/common.hpp"

namespace rldf {

using Json = nlohmann::ordered_json;

// ----------------------------------------------------------------------------
// Domain types
// ----------------------------------------------------------------------------

// One of the five built-in bias categories, or a custom free-text one.
struct BiasCategory {
  std::string name;

  static const std::vector<std::string>& builtins();
  bool is_builtin() const;

  bool operator==(const BiasCategory&) const = default;
};

struct RoleSpec {
  std::string label;
  std::string persona_note;

  bool operator==(const RoleSpec&) const = default;
};

struct DebateConfig {
  BiasCategory category{"age"};
  std::vector<RoleSpec> roles;  // n debaters
  int rounds = 5;               // K
  int topics = 2000;            // m
  int bias_threshold = 3;
  int score_min = 0;
  int score_max = 10;
  std::uint64_t seed = 0;
  int parallelism = 1;

  static DebateConfig defaults();
  Json to_json() const;
  static DebateConfig from_json(const Json& j);
  std::string digest() const;
};

struct TokenSequence {
  std::vector<std::int32_t> tokens;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  bool operator==(const TokenSequence&) const = default;
};

// Drops tokens beyond max_len from the right end; the result is a prefix.
TokenSequence truncate_right(const TokenSequence& seq, std::size_t max_len);

struct PipelineConfig {
  int max_seq_len = 2048;
  double rm_lr = 3e-5;
  int rm_batch = 32;
  double ppo_lr = 5e-6;
  int ppo_batch = 4;
  int epochs = 1;
  // KL coefficient. No default: it must be set explicitly in the config.
  double beta = std::numeric_limits<double>::quiet_NaN();
  int min_pairs = 5000;
  int pair_cap = 8;
  int feature_dim = 1 << 16;
  int context_width = 2;
  int policy_rows = 4096;
  double sft_lr = 0.1;
  int sft_batch = 32;

  Json to_json() const;
  static PipelineConfig from_json(const Json& j);
};

// ----------------------------------------------------------------------------
// Validation
// ----------------------------------------------------------------------------

struct ConfigViolation {
  std::string field;    // dotted path, e.g. "debate.rounds"
  std::string kind;     // "RangeViolation" | "DuplicateRole"
  std::string message;
};

struct ValidationReport {
  std::vector<ConfigViolation> violations;

  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

// Pure check: returns an empty report iff every invariant holds.
ValidationReport validate_config(const DebateConfig& debate, const PipelineConfig& pipeline);

// ----------------------------------------------------------------------------
// Tokenizer and vocabulary
//
// Word-level: text is lowercased and split at whitespace; punctuation
// characters become single-character tokens.
// ----------------------------------------------------------------------------

std::vector<std::string> tokenize_words(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::int32_t kUnkId = 0;
  static constexpr std::int32_t kEosId = 1;

  Vocabulary();
  static Vocabulary build(const std::vector<std::string>& corpus);

  std::int32_t size() const { return static_cast<std::int32_t>(tokens_.size()); }
  const std::string& token(std::int32_t id) const;
  std::int32_t id_of(std::string_view token) const;  // kUnkId if absent

  TokenSequence encode(std::string_view text) const;
  std::string decode(const TokenSequence& seq) const;

  Json to_json() const;
  static Vocabulary from_json(const Json& j);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::int32_t> index_;
};

}  // namespace rldf
