#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rldf/core.hpp"
#include "rldf/debate.hpp"

namespace rldf {

enum class BiasLabel { HighBias, LowBias };

// label == HighBias <=> score > bias_threshold
struct ScoredStatement {
  Statement statement;
  int score = 0;
  BiasLabel label = BiasLabel::LowBias;
};

struct PreferencePair {
  std::int64_t topic_id = 0;
  std::string prompt;
  ScoredStatement chosen;    // LowBias
  ScoredStatement rejected;  // HighBias
};

struct SftExample {
  std::string prompt;
  std::string completion;
  int score = 0;
};

struct PartitionResult {
  std::vector<ScoredStatement> high;
  std::vector<ScoredStatement> low;
};

// Exact, exclusive partition: score > threshold goes high, score <= threshold low.
PartitionResult partition(const std::vector<std::pair<Statement, int>>& statements, int threshold);

// Joins each statement with its own round's verdict score.
std::vector<std::pair<Statement, int>> collect_scored(const DebateTranscript& transcript);

struct PairBuild {
  std::vector<PreferencePair> pairs;
  std::vector<SftExample> sft;
  std::map<std::int64_t, int> per_topic_yield;
  std::vector<std::int64_t> empty_side_topics;  // zero-pair topics, logged not fatal
};

// Cross product of LowBias x HighBias per topic, capped at pair_cap pairs per
// topic in a diagonal order that spreads picks across rounds. Deterministic
// given store contents.
PairBuild build_pairs(std::vector<DebateTranscript> transcripts, int threshold, int pair_cap,
                      const std::string& pair_prompt_template);

struct BudgetReport {
  bool ok = false;
  int total = 0;
  int min_pairs = 0;
  int deficit = 0;
  std::map<std::int64_t, int> per_topic_yield;

  std::string to_string() const;
};

BudgetReport enforce_budget(const PairBuild& build, int min_pairs);

// Writes pairs.jsonl, sft.jsonl and manifest.json into out_dir and returns
// the manifest. Re-export of identical inputs is byte-identical.
Json export_dataset(const PairBuild& build, const std::string& category,
                    const std::string& config_digest, int min_pairs,
                    const std::filesystem::path& out_dir);

std::vector<PreferencePair> load_pairs(const std::filesystem::path& pairs_jsonl);
std::vector<SftExample> load_sft(const std::filesystem::path& sft_jsonl);

}  // namespace rldf
