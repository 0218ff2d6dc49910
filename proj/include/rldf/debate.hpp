#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rldf/backend.hpp"
#include "rldf/core.hpp"

namespace rldf {

struct Topic {
  std::int64_t id = 0;
  BiasCategory category;
  std::string text;
};

struct Statement {
  std::int64_t topic_id = 0;
  int round_index = 0;  // 1-based
  std::string role_label;
  std::string text;
  int token_len = 0;
};

struct RefereeVerdict {
  std::int64_t topic_id = 0;
  int round_index = 0;
  std::map<std::string, int> scores;  // role label -> score in [score_min, score_max]
  std::map<std::string, int> ranks;   // role label -> rank, a permutation of 1..n
  std::string raw_text;
};

struct DebateRound {
  std::vector<Statement> statements;
  RefereeVerdict verdict;
};

struct DebateTranscript {
  DebateConfig config;
  std::string config_digest;
  Topic topic;
  std::vector<DebateRound> rounds;

  Json to_json() const;
  static DebateTranscript from_json(const Json& j);
};

// Editable prompt text, one file per template under a templates directory.
// Missing files are initialized with the built-in defaults.
struct PromptTemplates {
  std::string debater_system;       // {label} {persona_note}
  std::string debate_user;          // {topic}
  std::string debater_turn;         // {label} {round}
  std::string referee_system;
  std::string referee_instruction;  // {n}
  std::string referee_retry;        // {n} {score_min} {score_max}
  std::string topic_system;
  std::string topic_request;        // {category}
  std::string pair_prompt;          // {topic}
  std::string judge_system;
  std::string judge;                // {metric} {rubric} {response}
  std::string judge_rubric_bs;
  std::string judge_rubric_ce;
  std::string judge_rubric_ls;
  std::string bbq_system;
  std::string bbq_answer;           // {context} {question} {option0..2}

  static PromptTemplates defaults();
  static PromptTemplates load_or_init(const std::filesystem::path& dir);
};

// Extracts per-role scores and the ranking from referee free text, or from
// the strict "SCORES: ...; RANKS: ..." fallback format. Fails rather than
// guessing on missing, ambiguous or out-of-range values.
RefereeVerdict parse_verdict(const std::string& raw, const std::vector<RoleSpec>& roles,
                             int score_min, int score_max);

// Canonical one-line rendering of a verdict, replayed into later prompts.
std::string format_verdict_line(const RefereeVerdict& verdict, const std::vector<RoleSpec>& roles);

std::vector<Topic> generate_topics(const BiasCategory& category, int m, ChatBackend& backend,
                                   const PromptTemplates& templates, int attempt_budget = 0);

DebateTranscript run_debate(const Topic& topic, const DebateConfig& cfg,
                            const ModeAssignment& assignment, const PromptTemplates& templates,
                            int max_seq_len);

// Append-only JSONL store, one transcript object per line.
class TranscriptStore {
 public:
  explicit TranscriptStore(std::filesystem::path path) : path_(std::move(path)) {}

  const std::filesystem::path& path() const { return path_; }
  void append(const DebateTranscript& transcript);
  std::vector<DebateTranscript> load_all() const;
  std::set<std::int64_t> topic_ids() const;

 private:
  std::filesystem::path path_;
};

struct RunSummary {
  int attempted = 0;
  int succeeded = 0;
  int failed = 0;
  int skipped = 0;  // already present in the store (resume)
  long statements = 0;
  std::vector<std::pair<std::int64_t, std::string>> failures;
};

// Runs every topic not yet in the store; per-topic failures are recorded,
// not fatal. Transcripts are persisted in topic order before returning.
RunSummary run_category(const DebateConfig& cfg, const ModeAssignment& assignment,
                        const PromptTemplates& templates, const std::vector<Topic>& topics,
                        TranscriptStore& store, int max_seq_len);

}  // namespace rldf
