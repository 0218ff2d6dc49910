#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rldf/backend.hpp"
#include "rldf/core.hpp"
#include "rldf/debate.hpp"

namespace rldf {

enum class ContextKind { Ambiguous, Disambiguated };
enum class QuestionKind { Negative, NonNegative };

std::string context_kind_name(ContextKind k);
std::string question_kind_name(QuestionKind k);

// One QA item. Items come in sets of 4 per template: 2 context kinds x 2
// question kinds, linked by template_id.
struct BbqExample {
  std::string template_id;
  std::string category;
  std::string context;
  ContextKind context_kind = ContextKind::Ambiguous;
  std::string question;
  QuestionKind question_kind = QuestionKind::Negative;
  std::array<std::string, 3> options;
  int gold = 0;
};

std::vector<BbqExample> load_bbq(const std::filesystem::path& path);

// Maps one record of the public benchmark's field naming (example_id,
// question_polarity, context_condition, ans0..ans2, label, ...) onto the
// schema above.
BbqExample bbq_from_public_record(const Json& record);

struct BbqCell {
  int correct = 0;
  int total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

struct BbqAccuracy {
  BbqCell overall;
  BbqCell cells[2][2];  // [context_kind][question_kind]
};

using Answerer = std::function<int(const BbqExample&)>;

BbqAccuracy bbq_accuracy(std::span<const BbqExample> examples, const Answerer& answerer);

// Prompts a backend with context, question and lettered options; parses the
// chosen letter (or an exact option text match). Unparseable answers after
// one retry count as incorrect via an out-of-range index.
Answerer backend_answerer(ChatBackend& backend, const PromptTemplates& templates);

enum class JudgeMetric { BS, CE, LS };

std::string judge_metric_name(JudgeMetric metric);

struct JudgeScore {
  JudgeMetric metric = JudgeMetric::BS;
  int raw = 0;               // in [0, 10]
  double normalized = 0.0;   // raw * 10, the 0-100 reporting scale
  std::string judge_digest;
};

struct JudgeOutcome {
  std::vector<JudgeScore> scores;
  int missing = 0;  // responses whose score never parsed (after one retry)
};

JudgeOutcome judge_scores(std::span<const std::string> responses, ChatBackend& judge,
                          const std::string& judge_digest, JudgeMetric metric,
                          const PromptTemplates& templates);

// rows = items, columns = categories, cells = raters assigning that category.
struct RatingMatrix {
  std::vector<std::vector<int>> counts;
  int raters_per_item = 0;
};

// Chance-corrected multi-rater agreement; 1 = perfect, 0 = chance level.
double fleiss_kappa(const RatingMatrix& matrix);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

}  // namespace rldf
