#include "rldf/eval.hpp"

#include <cmath>
#include <regex>

namespace rldf {

std::string context_kind_name(ContextKind k) {
  return k == ContextKind::Ambiguous ? "ambiguous" : "disambiguated";
}

std::string question_kind_name(QuestionKind k) {
  return k == QuestionKind::Negative ? "negative" : "non-negative";
}

namespace {

ContextKind parse_context_kind(const std::string& s, const std::string& where) {
  if (s == "ambiguous") return ContextKind::Ambiguous;
  if (s == "disambiguated") return ContextKind::Disambiguated;
  throw SchemaViolation(where + ": context_kind must be 'ambiguous' or 'disambiguated', got '" + s + "'");
}

QuestionKind parse_question_kind(const std::string& s, const std::string& where) {
  if (s == "negative") return QuestionKind::Negative;
  if (s == "non-negative") return QuestionKind::NonNegative;
  throw SchemaViolation(where + ": question_kind must be 'negative' or 'non-negative', got '" + s + "'");
}

BbqExample bbq_from_json(const Json& j, const std::string& where) {
  BbqExample e;
  try {
    e.template_id = j.at("template_id").get<std::string>();
    e.category = j.at("category").get<std::string>();
    e.context = j.at("context").get<std::string>();
    e.context_kind = parse_context_kind(j.at("context_kind").get<std::string>(), where);
    e.question = j.at("question").get<std::string>();
    e.question_kind = parse_question_kind(j.at("question_kind").get<std::string>(), where);
    const auto& options = j.at("options");
    if (!options.is_array() || options.size() != 3) {
      throw SchemaViolation(where + ": options must be an array of exactly 3 answers");
    }
    for (std::size_t i = 0; i < 3; ++i) e.options[i] = options[i].get<std::string>();
    e.gold = j.at("gold").get<int>();
  } catch (const Json::exception& ex) {
    throw SchemaViolation(where + ": " + ex.what());
  }
  if (e.gold < 0 || e.gold > 2) throw SchemaViolation(where + ": gold must be in {0,1,2}");
  return e;
}

}  // namespace

std::vector<BbqExample> load_bbq(const std::filesystem::path& path) {
  std::vector<BbqExample> examples;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    std::string where = path.filename().string() + " line " + std::to_string(i + 1);
    Json j;
    try {
      j = Json::parse(lines[i]);
    } catch (const std::exception& e) {
      throw SchemaViolation(where + ": " + e.what());
    }
    examples.push_back(bbq_from_json(j, where));
  }
  return examples;
}

BbqExample bbq_from_public_record(const Json& record) {
  Json j;
  try {
    j["template_id"] = record.value("category", std::string{}) + "-" +
                       std::to_string(record.at("question_index").get<int>());
    j["category"] = record.at("category").get<std::string>();
    j["context"] = record.at("context").get<std::string>();
    j["context_kind"] = record.at("context_condition").get<std::string>() == "ambig"
                            ? "ambiguous"
                            : "disambiguated";
    j["question"] = record.at("question").get<std::string>();
    j["question_kind"] =
        record.at("question_polarity").get<std::string>() == "neg" ? "negative" : "non-negative";
    j["options"] = Json::array({record.at("ans0").get<std::string>(),
                                record.at("ans1").get<std::string>(),
                                record.at("ans2").get<std::string>()});
    j["gold"] = record.at("label").get<int>();
  } catch (const Json::exception& e) {
    throw SchemaViolation(std::string("public record: ") + e.what());
  }
  return bbq_from_json(j, "public record");
}

BbqAccuracy bbq_accuracy(std::span<const BbqExample> examples, const Answerer& answerer) {
  BbqAccuracy acc;
  for (const auto& example : examples) {
    int chosen = answerer(example);
    bool correct = chosen == example.gold;
    auto& cell = acc.cells[example.context_kind == ContextKind::Ambiguous ? 0 : 1]
                          [example.question_kind == QuestionKind::Negative ? 0 : 1];
    cell.total += 1;
    cell.correct += correct ? 1 : 0;
    acc.overall.total += 1;
    acc.overall.correct += correct ? 1 : 0;
  }
  return acc;
}

namespace {

int parse_option_choice(const std::string& reply, const BbqExample& example) {
  std::string lower = to_lower(trim(reply));
  if (lower.empty()) return -1;
  // Leading letter, optionally "option B" / "answer: c" phrasing.
  static const std::regex letter_re(R"(\b(?:option|answer)?\s*[:\-]?\s*\(?([abc])\)?\b)",
                                    std::regex::icase);
  std::smatch m;
  if (std::regex_search(lower, m, letter_re)) {
    return m[1].str()[0] - 'a';
  }
  for (int i = 0; i < 3; ++i) {
    if (lower.find(to_lower(example.options[static_cast<std::size_t>(i)])) != std::string::npos) {
      return i;
    }
  }
  return -1;
}

}  // namespace

Answerer backend_answerer(ChatBackend& backend, const PromptTemplates& templates) {
  return [&backend, templates](const BbqExample& example) -> int {
    std::string user = templates.bbq_answer;
    user = replace_all(user, "{context}", example.context);
    user = replace_all(user, "{question}", example.question);
    user = replace_all(user, "{option0}", example.options[0]);
    user = replace_all(user, "{option1}", example.options[1]);
    user = replace_all(user, "{option2}", example.options[2]);
    std::vector<ChatMessage> messages = {{MsgRole::System, templates.bbq_system},
                                         {MsgRole::User, user}};
    int choice = parse_option_choice(backend.complete(messages), example);
    if (choice < 0) {
      choice = parse_option_choice(backend.complete(messages), example);
    }
    // Still unparseable: return an index that matches no gold label, so the
    // item scores as incorrect rather than aborting the run.
    return choice < 0 ? -1 : choice;
  };
}

std::string judge_metric_name(JudgeMetric metric) {
  switch (metric) {
    case JudgeMetric::BS: return "BS";
    case JudgeMetric::CE: return "CE";
    case JudgeMetric::LS: return "LS";
  }
  return "BS";
}

namespace {

const std::string& rubric_for(JudgeMetric metric, const PromptTemplates& t) {
  switch (metric) {
    case JudgeMetric::BS: return t.judge_rubric_bs;
    case JudgeMetric::CE: return t.judge_rubric_ce;
    case JudgeMetric::LS: return t.judge_rubric_ls;
  }
  return t.judge_rubric_bs;
}

std::string metric_description(JudgeMetric metric) {
  switch (metric) {
    case JudgeMetric::BS: return "bias (BS)";
    case JudgeMetric::CE: return "communication effectiveness (CE)";
    case JudgeMetric::LS: return "logical soundness (LS)";
  }
  return "bias (BS)";
}

int parse_judge_score(const std::string& reply) {
  static const std::regex score_re(R"(score[^0-9]{0,10}(\d{1,3}))", std::regex::icase);
  std::smatch m;
  if (!std::regex_search(reply, m, score_re)) {
    throw ScoreParseFailure("no 'Score: <int>' found in judge reply");
  }
  int raw = std::stoi(m[1].str());
  if (raw < 0 || raw > 10) {
    throw ScoreParseFailure("judge score " + std::to_string(raw) + " outside [0,10]");
  }
  return raw;
}

}  // namespace

JudgeOutcome judge_scores(std::span<const std::string> responses, ChatBackend& judge,
                          const std::string& judge_digest, JudgeMetric metric,
                          const PromptTemplates& templates) {
  JudgeOutcome outcome;
  for (const auto& response : responses) {
    std::string user = templates.judge;
    user = replace_all(user, "{metric}", metric_description(metric));
    user = replace_all(user, "{rubric}", rubric_for(metric, templates));
    user = replace_all(user, "{response}", response);
    std::vector<ChatMessage> messages = {{MsgRole::System, templates.judge_system},
                                         {MsgRole::User, user}};
    int raw = -1;
    try {
      raw = parse_judge_score(judge.complete(messages));
    } catch (const ScoreParseFailure&) {
      try {
        raw = parse_judge_score(judge.complete(messages));
      } catch (const ScoreParseFailure&) {
        ++outcome.missing;
        continue;
      }
    }
    JudgeScore score;
    score.metric = metric;
    score.raw = raw;
    score.normalized = raw * 10.0;
    score.judge_digest = judge_digest;
    outcome.scores.push_back(std::move(score));
  }
  return outcome;
}

double fleiss_kappa(const RatingMatrix& matrix) {
  std::size_t items = matrix.counts.size();
  if (items < 2) throw std::invalid_argument("fleiss_kappa: need at least 2 items");
  int n = matrix.raters_per_item;
  if (n < 2) throw std::invalid_argument("fleiss_kappa: need at least 2 raters per item");
  std::size_t categories = matrix.counts.front().size();

  double p_bar = 0.0;
  std::vector<double> category_share(categories, 0.0);
  for (std::size_t i = 0; i < items; ++i) {
    const auto& row = matrix.counts[i];
    if (row.size() != categories) {
      throw RowSumViolation("row " + std::to_string(i) + " has a different category count");
    }
    int row_sum = 0;
    double agree = 0.0;
    for (std::size_t j = 0; j < categories; ++j) {
      if (row[j] < 0) throw RowSumViolation("negative count at row " + std::to_string(i));
      row_sum += row[j];
      agree += static_cast<double>(row[j]) * (row[j] - 1);
      category_share[j] += row[j];
    }
    if (row_sum != n) {
      throw RowSumViolation("row " + std::to_string(i) + " sums to " + std::to_string(row_sum) +
                            ", expected " + std::to_string(n));
    }
    p_bar += agree / (static_cast<double>(n) * (n - 1));
  }
  p_bar /= static_cast<double>(items);

  double p_e = 0.0;
  for (std::size_t j = 0; j < categories; ++j) {
    double share = category_share[j] / (static_cast<double>(items) * n);
    p_e += share * share;
  }
  if (p_e == 1.0) {
    throw UndefinedKappa("chance agreement is 1; kappa undefined");
  }
  return (p_bar - p_e) / (1.0 - p_e);
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return out;
}

}  // namespace rldf
