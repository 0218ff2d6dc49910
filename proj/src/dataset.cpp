#include "rldf/dataset.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace rldf {

PartitionResult partition(const std::vector<std::pair<Statement, int>>& statements, int threshold) {
  PartitionResult result;
  for (const auto& [statement, score] : statements) {
    ScoredStatement scored;
    scored.statement = statement;
    scored.score = score;
    scored.label = score > threshold ? BiasLabel::HighBias : BiasLabel::LowBias;
    if (scored.label == BiasLabel::HighBias) {
      result.high.push_back(std::move(scored));
    } else {
      result.low.push_back(std::move(scored));
    }
  }
  return result;
}

std::vector<std::pair<Statement, int>> collect_scored(const DebateTranscript& transcript) {
  std::vector<std::pair<Statement, int>> out;
  for (const auto& round : transcript.rounds) {
    for (const auto& s : round.statements) {
      out.emplace_back(s, round.verdict.scores.at(s.role_label));
    }
  }
  return out;
}

PairBuild build_pairs(std::vector<DebateTranscript> transcripts, int threshold, int pair_cap,
                      const std::string& pair_prompt_template) {
  std::stable_sort(transcripts.begin(), transcripts.end(),
                   [](const DebateTranscript& a, const DebateTranscript& b) {
                     return a.topic.id < b.topic.id;
                   });

  PairBuild build;
  std::set<std::string> seen_completions;
  for (const auto& transcript : transcripts) {
    auto parts = partition(collect_scored(transcript), threshold);
    std::string prompt = replace_all(pair_prompt_template, "{topic}", transcript.topic.text);

    for (const auto& low : parts.low) {
      if (seen_completions.insert(low.statement.text).second) {
        build.sft.push_back({prompt, low.statement.text, low.score});
      }
    }

    if (parts.low.empty() || parts.high.empty()) {
      build.per_topic_yield[transcript.topic.id] = 0;
      build.empty_side_topics.push_back(transcript.topic.id);
      continue;
    }

    // Diagonal traversal of the low x high grid: both sides are in
    // round-major order, so early picks rotate across rounds instead of
    // exhausting one round's statements first.
    int yielded = 0;
    std::size_t nl = parts.low.size();
    std::size_t nh = parts.high.size();
    for (std::size_t diag = 0; diag + 2 <= nl + nh && yielded < pair_cap; ++diag) {
      for (std::size_t li = 0; li <= diag && yielded < pair_cap; ++li) {
        std::size_t hi = diag - li;
        if (li >= nl || hi >= nh) continue;
        PreferencePair pair;
        pair.topic_id = transcript.topic.id;
        pair.prompt = prompt;
        pair.chosen = parts.low[li];
        pair.rejected = parts.high[hi];
        build.pairs.push_back(std::move(pair));
        ++yielded;
      }
    }
    build.per_topic_yield[transcript.topic.id] = yielded;
  }
  return build;
}

std::string BudgetReport::to_string() const {
  std::ostringstream ss;
  if (ok) {
    ss << "budget ok: " << total << " pairs (minimum " << min_pairs << ")";
  } else {
    ss << "budget shortfall: " << total << " pairs of " << min_pairs << " required (deficit "
       << deficit << ")\nper-topic yield:";
    for (const auto& [topic, yield] : per_topic_yield) {
      ss << "\n  topic " << topic << ": " << yield;
    }
  }
  return ss.str();
}

BudgetReport enforce_budget(const PairBuild& build, int min_pairs) {
  BudgetReport report;
  report.total = static_cast<int>(build.pairs.size());
  report.min_pairs = min_pairs;
  report.ok = report.total >= min_pairs;
  report.deficit = report.ok ? 0 : min_pairs - report.total;
  report.per_topic_yield = build.per_topic_yield;
  return report;
}

namespace {

Json pair_to_json(const PreferencePair& p) {
  return Json{{"topic_id", p.topic_id},
              {"prompt", p.prompt},
              {"chosen", Json{{"text", p.chosen.statement.text}, {"score", p.chosen.score}}},
              {"rejected", Json{{"text", p.rejected.statement.text}, {"score", p.rejected.score}}}};
}

}  // namespace

Json export_dataset(const PairBuild& build, const std::string& category,
                    const std::string& config_digest, int min_pairs,
                    const std::filesystem::path& out_dir) {
  std::string pairs_body;
  for (const auto& p : build.pairs) pairs_body += pair_to_json(p).dump() + "\n";

  std::string sft_body;
  for (const auto& e : build.sft) {
    sft_body +=
        Json{{"prompt", e.prompt}, {"completion", e.completion}, {"score", e.score}}.dump() + "\n";
  }

  auto budget = enforce_budget(build, min_pairs);
  Json yields = Json::array();
  for (const auto& [topic, yield] : build.per_topic_yield) {
    yields.push_back(Json{{"topic_id", topic}, {"pairs", yield}});
  }
  Json manifest{{"format_version", 1},
                {"category", category},
                {"config_digest", config_digest},
                {"pair_count", build.pairs.size()},
                {"sft_count", build.sft.size()},
                {"budget", Json{{"min_pairs", min_pairs}, {"ok", budget.ok}, {"deficit", budget.deficit}}},
                {"empty_side_topics", build.empty_side_topics},
                {"per_topic_yield", yields},
                {"files", Json{{"pairs_jsonl_sha256", sha256_hex(pairs_body)},
                               {"sft_jsonl_sha256", sha256_hex(sft_body)}}}};

  write_file_atomic(out_dir / "pairs.jsonl", pairs_body);
  write_file_atomic(out_dir / "sft.jsonl", sft_body);
  write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

std::vector<PreferencePair> load_pairs(const std::filesystem::path& pairs_jsonl) {
  std::vector<PreferencePair> pairs;
  auto lines = read_lines(pairs_jsonl);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    try {
      Json j = Json::parse(lines[i]);
      PreferencePair p;
      p.topic_id = j.at("topic_id").get<std::int64_t>();
      p.prompt = j.at("prompt").get<std::string>();
      p.chosen.statement.text = j.at("chosen").at("text").get<std::string>();
      p.chosen.score = j.at("chosen").at("score").get<int>();
      p.chosen.label = BiasLabel::LowBias;
      p.rejected.statement.text = j.at("rejected").at("text").get<std::string>();
      p.rejected.score = j.at("rejected").at("score").get<int>();
      p.rejected.label = BiasLabel::HighBias;
      pairs.push_back(std::move(p));
    } catch (const Json::exception& e) {
      throw SchemaViolation(pairs_jsonl.string() + " line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return pairs;
}

std::vector<SftExample> load_sft(const std::filesystem::path& sft_jsonl) {
  std::vector<SftExample> examples;
  auto lines = read_lines(sft_jsonl);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    try {
      Json j = Json::parse(lines[i]);
      examples.push_back({j.at("prompt").get<std::string>(), j.at("completion").get<std::string>(),
                          j.value("score", 0)});
    } catch (const Json::exception& e) {
      throw SchemaViolation(sft_jsonl.string() + " line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return examples;
}

}  // namespace rldf
