#include <doctest.h>

#include <filesystem>

#include "rldf/dataset.hpp"

using namespace rldf;
namespace fs = std::filesystem;

namespace {

Statement make_statement(std::int64_t topic, int round, const std::string& role,
                         const std::string& text) {
  Statement s;
  s.topic_id = topic;
  s.round_index = round;
  s.role_label = role;
  s.text = text;
  s.token_len = static_cast<int>(tokenize_words(text).size());
  return s;
}

// One-topic transcript from (role, text, score) tuples grouped into rounds.
DebateTranscript make_transcript(std::int64_t topic_id,
                                 const std::vector<std::vector<std::tuple<std::string, std::string, int>>>& rounds) {
  DebateTranscript t;
  t.config = DebateConfig::defaults();
  t.config.roles.clear();
  for (const auto& [role, text, score] : rounds.front()) {
    (void)text;
    (void)score;
    t.config.roles.push_back({role, ""});
  }
  t.config_digest = t.config.digest();
  t.topic = {topic_id, t.config.category, "topic " + std::to_string(topic_id)};
  int round_index = 0;
  for (const auto& round_spec : rounds) {
    DebateRound round;
    ++round_index;
    round.verdict.topic_id = topic_id;
    round.verdict.round_index = round_index;
    int rank = 1;
    for (const auto& [role, text, score] : round_spec) {
      round.statements.push_back(make_statement(topic_id, round_index, role, text));
      round.verdict.scores[role] = score;
      round.verdict.ranks[role] = rank++;
    }
    round.verdict.raw_text = "fixture";
    t.rounds.push_back(std::move(round));
  }
  return t;
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("rldf_dataset_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE_BEGIN("dataset");

TEST_CASE("partition boundary behaviour at the threshold") {
  std::vector<std::pair<Statement, int>> statements;
  for (int score = 0; score <= 10; ++score) {
    statements.emplace_back(make_statement(0, 1, "r", "text " + std::to_string(score)), score);
  }
  auto parts = partition(statements, 3);
  REQUIRE(parts.high.size() == 7);  // 4..10
  REQUIRE(parts.low.size() == 4);   // 0..3
  for (const auto& s : parts.high) CHECK(s.score > 3);
  for (const auto& s : parts.low) CHECK(s.score <= 3);
  CHECK(parts.high.size() + parts.low.size() == statements.size());
}

TEST_CASE("partition is total and exclusive on random scores") {
  Rng rng(3);
  std::vector<std::pair<Statement, int>> statements;
  for (int i = 0; i < 200; ++i) {
    statements.emplace_back(make_statement(0, 1, "r", "t" + std::to_string(i)),
                            static_cast<int>(rng.below(11)));
  }
  for (int threshold = 0; threshold <= 9; ++threshold) {
    auto parts = partition(statements, threshold);
    CHECK(parts.high.size() + parts.low.size() == statements.size());
    for (const auto& s : parts.high) CHECK((s.label == BiasLabel::HighBias && s.score > threshold));
    for (const auto& s : parts.low) CHECK((s.label == BiasLabel::LowBias && s.score <= threshold));
  }
}

TEST_CASE("build_pairs crosses low and high within a topic") {
  auto t = make_transcript(7, {{{"A", "low text a", 1}, {"B", "high text b", 5}, {"C", "high text c", 9}}});
  auto build = build_pairs({t}, 3, 8, "Below is a discussion about {topic}.");
  REQUIRE(build.pairs.size() == 2);
  CHECK(build.pairs[0].chosen.statement.text == "low text a");
  CHECK(build.pairs[0].rejected.statement.text == "high text b");
  CHECK(build.pairs[1].rejected.statement.text == "high text c");
  CHECK(build.pairs[0].prompt == "Below is a discussion about topic 7.");
  CHECK(build.per_topic_yield.at(7) == 2);
  CHECK(build.sft.size() == 1);
  CHECK(build.sft[0].completion == "low text a");
}

TEST_CASE("all-low topics contribute zero pairs but full sft data") {
  // The fixture round's scores (3, 2, 1) all fall at or below the threshold.
  auto t = make_transcript(0, {{{"A", "a", 3}, {"B", "b", 2}, {"C", "c", 1}}});
  auto build = build_pairs({t}, 3, 8, "{topic}");
  CHECK(build.pairs.empty());
  REQUIRE(build.empty_side_topics.size() == 1);
  CHECK(build.empty_side_topics[0] == 0);
  CHECK(build.sft.size() == 3);
}

TEST_CASE("pair cap bounds each topic and spreads across rounds") {
  auto t = make_transcript(1, {
      {{"A", "low r1", 0}, {"B", "high r1", 10}},
      {{"A", "low r2", 1}, {"B", "high r2", 9}},
      {{"A", "low r3", 2}, {"B", "high r3", 8}},
      {{"A", "low r4", 3}, {"B", "high r4", 7}},
  });
  auto capped = build_pairs({t}, 3, 3, "{topic}");
  REQUIRE(capped.pairs.size() == 3);
  CHECK(capped.per_topic_yield.at(1) == 3);
  // Diagonal order touches round 2 before exhausting round 1 pairings.
  CHECK(capped.pairs[1].chosen.statement.text == "low r1");
  CHECK(capped.pairs[1].rejected.statement.text == "high r2");
  CHECK(capped.pairs[2].chosen.statement.text == "low r2");

  auto uncapped = build_pairs({t}, 3, 100, "{topic}");
  CHECK(uncapped.pairs.size() == 16);
}

TEST_CASE("every pair satisfies the threshold contract") {
  Rng rng(17);
  std::vector<DebateTranscript> transcripts;
  for (int topic = 0; topic < 5; ++topic) {
    std::vector<std::vector<std::tuple<std::string, std::string, int>>> rounds;
    for (int round = 0; round < 3; ++round) {
      rounds.push_back({{"A", "a" + std::to_string(topic) + std::to_string(round),
                         static_cast<int>(rng.below(11))},
                        {"B", "b" + std::to_string(topic) + std::to_string(round),
                         static_cast<int>(rng.below(11))}});
    }
    transcripts.push_back(make_transcript(topic, rounds));
  }
  auto build = build_pairs(transcripts, 3, 8, "{topic}");
  for (const auto& p : build.pairs) {
    CHECK(p.chosen.score <= 3);
    CHECK(p.rejected.score > 3);
    CHECK(p.chosen.label == BiasLabel::LowBias);
    CHECK(p.rejected.label == BiasLabel::HighBias);
  }
}

TEST_CASE("build_pairs is deterministic for shuffled store order") {
  auto t0 = make_transcript(0, {{{"A", "x", 1}, {"B", "y", 8}}});
  auto t1 = make_transcript(1, {{{"A", "p", 2}, {"B", "q", 9}}});
  auto forward = build_pairs({t0, t1}, 3, 8, "{topic}");
  auto reversed = build_pairs({t1, t0}, 3, 8, "{topic}");
  REQUIRE(forward.pairs.size() == reversed.pairs.size());
  for (std::size_t i = 0; i < forward.pairs.size(); ++i) {
    CHECK(forward.pairs[i].topic_id == reversed.pairs[i].topic_id);
    CHECK(forward.pairs[i].chosen.statement.text == reversed.pairs[i].chosen.statement.text);
  }
}

TEST_CASE("enforce_budget") {
  auto t = make_transcript(0, {{{"A", "low", 0}, {"B", "high", 10}}});
  auto build = build_pairs({t}, 3, 8, "{topic}");
  REQUIRE(build.pairs.size() == 1);
  CHECK(enforce_budget(build, 1).ok);
  auto short_report = enforce_budget(build, 2);
  CHECK_FALSE(short_report.ok);
  CHECK(short_report.deficit == 1);

  PairBuild empty;
  auto empty_report = enforce_budget(empty, 5000);
  CHECK_FALSE(empty_report.ok);
  CHECK(empty_report.deficit == 5000);
}

TEST_CASE("export writes jsonl, manifest and is byte-identical on re-export") {
  auto dir = temp_dir("export");
  auto t = make_transcript(3, {{{"A", "calm words", 2}, {"B", "loaded words", 7}},
                               {{"A", "more calm", 1}, {"B", "more loaded", 9}}});
  auto build = build_pairs({t}, 3, 8, "{topic}");

  Json manifest = export_dataset(build, "age", "digest123", 2, dir);
  CHECK(manifest["pair_count"].get<std::size_t>() == build.pairs.size());
  CHECK(manifest["category"] == "age");
  CHECK(manifest["config_digest"] == "digest123");
  CHECK(manifest["budget"]["ok"].get<bool>());

  auto pairs_bytes = read_file(dir / "pairs.jsonl");
  auto sft_bytes = read_file(dir / "sft.jsonl");
  auto manifest_bytes = read_file(dir / "manifest.json");

  Json manifest2 = export_dataset(build, "age", "digest123", 2, dir);
  CHECK(read_file(dir / "pairs.jsonl") == pairs_bytes);
  CHECK(read_file(dir / "sft.jsonl") == sft_bytes);
  CHECK(read_file(dir / "manifest.json") == manifest_bytes);

  // Loaders round trip.
  auto loaded_pairs = load_pairs(dir / "pairs.jsonl");
  REQUIRE(loaded_pairs.size() == build.pairs.size());
  CHECK(loaded_pairs[0].prompt == build.pairs[0].prompt);
  CHECK(loaded_pairs[0].chosen.score == build.pairs[0].chosen.score);
  auto loaded_sft = load_sft(dir / "sft.jsonl");
  CHECK(loaded_sft.size() == build.sft.size());

  fs::remove_all(dir);
}

TEST_CASE("export of empty inputs still writes a manifest") {
  auto dir = temp_dir("empty");
  PairBuild build;
  Json manifest = export_dataset(build, "age", "d", 5000, dir);
  CHECK(read_file(dir / "pairs.jsonl").empty());
  CHECK(read_file(dir / "sft.jsonl").empty());
  CHECK(manifest["pair_count"].get<int>() == 0);
  CHECK_FALSE(manifest["budget"]["ok"].get<bool>());
  fs::remove_all(dir);
}

TEST_SUITE_END();
