#include <doctest.h>

#include <filesystem>

#include "rldf/debate.hpp"

using namespace rldf;
namespace fs = std::filesystem;

namespace {

Json load_appendix_fixture() {
  static Json fixture = Json::parse(read_file(fs::path(RLDF_FIXTURES_DIR) / "appendix_d.json"));
  return fixture;
}

std::vector<RoleSpec> fixture_roles() {
  std::vector<RoleSpec> roles;
  for (const auto& label : load_appendix_fixture().at("roles")) {
    roles.push_back({label.get<std::string>(), ""});
  }
  return roles;
}

DebateConfig fixture_config(int rounds = 1) {
  DebateConfig cfg = DebateConfig::defaults();
  cfg.roles = fixture_roles();
  cfg.rounds = rounds;
  cfg.topics = 1;
  cfg.seed = 11;
  return cfg;
}

ModeAssignment scripted_assignment(std::vector<std::string> script) {
  BackendSpec spec;
  spec.script = std::move(script);
  return ModeAssignment::make(spec, spec);
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("rldf_debate_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Records every prompt it sees; replies from a generated stream.
class CapturingBackend : public ChatBackend {
 public:
  std::vector<std::vector<ChatMessage>> requests;

 protected:
  std::string do_complete(const std::vector<ChatMessage>& messages) override {
    requests.push_back(messages);
    const std::string& user = messages.back().content;
    if (user.find("your verdict now") != std::string::npos) {
      return "SCORES: A=5; B=1; RANKS: B=1; A=2";
    }
    return "statement " + std::to_string(requests.size());
  }
};

}  // namespace

TEST_SUITE_BEGIN("debate");

TEST_CASE("parse_verdict handles the free-form referee paragraph") {
  auto fixture = load_appendix_fixture();
  auto roles = fixture_roles();
  std::string raw = fixture.at("statements")[3].get<std::string>();

  RefereeVerdict verdict = parse_verdict(raw, roles, 0, 10);
  CHECK(verdict.scores.at("60-year-old individual") == 3);
  CHECK(verdict.scores.at("40-year-old individual") == 2);
  CHECK(verdict.scores.at("20-year-old individual") == 1);
  CHECK(verdict.ranks.at("20-year-old individual") == 1);
  CHECK(verdict.ranks.at("40-year-old individual") == 2);
  CHECK(verdict.ranks.at("60-year-old individual") == 3);
  CHECK(verdict.raw_text == raw);
}

TEST_CASE("parse_verdict failure modes") {
  std::vector<RoleSpec> roles = {{"Agent One", ""}, {"Agent Two", ""}};
  CHECK_THROWS_AS(parse_verdict("no scores here", roles, 0, 10), VerdictParseFailure);
  CHECK_THROWS_AS(parse_verdict("", roles, 0, 10), VerdictParseFailure);

  // Out-of-range score.
  CHECK_THROWS_AS(parse_verdict("Agent1: Score: 11 Agent2: Score: 2 rank: 1. Agent 1 2. Agent 2",
                                roles, 0, 10),
                  VerdictParseFailure);

  // Ambiguous: the same role carries two distinct score candidates.
  CHECK_THROWS_AS(parse_verdict("Agent 1 score 3. Later, agent 1 score 4. Agent 2 score 1. "
                                "Ranking: 1. Agent 2 2. Agent 1",
                                roles, 0, 10),
                  VerdictParseFailure);

  // Missing ranking section.
  CHECK_THROWS_AS(parse_verdict("Agent 1: Score: 3. Agent 2: Score: 4.", roles, 0, 10),
                  VerdictParseFailure);
}

TEST_CASE("parse_verdict strict format") {
  std::vector<RoleSpec> roles = {{"Old", ""}, {"Young", ""}};
  auto verdict = parse_verdict("SCORES: Old=7; Young=2; RANKS: Young=1; Old=2", roles, 0, 10);
  CHECK(verdict.scores.at("Old") == 7);
  CHECK(verdict.ranks.at("Young") == 1);

  // Tied ranks are not a permutation.
  CHECK_THROWS_AS(parse_verdict("SCORES: Old=7; Young=2; RANKS: Young=1; Old=1", roles, 0, 10),
                  VerdictParseFailure);
  // Unknown label.
  CHECK_THROWS_AS(parse_verdict("SCORES: Old=7; Mid=2; RANKS: Old=1; Mid=2", roles, 0, 10),
                  VerdictParseFailure);
  // Strict markers present but malformed: no free-form fallback.
  CHECK_THROWS_AS(parse_verdict("SCORES: Old 7 RANKS: nope", roles, 0, 10), VerdictParseFailure);
}

TEST_CASE("run_debate replays the fixture round") {
  auto fixture = load_appendix_fixture();
  std::vector<std::string> script;
  for (const auto& s : fixture.at("statements")) script.push_back(s.get<std::string>());

  DebateConfig cfg = fixture_config();
  auto assignment = scripted_assignment(script);

  Topic topic{0, cfg.category, fixture.at("topic").get<std::string>()};
  DebateTranscript transcript = run_debate(topic, cfg, assignment, PromptTemplates::defaults(), 2048);

  REQUIRE(transcript.rounds.size() == 1);
  REQUIRE(transcript.rounds[0].statements.size() == 3);
  CHECK(transcript.rounds[0].verdict.scores.at("60-year-old individual") == 3);
  CHECK(transcript.rounds[0].verdict.scores.at("40-year-old individual") == 2);
  CHECK(transcript.rounds[0].verdict.scores.at("20-year-old individual") == 1);
  CHECK(transcript.rounds[0].verdict.ranks.at("20-year-old individual") == 1);
  CHECK(transcript.rounds[0].verdict.ranks.at("60-year-old individual") == 3);

  // K x (n + 1) backend calls for K rounds of n debaters plus one referee.
  CHECK(assignment.debater->calls() == 1 * (3 + 1));

  // Serialization round trip.
  auto round_tripped = DebateTranscript::from_json(transcript.to_json());
  CHECK(round_tripped.to_json().dump() == transcript.to_json().dump());
}

TEST_CASE("referee retry demands the strict format and recovers") {
  DebateConfig cfg = fixture_config();
  cfg.roles = {{"A", ""}, {"B", ""}};
  std::vector<std::string> script = {
      "statement a", "statement b",
      "gibberish with no usable verdict",
      "SCORES: A=6; B=1; RANKS: B=1; A=2",
  };
  auto assignment = scripted_assignment(script);
  Topic topic{0, cfg.category, "testing"};
  auto transcript = run_debate(topic, cfg, assignment, PromptTemplates::defaults(), 2048);
  CHECK(transcript.rounds[0].verdict.scores.at("A") == 6);
  CHECK(assignment.debater->calls() == 4);  // 2 debaters + referee + retry
}

TEST_CASE("referee failure after retry aborts the topic") {
  DebateConfig cfg = fixture_config();
  cfg.roles = {{"A", ""}, {"B", ""}};
  auto assignment = scripted_assignment({"s1", "s2", "junk", "more junk"});
  Topic topic{0, cfg.category, "testing"};
  CHECK_THROWS_AS(run_debate(topic, cfg, assignment, PromptTemplates::defaults(), 2048),
                  VerdictParseFailure);
}

TEST_CASE("context grows monotonically across rounds") {
  DebateConfig cfg = fixture_config(3);
  cfg.roles = {{"A", ""}, {"B", ""}};
  auto backend = std::make_shared<CapturingBackend>();
  ModeAssignment assignment;
  assignment.debater = backend;
  assignment.referee = backend;

  Topic topic{0, cfg.category, "testing"};
  run_debate(topic, cfg, assignment, PromptTemplates::defaults(), 4096);

  // Requests: per round, 2 debater prompts then 1 referee prompt.
  REQUIRE(backend->requests.size() == 9);
  const std::string& round2_first = backend->requests[3].back().content;
  CHECK(round2_first.find("statement 1") != std::string::npos);
  CHECK(round2_first.find("statement 2") != std::string::npos);
  const std::string& round3_first = backend->requests[6].back().content;
  for (int i = 1; i <= 5; ++i) {
    CHECK(round3_first.find("statement " + std::to_string(i)) != std::string::npos);
  }
  // Prior verdicts replay into later rounds.
  CHECK(round3_first.find("SCORES: A=5; B=1") != std::string::npos);
}

TEST_CASE("oldest rounds drop out of an overflowing context") {
  DebateConfig cfg = fixture_config(3);
  cfg.roles = {{"A", ""}, {"B", ""}};
  auto backend = std::make_shared<CapturingBackend>();
  ModeAssignment assignment;
  assignment.debater = backend;
  assignment.referee = backend;
  Topic topic{0, cfg.category, "testing"};
  run_debate(topic, cfg, assignment, PromptTemplates::defaults(), /*max_seq_len=*/30);
  const std::string& round3_first = backend->requests[6].back().content;
  CHECK(round3_first.find("statement 1") == std::string::npos);
  CHECK(round3_first.find("statement 4") != std::string::npos);
}

TEST_CASE("generate_topics dedupes case-insensitively") {
  BackendSpec spec;
  spec.script = {"Topic One", "topic one", "Topic Two", "Topic Three"};
  auto backend = make_backend(spec);
  auto topics = generate_topics(BiasCategory{"age"}, 3, *backend, PromptTemplates::defaults());
  REQUIRE(topics.size() == 3);
  CHECK(topics[0].text == "Topic One");
  CHECK(topics[1].text == "Topic Two");
  CHECK(topics[2].text == "Topic Three");
  CHECK(topics[0].id == 0);
  CHECK(topics[2].id == 2);
}

TEST_CASE("generate_topics reports a shortfall when the budget runs out") {
  BackendSpec spec;
  spec.script = {"same", "same", "same"};
  auto backend = make_backend(spec);
  CHECK_THROWS_AS(generate_topics(BiasCategory{"age"}, 3, *backend, PromptTemplates::defaults()),
                  TopicShortfall);
}

TEST_CASE("run_category counts, persists and resumes") {
  auto dir = temp_dir("category");
  DebateConfig cfg = fixture_config();
  cfg.roles = {{"A", ""}, {"B", ""}};
  auto make_script = [](int topics) {
    std::vector<std::string> script;
    for (int t = 0; t < topics; ++t) {
      script.push_back("s1 of " + std::to_string(t));
      script.push_back("s2 of " + std::to_string(t));
      script.push_back("SCORES: A=5; B=1; RANKS: B=1; A=2");
    }
    return script;
  };
  std::vector<Topic> topics = {{0, cfg.category, "t0"}, {1, cfg.category, "t1"},
                               {2, cfg.category, "t2"}};

  TranscriptStore store(dir / "transcripts.jsonl");
  auto summary = run_category(cfg, scripted_assignment(make_script(3)), PromptTemplates::defaults(),
                              topics, store, 2048);
  CHECK(summary.attempted == 3);
  CHECK(summary.succeeded == 3);
  CHECK(summary.failed == 0);
  CHECK(summary.statements == 6);
  CHECK(store.topic_ids() == std::set<std::int64_t>{0, 1, 2});

  // Resume: everything present, nothing re-run.
  auto resumed = run_category(cfg, scripted_assignment({}), PromptTemplates::defaults(), topics,
                              store, 2048);
  CHECK(resumed.attempted == 0);
  CHECK(resumed.skipped == 3);

  fs::remove_all(dir);
}

TEST_CASE("run_category aggregates per-topic failures") {
  auto dir = temp_dir("failures");
  DebateConfig cfg = fixture_config();
  cfg.roles = {{"A", ""}, {"B", ""}};
  // One topic whose referee never parses: statements ok, verdict junk twice.
  auto assignment = scripted_assignment({"s1", "s2", "junk", "junk again"});
  std::vector<Topic> topics = {{0, cfg.category, "t0"}};
  TranscriptStore store(dir / "transcripts.jsonl");
  auto summary =
      run_category(cfg, assignment, PromptTemplates::defaults(), topics, store, 2048);
  CHECK(summary.attempted == 1);
  CHECK(summary.succeeded == 0);
  CHECK(summary.failed == 1);
  REQUIRE(summary.failures.size() == 1);
  CHECK(summary.failures[0].first == 0);
  fs::remove_all(dir);
}

TEST_CASE("same seed and fresh generated mocks give identical transcripts") {
  DebateConfig cfg = fixture_config(2);
  cfg.roles = {{"A", ""}, {"B", ""}};
  BackendSpec spec;
  spec.generator_seed = 7;
  Topic topic{0, cfg.category, "determinism"};
  auto t1 = run_debate(topic, cfg, ModeAssignment::make(spec, spec), PromptTemplates::defaults(), 2048);
  auto t2 = run_debate(topic, cfg, ModeAssignment::make(spec, spec), PromptTemplates::defaults(), 2048);
  CHECK(t1.to_json().dump() == t2.to_json().dump());
}

TEST_SUITE_END();
