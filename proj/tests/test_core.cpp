#include <doctest.h>

#include "rldf/core.hpp"

using namespace rldf;

TEST_SUITE_BEGIN("core");

TEST_CASE("default config passes validation") {
  DebateConfig debate = DebateConfig::defaults();
  PipelineConfig pipeline;
  pipeline.beta = 0.1;
  CHECK(debate.roles.size() == 3);
  CHECK(debate.rounds == 5);
  CHECK(debate.topics == 2000);
  CHECK(pipeline.rm_lr == doctest::Approx(3e-5));
  CHECK(pipeline.rm_batch == 32);
  CHECK(pipeline.max_seq_len == 2048);
  CHECK(pipeline.ppo_lr == doctest::Approx(5e-6));
  CHECK(pipeline.ppo_batch == 4);
  CHECK(pipeline.min_pairs == 5000);
  CHECK(validate_config(debate, pipeline).ok());
}

TEST_CASE("validation flags range violations with field paths") {
  DebateConfig debate = DebateConfig::defaults();
  PipelineConfig pipeline;
  pipeline.beta = 0.1;
  debate.rounds = 0;
  auto report = validate_config(debate, pipeline);
  REQUIRE_FALSE(report.ok());
  bool found = false;
  for (const auto& v : report.violations) {
    if (v.field == "debate.rounds" && v.kind == "RangeViolation") found = true;
  }
  CHECK(found);
}

TEST_CASE("validation flags duplicate role labels") {
  DebateConfig debate = DebateConfig::defaults();
  PipelineConfig pipeline;
  pipeline.beta = 0.1;
  debate.roles = {{"20-year-old", "a"}, {"20-year-old", "b"}};
  auto report = validate_config(debate, pipeline);
  REQUIRE_FALSE(report.ok());
  CHECK(report.violations.front().kind == "DuplicateRole");
}

TEST_CASE("beta is required") {
  DebateConfig debate = DebateConfig::defaults();
  PipelineConfig pipeline;  // beta unset
  auto report = validate_config(debate, pipeline);
  REQUIRE_FALSE(report.ok());
  bool found = false;
  for (const auto& v : report.violations) {
    if (v.field == "pipeline.beta") found = true;
  }
  CHECK(found);
}

TEST_CASE("validate_config is pure and idempotent") {
  DebateConfig debate = DebateConfig::defaults();
  debate.rounds = -1;
  PipelineConfig pipeline;
  pipeline.beta = 0.5;
  auto a = validate_config(debate, pipeline);
  auto b = validate_config(debate, pipeline);
  CHECK(a.violations.size() == b.violations.size());
  CHECK(debate.rounds == -1);  // untouched
}

TEST_CASE("truncate_right") {
  TokenSequence seq;
  for (int i = 0; i < 10; ++i) seq.tokens.push_back(i);
  CHECK(truncate_right(seq, 2048).tokens == seq.tokens);

  TokenSequence longer;
  for (int i = 0; i < 3000; ++i) longer.tokens.push_back(i % 97);
  auto cut = truncate_right(longer, 2048);
  REQUIRE(cut.size() == 2048);
  for (int i = 0; i < 2048; ++i) CHECK(cut.tokens[i] == longer.tokens[i]);

  TokenSequence empty;
  CHECK(truncate_right(empty, 4).empty());
}

TEST_CASE("truncate_right is idempotent") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    TokenSequence seq;
    auto len = rng.below(50);
    for (std::uint64_t i = 0; i < len; ++i) seq.tokens.push_back(static_cast<std::int32_t>(rng.below(100)));
    std::size_t cap = 1 + rng.below(40);
    auto once = truncate_right(seq, cap);
    auto twice = truncate_right(once, cap);
    CHECK(once.tokens == twice.tokens);
    CHECK(once.size() == std::min(seq.size(), cap));
  }
}

TEST_CASE("tokenizer splits words and punctuation") {
  auto tokens = tokenize_words("Hello, World! It's 20-year-old.");
  std::vector<std::string> expected = {"hello", ",", "world", "!", "it's", "20-year-old", "."};
  CHECK(tokens == expected);
  CHECK(tokenize_words("").empty());
  CHECK(tokenize_words("   \n\t ").empty());
}

TEST_CASE("vocabulary encode/decode round trip") {
  Vocabulary vocab = Vocabulary::build({"the old gardener", "the young gardener"});
  CHECK(vocab.size() > 2);
  auto seq = vocab.encode("the young gardener");
  CHECK(vocab.decode(seq) == "the young gardener");
  // Out-of-vocabulary words map to the unknown sentinel.
  auto unk = vocab.encode("zzz");
  REQUIRE(unk.size() == 1);
  CHECK(unk.tokens[0] == Vocabulary::kUnkId);
}

TEST_CASE("core types serialize round trip") {
  DebateConfig debate = DebateConfig::defaults();
  debate.category.name = "beauty";
  debate.seed = 42;
  CHECK(DebateConfig::from_json(debate.to_json()).to_json().dump() == debate.to_json().dump());

  PipelineConfig pipeline;
  pipeline.beta = 0.25;
  pipeline.min_pairs = 12;
  CHECK(PipelineConfig::from_json(pipeline.to_json()).to_json().dump() ==
        pipeline.to_json().dump());

  Vocabulary vocab = Vocabulary::build({"alpha beta gamma"});
  CHECK(Vocabulary::from_json(vocab.to_json()).to_json().dump() == vocab.to_json().dump());
}

TEST_CASE("bias categories") {
  CHECK(BiasCategory::builtins().size() == 5);
  CHECK(BiasCategory{"age"}.is_builtin());
  CHECK(BiasCategory{"profession"}.is_builtin());
  CHECK_FALSE(BiasCategory{"dialect"}.is_builtin());
}

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  // Two-block message (56 bytes forces the padding split).
  CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("rng streams are deterministic and distinct") {
  Rng a(derive_stream(99, "rm"));
  Rng b(derive_stream(99, "rm"));
  Rng c(derive_stream(99, "sft"));
  CHECK(a.next_u64() == b.next_u64());
  CHECK(derive_stream(99, "rm") != derive_stream(99, "sft"));
  CHECK(derive_stream(99, "rm", 0) != derive_stream(99, "rm", 1));
  for (int i = 0; i < 100; ++i) {
    double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("stable softplus anchors") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(neg_log_sigmoid(-1.0) == doctest::Approx(1.3132616875182228).epsilon(1e-12));
  CHECK(neg_log_sigmoid(1000.0) == doctest::Approx(0.0));
  CHECK(std::isfinite(neg_log_sigmoid(-1000.0)));
}

TEST_SUITE_END();
