#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "rldf/backend.hpp"

using namespace rldf;
namespace fs = std::filesystem;

namespace {

std::vector<ChatMessage> simple_messages(const std::string& user = "hi") {
  return {{MsgRole::System, "You are a helpful assistant."}, {MsgRole::User, user}};
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("rldf_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE_BEGIN("backend");

TEST_CASE("scripted mock pops replies in order") {
  MockBackend mock({"hello", "world"});
  CHECK(mock.complete(simple_messages()) == "hello");
  CHECK(mock.complete(simple_messages()) == "world");
  CHECK(mock.calls() == 2);
  CHECK_THROWS_AS(mock.complete(simple_messages()), ScriptExhausted);
}

TEST_CASE("messages must start with a system message") {
  MockBackend mock({"x"});
  CHECK_THROWS_AS(mock.complete({}), std::invalid_argument);
  CHECK_THROWS_AS(mock.complete({{MsgRole::User, "hi"}}), std::invalid_argument);
}

TEST_CASE("empty scripted reply surfaces as MalformedResponse") {
  MockBackend mock({""});
  CHECK_THROWS_AS(mock.complete(simple_messages()), MalformedResponse);
}

TEST_CASE("spec validation") {
  BackendSpec http;
  http.kind = BackendSpec::Kind::Http;
  CHECK_FALSE(validate_spec(http).ok());  // missing endpoint_url
  http.endpoint_url = "http://localhost:1/v1/chat/completions";
  http.model_name = "m";
  CHECK(validate_spec(http).ok());

  BackendSpec mock;
  mock.kind = BackendSpec::Kind::Mock;
  CHECK_FALSE(validate_spec(mock).ok());  // no script, no generator
  mock.generator_seed = 7;
  CHECK(validate_spec(mock).ok());
}

TEST_CASE("request digest is stable and sensitive") {
  auto msgs = simple_messages("q");
  CHECK(request_digest("m", 0.0, msgs) == request_digest("m", 0.0, msgs));
  CHECK(request_digest("m", 0.0, msgs) != request_digest("m", 1.0, msgs));
  CHECK(request_digest("m", 0.0, msgs) != request_digest("other", 0.0, msgs));
  auto msgs2 = simple_messages("q2");
  CHECK(request_digest("m", 0.0, msgs) != request_digest("m", 0.0, msgs2));
}

TEST_CASE("record then replay round trips") {
  auto dir = temp_dir("cassette");
  auto cassette = dir / "c.jsonl";
  BackendSpec spec;
  spec.script = {"first", "second"};

  {
    auto recording = make_backend(spec, {CassetteOptions::Mode::Record, cassette});
    CHECK(recording->complete(simple_messages("a")) == "first");
    CHECK(recording->complete(simple_messages("a")) == "second");
  }
  {
    auto replay = make_backend(spec, {CassetteOptions::Mode::Replay, cassette});
    // Identical requests replay in recorded order.
    CHECK(replay->complete(simple_messages("a")) == "first");
    CHECK(replay->complete(simple_messages("a")) == "second");
    CHECK_THROWS_AS(replay->complete(simple_messages("a")), CassetteMiss);
    CHECK_THROWS_AS(replay->complete(simple_messages("unseen")), CassetteMiss);
  }
  fs::remove_all(dir);
}

TEST_CASE("corrupt cassette is rejected") {
  auto dir = temp_dir("corrupt");
  auto cassette = dir / "c.jsonl";
  write_file_atomic(cassette, "not json\n");
  BackendSpec spec;
  spec.script = {"x"};
  CHECK_THROWS_AS(make_backend(spec, {CassetteOptions::Mode::Replay, cassette}), CassetteCorrupt);
  write_file_atomic(cassette, "{\"digest\": \"abc\"}\n");
  CHECK_THROWS_AS(make_backend(spec, {CassetteOptions::Mode::Replay, cassette}), CassetteCorrupt);
  fs::remove_all(dir);
}

TEST_CASE("generated mock emits topics, statements and parsable verdicts") {
  MockBackend mock(1234);
  std::vector<ChatMessage> topic_req = {{MsgRole::System, "You are a helpful assistant."},
                                        {MsgRole::User, "Generate one concise debate topic about age."}};
  std::string t1 = mock.complete(topic_req);
  std::string t2 = mock.complete(topic_req);
  CHECK(t1 != t2);

  std::vector<ChatMessage> referee_req = {
      {MsgRole::System, "You are the referee."},
      {MsgRole::User, "[Debater 1]: aaa\n[Debater 2]: bbb\nGive your verdict now."}};
  std::string verdict = mock.complete(referee_req);
  CHECK(verdict.find("SCORES:") != std::string::npos);
  CHECK(verdict.find("RANKS:") != std::string::npos);

  // Same seed, fresh instance, same draws.
  MockBackend again(1234);
  CHECK(again.complete(topic_req) == t1);
}

TEST_CASE("http backend against a local stub") {
  httplib::Server server;
  std::atomic<int> failures_left{0};
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    hits.fetch_add(1);
    if (failures_left.fetch_sub(1) > 0) {
      res.status = 500;
      res.set_content("boom", "text/plain");
      return;
    }
    Json body = Json::parse(req.body);
    Json reply{{"choices", Json::array({Json{{"message", Json{{"role", "assistant"},
                                                              {"content", "stub says " +
                                                                   body["model"].get<std::string>()}}}}})}};
    res.set_content(reply.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BackendSpec spec;
  spec.kind = BackendSpec::Kind::Http;
  spec.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  spec.model_name = "test-model";
  spec.max_retries = 3;
  spec.retry_base_ms = 1;
  spec.requests_per_sec = 0;  // no pacing in tests

  SUBCASE("extracts the assistant text") {
    HttpBackend backend(spec);
    CHECK(backend.complete(simple_messages()) == "stub says test-model");
    CHECK(backend.retries() == 0);
  }

  SUBCASE("retries transient failures with backoff") {
    failures_left = 2;
    HttpBackend backend(spec);
    CHECK(backend.complete(simple_messages()) == "stub says test-model");
    CHECK(backend.retries() == 2);
  }

  SUBCASE("gives up after max_retries") {
    failures_left = 1000;
    BackendSpec strict = spec;
    strict.max_retries = 2;
    HttpBackend backend(strict);
    CHECK_THROWS_AS(backend.complete(simple_messages()), BackendUnreachable);
    CHECK(backend.retries() == 2);  // min(failures, max_retries)
  }

  server.stop();
  server_thread.join();
}

TEST_CASE("http 429 exhaustion raises RateLimited") {
  httplib::Server server;
  server.Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.status = 429;
    res.set_content("slow down", "text/plain");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BackendSpec spec;
  spec.kind = BackendSpec::Kind::Http;
  spec.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  spec.model_name = "m";
  spec.max_retries = 1;
  spec.retry_base_ms = 1;
  spec.requests_per_sec = 0;
  HttpBackend backend(spec);
  CHECK_THROWS_AS(backend.complete(simple_messages()), RateLimited);

  server.stop();
  server_thread.join();
}

TEST_CASE("mode assignment shares the backend when specs match") {
  BackendSpec spec;
  spec.script = {"a", "b"};
  auto assignment = ModeAssignment::make(spec, spec);
  CHECK(assignment.debater == assignment.referee);
  assignment.debater->complete(simple_messages());
  CHECK(assignment.referee->calls() == 1);

  BackendSpec referee = spec;
  referee.temperature = 0.0;
  auto split = ModeAssignment::make(spec, referee);
  CHECK(split.debater != split.referee);
}

TEST_SUITE_END();
