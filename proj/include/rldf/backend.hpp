#pragma once

#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rldf/common.hpp"
#include "rldf/core.hpp"

namespace rldf {

enum class MsgRole { System, User, Assistant };

std::string msg_role_name(MsgRole role);

struct ChatMessage {
  MsgRole role;
  std::string content;
};

// A chat-completion endpoint description. `kind == Http` talks the
// OpenAI-compatible wire format; `kind == Mock` replays a fixed script or
// synthesizes deterministic replies from a seed.
struct BackendSpec {
  enum class Kind { Http, Mock };

  Kind kind = Kind::Mock;
  std::string endpoint_url;  // e.g. http://localhost:8080/v1/chat/completions
  std::string model_name = "mock";
  double temperature = 1.0;
  int max_retries = 3;
  int timeout_ms = 30000;
  double requests_per_sec = 1.0;  // http pacing; <= 0 disables
  int retry_base_ms = 200;
  std::string api_key_env = "RLDF_API_KEY";
  std::vector<std::string> script;                // mock, scripted
  std::optional<std::uint64_t> generator_seed;    // mock, generated

  Json to_json() const;
  static BackendSpec from_json(const Json& j);
  std::string digest() const;
};

ValidationReport validate_spec(const BackendSpec& spec, const std::string& field_prefix = "backend");

// Digest identifying a request for cassette keying: model, temperature and
// the full message list, hashed over a canonical JSON rendering.
std::string request_digest(const std::string& model_name, double temperature,
                           const std::vector<ChatMessage>& messages);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;

  // Returns one assistant reply. Messages must be non-empty and begin with a
  // system message. Empty replies from the wire surface as MalformedResponse.
  std::string complete(const std::vector<ChatMessage>& messages);

  std::uint64_t calls() const { return calls_.load(); }

 protected:
  virtual std::string do_complete(const std::vector<ChatMessage>& messages) = 0;

 private:
  std::atomic<std::uint64_t> calls_{0};
};

class MockBackend : public ChatBackend {
 public:
  explicit MockBackend(std::vector<std::string> script);
  explicit MockBackend(std::uint64_t generator_seed);

 protected:
  std::string do_complete(const std::vector<ChatMessage>& messages) override;

 private:
  std::string generate(const std::vector<ChatMessage>& messages);

  std::mutex mu_;
  std::deque<std::string> script_;
  bool generated_ = false;
  std::optional<Rng> rng_;
  std::uint64_t counter_ = 0;
};

class HttpBackend : public ChatBackend {
 public:
  explicit HttpBackend(BackendSpec spec);

  // Total retry sleeps performed; equals min(consecutive failures, max_retries)
  // for the last failing call sequence when probed right after it.
  std::uint64_t retries() const { return retries_.load(); }

 protected:
  std::string do_complete(const std::vector<ChatMessage>& messages) override;

 private:
  void pace();

  BackendSpec spec_;
  std::string host_;   // scheme://host:port
  std::string path_;   // /v1/chat/completions
  std::mutex pace_mu_;
  std::chrono::steady_clock::time_point next_allowed_;
  std::atomic<std::uint64_t> retries_{0};
};

// Record/replay wrappers. Cassettes are JSONL of {digest, request, reply};
// replies for repeated identical requests replay in recorded order.
struct CassetteOptions {
  enum class Mode { Off, Record, Replay };
  Mode mode = Mode::Off;
  std::filesystem::path path;
};

class RecordingBackend : public ChatBackend {
 public:
  RecordingBackend(std::shared_ptr<ChatBackend> inner, BackendSpec spec,
                   std::filesystem::path cassette);

 protected:
  std::string do_complete(const std::vector<ChatMessage>& messages) override;

 private:
  std::shared_ptr<ChatBackend> inner_;
  BackendSpec spec_;
  std::filesystem::path path_;
  std::mutex mu_;
};

class ReplayBackend : public ChatBackend {
 public:
  // Never touches the network: answers purely from the cassette.
  ReplayBackend(BackendSpec spec, const std::filesystem::path& cassette);

 protected:
  std::string do_complete(const std::vector<ChatMessage>& messages) override;

 private:
  BackendSpec spec_;
  std::mutex mu_;
  std::unordered_map<std::string, std::deque<std::string>> replies_;
};

std::shared_ptr<ChatBackend> make_backend(const BackendSpec& spec,
                                          const CassetteOptions& cassette = {});

// Resolved backends for one debate run. In self-reflection mode both specs
// point at the same endpoint; in teacher-student mode both are served by the
// designated teacher. Referee temperature defaults to 0 so its scores label
// the dataset as deterministically as the backend allows.
struct ModeAssignment {
  BackendSpec debater_spec;
  BackendSpec referee_spec;
  std::shared_ptr<ChatBackend> debater;
  std::shared_ptr<ChatBackend> referee;

  static ModeAssignment make(BackendSpec debater_spec, BackendSpec referee_spec,
                             const CassetteOptions& cassette = {});
};

}  // namespace rldf
