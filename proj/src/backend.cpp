#include "rldf/backend.hpp"

#include <fstream>
#include <thread>

#include <httplib.h>

namespace rldf {

std::string msg_role_name(MsgRole role) {
  switch (role) {
    case MsgRole::System: return "system";
    case MsgRole::User: return "user";
    case MsgRole::Assistant: return "assistant";
  }
  return "user";
}

Json BackendSpec::to_json() const {
  Json j{{"kind", kind == Kind::Http ? "http" : "mock"},
         {"endpoint_url", endpoint_url},
         {"model_name", model_name},
         {"temperature", temperature},
         {"max_retries", max_retries},
         {"timeout_ms", timeout_ms},
         {"requests_per_sec", requests_per_sec},
         {"retry_base_ms", retry_base_ms},
         {"api_key_env", api_key_env}};
  if (!script.empty()) j["script"] = script;
  if (generator_seed) j["generator_seed"] = *generator_seed;
  return j;
}

BackendSpec BackendSpec::from_json(const Json& j) {
  BackendSpec spec;
  std::string kind = j.value("kind", std::string("mock"));
  if (kind == "http") {
    spec.kind = Kind::Http;
  } else if (kind == "mock") {
    spec.kind = Kind::Mock;
  } else {
    throw ConfigError("backend kind must be 'http' or 'mock', got '" + kind + "'");
  }
  spec.endpoint_url = j.value("endpoint_url", spec.endpoint_url);
  spec.model_name = j.value("model_name", spec.model_name);
  spec.temperature = j.value("temperature", spec.temperature);
  spec.max_retries = j.value("max_retries", spec.max_retries);
  spec.timeout_ms = j.value("timeout_ms", spec.timeout_ms);
  spec.requests_per_sec = j.value("requests_per_sec", spec.requests_per_sec);
  spec.retry_base_ms = j.value("retry_base_ms", spec.retry_base_ms);
  spec.api_key_env = j.value("api_key_env", spec.api_key_env);
  if (j.contains("script")) spec.script = j.at("script").get<std::vector<std::string>>();
  if (j.contains("generator_seed")) spec.generator_seed = j.at("generator_seed").get<std::uint64_t>();
  return spec;
}

std::string BackendSpec::digest() const { return sha256_hex(to_json().dump()); }

ValidationReport validate_spec(const BackendSpec& spec, const std::string& prefix) {
  ValidationReport report;
  auto range = [&](const std::string& field, const std::string& message) {
    report.violations.push_back({prefix + "." + field, "RangeViolation", message});
  };
  if (spec.kind == BackendSpec::Kind::Http) {
    if (spec.endpoint_url.empty()) range("endpoint_url", "http backend requires endpoint_url");
    if (spec.model_name.empty()) range("model_name", "http backend requires model_name");
  } else {
    if (spec.script.empty() && !spec.generator_seed) {
      range("script", "mock backend requires a non-empty script or a generator_seed");
    }
  }
  if (spec.temperature < 0) range("temperature", "temperature must be >= 0");
  if (spec.max_retries < 0) range("max_retries", "max_retries must be >= 0");
  if (spec.timeout_ms < 1) range("timeout_ms", "timeout_ms must be >= 1");
  return report;
}

std::string request_digest(const std::string& model_name, double temperature,
                           const std::vector<ChatMessage>& messages) {
  Json msgs = Json::array();
  for (const auto& m : messages) {
    msgs.push_back(Json{{"role", msg_role_name(m.role)}, {"content", m.content}});
  }
  Json req{{"model", model_name}, {"temperature", temperature}, {"messages", msgs}};
  return sha256_hex(req.dump());
}

std::string ChatBackend::complete(const std::vector<ChatMessage>& messages) {
  if (messages.empty() || messages.front().role != MsgRole::System) {
    throw std::invalid_argument("complete: messages must be non-empty and start with a system message");
  }
  calls_.fetch_add(1);
  std::string reply = do_complete(messages);
  if (reply.empty()) throw MalformedResponse("backend returned an empty reply");
  return reply;
}

// ----------------------------------------------------------------------------
// Mock backend
// ----------------------------------------------------------------------------

MockBackend::MockBackend(std::vector<std::string> script)
    : script_(script.begin(), script.end()) {}

MockBackend::MockBackend(std::uint64_t generator_seed) : generated_(true), rng_(Rng(generator_seed)) {}

std::string MockBackend::do_complete(const std::vector<ChatMessage>& messages) {
  std::lock_guard lock(mu_);
  if (generated_) return generate(messages);
  if (script_.empty()) throw ScriptExhausted("mock script has no more replies");
  std::string reply = std::move(script_.front());
  script_.pop_front();
  return reply;
}

namespace {

const char* kFillerWords[] = {"balance",  "experience", "perspective", "community", "practice",
                              "habits",   "judgment",   "curiosity",   "routine",   "stamina",
                              "patience", "ambition",   "tradition",   "novelty",   "skill"};
constexpr std::size_t kFillerCount = sizeof(kFillerWords) / sizeof(kFillerWords[0]);

// Labels rendered as "[label]:" in debate context blocks, first appearance order.
std::vector<std::string> extract_bracketed_labels(const std::string& text) {
  std::vector<std::string> labels;
  std::size_t pos = 0;
  while ((pos = text.find('[', pos)) != std::string::npos) {
    std::size_t end = text.find("]:", pos);
    if (end == std::string::npos) break;
    std::string label = text.substr(pos + 1, end - pos - 1);
    if (!label.empty() && label.size() < 80 &&
        std::find(labels.begin(), labels.end(), label) == labels.end()) {
      labels.push_back(label);
    }
    pos = end + 2;
  }
  return labels;
}

}  // namespace

std::string MockBackend::generate(const std::vector<ChatMessage>& messages) {
  ++counter_;
  const std::string& user = messages.back().content;
  Rng& rng = *rng_;

  if (user.find("debate topic") != std::string::npos) {
    std::string a = kFillerWords[rng.below(kFillerCount)];
    std::string b = kFillerWords[rng.below(kFillerCount)];
    return "Whether " + a + " matters more than " + b + " (topic " + std::to_string(counter_) + ")";
  }

  if (user.find("your verdict now") != std::string::npos) {
    auto labels = extract_bracketed_labels(user);
    if (labels.empty()) labels = {"Agent 1", "Agent 2", "Agent 3"};
    std::vector<int> scores;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores.push_back(static_cast<int>(rng.below(11)));
    }
    // Rank 1 = least biased (lowest score); ties broken by appearance order.
    std::vector<std::size_t> order(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::string out = "SCORES: ";
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (i) out += "; ";
      out += labels[i] + "=" + std::to_string(scores[i]);
    }
    out += "; RANKS: ";
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (r) out += "; ";
      out += labels[order[r]] + "=" + std::to_string(r + 1);
    }
    return out;
  }

  // Debater statement: pull the label from the system message when present.
  std::string label = "a participant";
  const std::string& sys = messages.front().content;
  if (auto pos = sys.find("Your label: "); pos != std::string::npos) {
    auto end = sys.find('.', pos);
    label = sys.substr(pos + 12, end == std::string::npos ? std::string::npos : end - pos - 12);
  }
  std::string w1 = kFillerWords[rng.below(kFillerCount)];
  std::string w2 = kFillerWords[rng.below(kFillerCount)];
  std::string w3 = kFillerWords[rng.below(kFillerCount)];
  return "As " + label + ", I value " + w1 + " and " + w2 + ", though " + w3 +
         " can cut both ways (statement " + std::to_string(counter_) + ").";
}

// ----------------------------------------------------------------------------
// HTTP backend
// ----------------------------------------------------------------------------

HttpBackend::HttpBackend(BackendSpec spec) : spec_(std::move(spec)) {
  const std::string& url = spec_.endpoint_url;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint_url must include scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    host_ = url;
    path_ = "/v1/chat/completions";
  } else {
    host_ = url.substr(0, path_start);
    path_ = url.substr(path_start);
  }
  next_allowed_ = std::chrono::steady_clock::now();
}

void HttpBackend::pace() {
  if (spec_.requests_per_sec <= 0) return;
  std::chrono::steady_clock::time_point wait_until;
  {
    std::lock_guard lock(pace_mu_);
    auto now = std::chrono::steady_clock::now();
    auto interval = std::chrono::microseconds(static_cast<long>(1e6 / spec_.requests_per_sec));
    wait_until = std::max(now, next_allowed_);
    next_allowed_ = wait_until + interval;
  }
  std::this_thread::sleep_until(wait_until);
}

std::string HttpBackend::do_complete(const std::vector<ChatMessage>& messages) {
  Json msgs = Json::array();
  for (const auto& m : messages) {
    msgs.push_back(Json{{"role", msg_role_name(m.role)}, {"content", m.content}});
  }
  Json body{{"model", spec_.model_name}, {"messages", msgs}, {"temperature", spec_.temperature}};
  std::string payload = body.dump();

  httplib::Client client(host_);
  client.set_connection_timeout(0, spec_.timeout_ms * 1000LL);
  client.set_read_timeout(spec_.timeout_ms / 1000, (spec_.timeout_ms % 1000) * 1000);
  httplib::Headers headers;
  if (const char* key = std::getenv(spec_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  bool last_was_rate_limit = false;
  std::string last_detail;
  for (int attempt = 0;; ++attempt) {
    pace();
    auto res = client.Post(path_, headers, payload, "application/json");
    if (res && res->status >= 200 && res->status < 300) {
      Json reply;
      try {
        reply = Json::parse(res->body);
      } catch (const std::exception& e) {
        throw MalformedResponse(std::string("invalid JSON reply: ") + e.what());
      }
      if (!reply.contains("choices") || reply["choices"].empty() ||
          !reply["choices"][0].contains("message")) {
        throw MalformedResponse("reply lacks choices[0].message");
      }
      std::string content = reply["choices"][0]["message"].value("content", std::string{});
      if (content.empty()) throw MalformedResponse("assistant content is empty");
      return content;
    }

    bool retryable;
    if (!res) {
      retryable = true;
      last_was_rate_limit = false;
      last_detail = "transport error: " + httplib::to_string(res.error());
    } else if (res->status == 429) {
      retryable = true;
      last_was_rate_limit = true;
      last_detail = "status 429";
    } else if (res->status >= 500) {
      retryable = true;
      last_was_rate_limit = false;
      last_detail = "status " + std::to_string(res->status);
    } else {
      throw BackendUnreachable("status " + std::to_string(res->status) + " from " + host_ + path_);
    }

    if (!retryable || attempt >= spec_.max_retries) {
      if (last_was_rate_limit) throw RateLimited(last_detail + " after " + std::to_string(attempt) + " retries");
      throw BackendUnreachable(last_detail + " after " + std::to_string(attempt) + " retries");
    }
    retries_.fetch_add(1);
    auto backoff = std::chrono::milliseconds(spec_.retry_base_ms << attempt);
    std::this_thread::sleep_for(backoff);
  }
}

// ----------------------------------------------------------------------------
// Cassettes
// ----------------------------------------------------------------------------

RecordingBackend::RecordingBackend(std::shared_ptr<ChatBackend> inner, BackendSpec spec,
                                   std::filesystem::path cassette)
    : inner_(std::move(inner)), spec_(std::move(spec)), path_(std::move(cassette)) {
  if (path_.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path_.parent_path(), ec);
  }
}

std::string RecordingBackend::do_complete(const std::vector<ChatMessage>& messages) {
  std::string reply = inner_->complete(messages);
  Json msgs = Json::array();
  for (const auto& m : messages) {
    msgs.push_back(Json{{"role", msg_role_name(m.role)}, {"content", m.content}});
  }
  Json entry{{"digest", request_digest(spec_.model_name, spec_.temperature, messages)},
             {"request", Json{{"model", spec_.model_name},
                              {"temperature", spec_.temperature},
                              {"messages", msgs}}},
             {"reply", reply}};
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw IoFailure("cannot open cassette for append: " + path_.string());
  out << entry.dump() << "\n";
  out.flush();
  if (!out) throw IoFailure("cassette write failed: " + path_.string());
  return reply;
}

ReplayBackend::ReplayBackend(BackendSpec spec, const std::filesystem::path& cassette)
    : spec_(std::move(spec)) {
  std::vector<std::string> lines;
  try {
    lines = read_lines(cassette);
  } catch (const IoFailure& e) {
    throw CassetteCorrupt(std::string("cannot read cassette: ") + e.what());
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    Json entry;
    try {
      entry = Json::parse(lines[i]);
    } catch (const std::exception& e) {
      throw CassetteCorrupt("line " + std::to_string(i + 1) + ": " + e.what());
    }
    if (!entry.contains("digest") || !entry.contains("reply")) {
      throw CassetteCorrupt("line " + std::to_string(i + 1) + ": missing digest or reply");
    }
    replies_[entry["digest"].get<std::string>()].push_back(entry["reply"].get<std::string>());
  }
}

std::string ReplayBackend::do_complete(const std::vector<ChatMessage>& messages) {
  std::string digest = request_digest(spec_.model_name, spec_.temperature, messages);
  std::lock_guard lock(mu_);
  auto it = replies_.find(digest);
  if (it == replies_.end() || it->second.empty()) {
    throw CassetteMiss("no recorded reply for request digest " + digest);
  }
  std::string reply = std::move(it->second.front());
  it->second.pop_front();
  return reply;
}

std::shared_ptr<ChatBackend> make_backend(const BackendSpec& spec, const CassetteOptions& cassette) {
  if (cassette.mode == CassetteOptions::Mode::Replay) {
    return std::make_shared<ReplayBackend>(spec, cassette.path);
  }
  std::shared_ptr<ChatBackend> inner;
  if (spec.kind == BackendSpec::Kind::Http) {
    inner = std::make_shared<HttpBackend>(spec);
  } else if (spec.generator_seed) {
    inner = std::make_shared<MockBackend>(*spec.generator_seed);
  } else {
    inner = std::make_shared<MockBackend>(spec.script);
  }
  if (cassette.mode == CassetteOptions::Mode::Record) {
    return std::make_shared<RecordingBackend>(std::move(inner), spec, cassette.path);
  }
  return inner;
}

ModeAssignment ModeAssignment::make(BackendSpec debater_spec, BackendSpec referee_spec,
                                    const CassetteOptions& cassette) {
  ModeAssignment assignment;
  assignment.debater_spec = debater_spec;
  assignment.referee_spec = referee_spec;
  assignment.debater = make_backend(debater_spec, cassette);
  if (debater_spec.to_json() == referee_spec.to_json()) {
    assignment.referee = assignment.debater;
  } else {
    assignment.referee = make_backend(referee_spec, cassette);
  }
  return assignment;
}

}  // namespace rldf
