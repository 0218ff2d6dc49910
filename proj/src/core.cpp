#include "rldf/core.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace rldf {

const std::vector<std::string>& BiasCategory::builtins() {
  static const std::vector<std::string> names = {"age", "nationality", "institution", "beauty",
                                                 "profession"};
  return names;
}

bool BiasCategory::is_builtin() const {
  const auto& b = builtins();
  return std::find(b.begin(), b.end(), name) != b.end();
}

DebateConfig DebateConfig::defaults() {
  DebateConfig cfg;
  cfg.roles = {
      {"20-year-old individual", "A 20-year-old speaking from a young adult's position."},
      {"40-year-old individual", "A 40-year-old speaking from a mid-life position."},
      {"60-year-old individual", "A 60-year-old speaking from an older adult's position."},
  };
  return cfg;
}

Json DebateConfig::to_json() const {
  Json roles_json = Json::array();
  for (const auto& r : roles) {
    roles_json.push_back(Json{{"label", r.label}, {"persona_note", r.persona_note}});
  }
  return Json{{"category", category.name}, {"roles", roles_json},
              {"rounds", rounds},          {"topics", topics},
              {"bias_threshold", bias_threshold}, {"score_min", score_min},
              {"score_max", score_max},    {"seed", seed},
              {"parallelism", parallelism}};
}

DebateConfig DebateConfig::from_json(const Json& j) {
  DebateConfig cfg = defaults();
  if (j.contains("category")) cfg.category.name = j.at("category").get<std::string>();
  if (j.contains("roles")) {
    cfg.roles.clear();
    for (const auto& r : j.at("roles")) {
      RoleSpec role;
      role.label = r.value("label", std::string{});
      role.persona_note = r.value("persona_note", std::string{});
      cfg.roles.push_back(std::move(role));
    }
  }
  cfg.rounds = j.value("rounds", cfg.rounds);
  cfg.topics = j.value("topics", cfg.topics);
  cfg.bias_threshold = j.value("bias_threshold", cfg.bias_threshold);
  cfg.score_min = j.value("score_min", cfg.score_min);
  cfg.score_max = j.value("score_max", cfg.score_max);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.parallelism = j.value("parallelism", cfg.parallelism);
  return cfg;
}

std::string DebateConfig::digest() const { return sha256_hex(to_json().dump()); }

TokenSequence truncate_right(const TokenSequence& seq, std::size_t max_len) {
  if (seq.tokens.size() <= max_len) return seq;
  TokenSequence out;
  out.tokens.assign(seq.tokens.begin(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(max_len));
  return out;
}

Json PipelineConfig::to_json() const {
  Json j{{"max_seq_len", max_seq_len}, {"rm_lr", rm_lr},
         {"rm_batch", rm_batch},       {"ppo_lr", ppo_lr},
         {"ppo_batch", ppo_batch},     {"epochs", epochs},
         {"min_pairs", min_pairs},     {"pair_cap", pair_cap},
         {"feature_dim", feature_dim}, {"context_width", context_width},
         {"policy_rows", policy_rows}, {"sft_lr", sft_lr},
         {"sft_batch", sft_batch}};
  if (std::isfinite(beta)) j["beta"] = beta;
  return j;
}

PipelineConfig PipelineConfig::from_json(const Json& j) {
  PipelineConfig cfg;
  cfg.max_seq_len = j.value("max_seq_len", cfg.max_seq_len);
  cfg.rm_lr = j.value("rm_lr", cfg.rm_lr);
  cfg.rm_batch = j.value("rm_batch", cfg.rm_batch);
  cfg.ppo_lr = j.value("ppo_lr", cfg.ppo_lr);
  cfg.ppo_batch = j.value("ppo_batch", cfg.ppo_batch);
  cfg.epochs = j.value("epochs", cfg.epochs);
  if (j.contains("beta")) cfg.beta = j.at("beta").get<double>();
  cfg.min_pairs = j.value("min_pairs", cfg.min_pairs);
  cfg.pair_cap = j.value("pair_cap", cfg.pair_cap);
  cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
  cfg.context_width = j.value("context_width", cfg.context_width);
  cfg.policy_rows = j.value("policy_rows", cfg.policy_rows);
  cfg.sft_lr = j.value("sft_lr", cfg.sft_lr);
  cfg.sft_batch = j.value("sft_batch", cfg.sft_batch);
  return cfg;
}

std::string ValidationReport::to_string() const {
  std::ostringstream ss;
  for (const auto& v : violations) {
    ss << v.kind << " at " << v.field << ": " << v.message << "\n";
  }
  return ss.str();
}

ValidationReport validate_config(const DebateConfig& d, const PipelineConfig& p) {
  ValidationReport report;
  auto range = [&](const std::string& field, const std::string& message) {
    report.violations.push_back({field, "RangeViolation", message});
  };

  if (d.category.name.empty()) range("debate.category", "category name must be non-empty");
  if (d.roles.size() < 2) range("debate.roles", "at least 2 roles required");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < d.roles.size(); ++i) {
    const auto& r = d.roles[i];
    std::string field = "debate.roles[" + std::to_string(i) + "]";
    if (r.label.empty()) range(field + ".label", "label must be non-empty");
    if (!labels.insert(r.label).second) {
      report.violations.push_back({field + ".label", "DuplicateRole",
                                   "duplicate role label: " + r.label});
    }
  }
  if (d.rounds < 1) range("debate.rounds", "rounds must be >= 1");
  if (d.topics < 1) range("debate.topics", "topics must be >= 1");
  if (d.score_min >= d.score_max) range("debate.score_min", "score_min must be < score_max");
  if (d.bias_threshold < d.score_min || d.bias_threshold >= d.score_max) {
    range("debate.bias_threshold", "bias_threshold must satisfy score_min <= t < score_max");
  }
  if (d.parallelism < 1) range("debate.parallelism", "parallelism must be >= 1");

  if (p.max_seq_len < 1) range("pipeline.max_seq_len", "max_seq_len must be >= 1");
  if (!(p.rm_lr > 0)) range("pipeline.rm_lr", "rm_lr must be > 0");
  if (!(p.ppo_lr > 0)) range("pipeline.ppo_lr", "ppo_lr must be > 0");
  if (!(p.sft_lr > 0)) range("pipeline.sft_lr", "sft_lr must be > 0");
  if (p.rm_batch < 1) range("pipeline.rm_batch", "rm_batch must be >= 1");
  if (p.ppo_batch < 1) range("pipeline.ppo_batch", "ppo_batch must be >= 1");
  if (p.sft_batch < 1) range("pipeline.sft_batch", "sft_batch must be >= 1");
  if (p.epochs < 0) range("pipeline.epochs", "epochs must be >= 0");
  if (!(p.beta >= 0)) range("pipeline.beta", "beta is required and must be >= 0");
  if (p.min_pairs < 1) range("pipeline.min_pairs", "min_pairs must be >= 1");
  if (p.pair_cap < 1) range("pipeline.pair_cap", "pair_cap must be >= 1");
  if (p.feature_dim < 2) range("pipeline.feature_dim", "feature_dim must be >= 2");
  if (p.context_width < 1) range("pipeline.context_width", "context_width must be >= 1");
  if (p.policy_rows < 1) range("pipeline.policy_rows", "policy_rows must be >= 1");
  return report;
}

// ----------------------------------------------------------------------------
// Tokenizer / vocabulary
// ----------------------------------------------------------------------------

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&]() {
    if (!current.empty()) {
      tokens.push_back(current);
      current.clear();
    }
  };
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || raw == '\'' || raw == '-' || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      tokens.push_back(std::string(1, raw));
    }
  }
  flush();
  return tokens;
}

Vocabulary::Vocabulary() {
  tokens_ = {"<unk>", "<eos>"};
  index_ = {{"<unk>", kUnkId}, {"<eos>", kEosId}};
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
  std::set<std::string> seen;
  for (const auto& text : corpus) {
    for (auto& tok : tokenize_words(text)) seen.insert(std::move(tok));
  }
  Vocabulary vocab;
  for (const auto& tok : seen) {
    vocab.index_.emplace(tok, static_cast<std::int32_t>(vocab.tokens_.size()));
    vocab.tokens_.push_back(tok);
  }
  return vocab;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary::token: bad id");
  return tokens_[static_cast<std::size_t>(id)];
}

std::int32_t Vocabulary::id_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

TokenSequence Vocabulary::encode(std::string_view text) const {
  TokenSequence seq;
  for (const auto& tok : tokenize_words(text)) seq.tokens.push_back(id_of(tok));
  return seq;
}

std::string Vocabulary::decode(const TokenSequence& seq) const {
  std::string out;
  for (std::int32_t id : seq.tokens) {
    if (id == kEosId) break;
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

Json Vocabulary::to_json() const {
  // Sentinels are implicit; only learned tokens are stored.
  Json j = Json::array();
  for (std::size_t i = 2; i < tokens_.size(); ++i) j.push_back(tokens_[i]);
  return j;
}

Vocabulary Vocabulary::from_json(const Json& j) {
  Vocabulary vocab;
  for (const auto& tok : j) {
    std::string s = tok.get<std::string>();
    vocab.index_.emplace(s, static_cast<std::int32_t>(vocab.tokens_.size()));
    vocab.tokens_.push_back(std::move(s));
  }
  return vocab;
}

}  // namespace rldf
