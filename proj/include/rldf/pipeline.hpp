#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rldf/backend.hpp"
#include "rldf/core.hpp"
#include "rldf/dataset.hpp"
#include "rldf/debate.hpp"
#include "rldf/eval.hpp"
#include "rldf/policy.hpp"
#include "rldf/ppo.hpp"
#include "rldf/reward.hpp"

namespace rldf {

struct BackendSection {
  std::string mode = "self";  // "self" | "teacher"
  BackendSpec self_spec;
  BackendSpec teacher_spec;
  double debater_temperature = 1.0;
  double referee_temperature = 0.0;
  std::string cassette_mode = "off";  // "off" | "record" | "replay"
  std::string cassette_path = "cassette.jsonl";

  const BackendSpec& active_spec() const { return mode == "teacher" ? teacher_spec : self_spec; }

  Json to_json() const;
  static BackendSection from_json(const Json& j);
};

struct EvalSection {
  std::string bbq_path;               // relative to workspace; empty skips BBQ
  std::string answerer = "backend";   // "backend" | "gold"
  int repeats = 3;
  int sample_prompts = 4;
  int sample_max_len = 32;
  std::vector<std::string> judge_metrics = {"BS", "CE", "LS"};
  std::optional<BackendSpec> judge_spec;  // default: the active backend spec
  std::string ratings_csv;            // optional rating matrix for agreement

  Json to_json() const;
  static EvalSection from_json(const Json& j);
};

struct SweepSection {
  std::vector<int> roles = {2, 3, 4, 5};
  std::vector<int> rounds = {1, 3, 5, 10};
  std::vector<int> pairs = {1000, 3000, 5000, 7500, 10000};
  std::vector<int> topics = {500, 1000, 1500, 2000, 2500};
  int base_roles = 3;
  int base_rounds = 5;
  int base_pairs = 5000;
  int base_topics = 2000;

  Json to_json() const;
  static SweepSection from_json(const Json& j);
};

struct AppConfig {
  DebateConfig debate = DebateConfig::defaults();
  PipelineConfig pipeline;
  BackendSection backend;
  EvalSection eval;
  PpoConfig ppo;
  SweepSection sweep;

  Json to_json() const;
  static AppConfig from_json(const Json& j);

  // PPO settings with the paper-backed fields (beta, lr, batch) taken from
  // the pipeline section and the seed derived from the master seed.
  PpoConfig merged_ppo() const;
};

// Applies one "dotted.path=value" override to a raw config document. Values
// parse as JSON when possible, else as strings.
void apply_override(Json& config, const std::string& key_value);

AppConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                      std::optional<std::uint64_t> seed_override = std::nullopt,
                      std::optional<std::string> mode_override = std::nullopt);

ValidationReport validate_app(const AppConfig& cfg);

// Per-run directory layout: <root>/<category>/{topics,transcripts,dataset,
// rm,sft,ppo,eval,report}. Holds a lock file at the root for the lifetime of
// the object; one command at a time per workspace.
class Workspace {
 public:
  Workspace(std::filesystem::path root, std::string category);
  ~Workspace();
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path category_dir() const { return root_ / category_; }
  std::filesystem::path stage_dir(std::string_view stage) const;
  std::filesystem::path templates_dir() const { return root_ / "templates"; }
  std::filesystem::path resolve(const std::string& relative) const;

 private:
  std::filesystem::path root_;
  std::string category_;
  std::filesystem::path lock_path_;
};

ModeAssignment make_assignment(const BackendSection& backend, const Workspace& ws);

void stage_topics(const AppConfig& cfg, const Workspace& ws);
void stage_debate(const AppConfig& cfg, const Workspace& ws);
void stage_build_dataset(const AppConfig& cfg, const Workspace& ws);
void stage_train_rm(const AppConfig& cfg, const Workspace& ws);
void stage_sft(const AppConfig& cfg, const Workspace& ws);
void stage_ppo(const AppConfig& cfg, const Workspace& ws);
void stage_eval(const AppConfig& cfg, const Workspace& ws);
void stage_report(const AppConfig& cfg, const Workspace& ws);
void stage_sweep(const AppConfig& cfg, const Workspace& ws);

// 2 = config, 3 = backend, 4 = data, 1 = anything else.
int exit_code_for(const std::exception& e);
Json error_record(const std::exception& e, const std::string& stage);

}  // namespace rldf
