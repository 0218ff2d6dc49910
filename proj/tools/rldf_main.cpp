#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rldf/pipeline.hpp"

namespace {

struct CliOptions {
  std::string config_path = "rldf.json";
  std::string workspace = ".";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
};

using StageFn = void (*)(const rldf::AppConfig&, const rldf::Workspace&);

const std::map<std::string, StageFn>& stages() {
  static const std::map<std::string, StageFn> map = {
      {"topics", rldf::stage_topics},
      {"debate", rldf::stage_debate},
      {"build-dataset", rldf::stage_build_dataset},
      {"train-rm", rldf::stage_train_rm},
      {"sft", rldf::stage_sft},
      {"ppo", rldf::stage_ppo},
      {"eval", rldf::stage_eval},
      {"sweep", rldf::stage_sweep},
      {"report", rldf::stage_report},
  };
  return map;
}

int run_stage(const std::string& name, const CliOptions& opts) {
  try {
    rldf::AppConfig cfg = rldf::load_config(opts.config_path, opts.overrides, opts.seed, opts.mode);
    auto report = rldf::validate_app(cfg);
    if (!report.ok()) {
      throw rldf::ConfigError("invalid configuration:\n" + report.to_string());
    }
    rldf::Workspace workspace(opts.workspace, cfg.debate.category.name);
    stages().at(name)(cfg, workspace);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << rldf::error_record(e, name).dump() << "\n";
    return rldf::exit_code_for(e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RLDF pipeline: debate-driven preference data, reward model, SFT and PPO"};
  app.require_subcommand(1);

  CliOptions opts;
  std::vector<std::pair<std::string, CLI::App*>> subcommands;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "Path to the JSON config file");
    sub->add_option("--workspace", opts.workspace, "Workspace root directory");
    sub->add_option("--set", opts.overrides, "Config override as dotted.path=value")
        ->take_all()
        ->allow_extra_args(false);
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { opts.seed = s; }, "Master seed override");
    sub->add_option_function<std::string>(
           "--mode", [&](const std::string& m) { opts.mode = m; },
           "Backend mode: self (one model debates itself) or teacher")
        ->check(CLI::IsMember({"self", "teacher"}));
  };

  for (const auto& [name, fn] : stages()) {
    (void)fn;
    CLI::App* sub = app.add_subcommand(name);
    add_common(sub);
    subcommands.emplace_back(name, sub);
  }
  app.get_subcommand("topics")->description("Generate debate topics for the configured category");
  app.get_subcommand("debate")->description("Run multi-role debates over the generated topics");
  app.get_subcommand("build-dataset")->description("Partition scored statements into preference pairs");
  app.get_subcommand("train-rm")->description("Train the reward model on the preference pairs");
  app.get_subcommand("sft")->description("Supervised fine-tuning on low-bias completions");
  app.get_subcommand("ppo")->description("KL-regularized PPO against the reward model");
  app.get_subcommand("eval")->description("BBQ accuracy and judge-based scoring");
  app.get_subcommand("sweep")->description("One-factor ablation sweep over roles/rounds/pairs/topics");
  app.get_subcommand("report")->description("Assemble the report bundle from eval outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    // CLI11 returns 0 for --help; anything else is a usage/config error.
    return code == 0 ? 0 : 2;
  }

  for (const auto& [name, sub] : subcommands) {
    if (sub->parsed()) return run_stage(name, opts);
  }
  return 2;
}
