#include "rldf/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace rldf {

// ----------------------------------------------------------------------------
// Config sections
// ----------------------------------------------------------------------------

Json BackendSection::to_json() const {
  return Json{{"mode", mode},
              {"self", self_spec.to_json()},
              {"teacher", teacher_spec.to_json()},
              {"debater_temperature", debater_temperature},
              {"referee_temperature", referee_temperature},
              {"cassette_mode", cassette_mode},
              {"cassette_path", cassette_path}};
}

BackendSection BackendSection::from_json(const Json& j) {
  BackendSection s;
  s.mode = j.value("mode", s.mode);
  if (j.contains("self")) s.self_spec = BackendSpec::from_json(j.at("self"));
  if (j.contains("teacher")) s.teacher_spec = BackendSpec::from_json(j.at("teacher"));
  s.debater_temperature = j.value("debater_temperature", s.debater_temperature);
  s.referee_temperature = j.value("referee_temperature", s.referee_temperature);
  s.cassette_mode = j.value("cassette_mode", s.cassette_mode);
  s.cassette_path = j.value("cassette_path", s.cassette_path);
  return s;
}

Json EvalSection::to_json() const {
  Json j{{"bbq_path", bbq_path},
         {"answerer", answerer},
         {"repeats", repeats},
         {"sample_prompts", sample_prompts},
         {"sample_max_len", sample_max_len},
         {"judge_metrics", judge_metrics},
         {"ratings_csv", ratings_csv}};
  if (judge_spec) j["judge"] = judge_spec->to_json();
  return j;
}

EvalSection EvalSection::from_json(const Json& j) {
  EvalSection s;
  s.bbq_path = j.value("bbq_path", s.bbq_path);
  s.answerer = j.value("answerer", s.answerer);
  s.repeats = j.value("repeats", s.repeats);
  s.sample_prompts = j.value("sample_prompts", s.sample_prompts);
  s.sample_max_len = j.value("sample_max_len", s.sample_max_len);
  if (j.contains("judge_metrics")) s.judge_metrics = j.at("judge_metrics").get<std::vector<std::string>>();
  if (j.contains("judge")) s.judge_spec = BackendSpec::from_json(j.at("judge"));
  s.ratings_csv = j.value("ratings_csv", s.ratings_csv);
  return s;
}

Json SweepSection::to_json() const {
  return Json{{"roles", roles},
              {"rounds", rounds},
              {"pairs", pairs},
              {"topics", topics},
              {"base_roles", base_roles},
              {"base_rounds", base_rounds},
              {"base_pairs", base_pairs},
              {"base_topics", base_topics}};
}

SweepSection SweepSection::from_json(const Json& j) {
  SweepSection s;
  if (j.contains("roles")) s.roles = j.at("roles").get<std::vector<int>>();
  if (j.contains("rounds")) s.rounds = j.at("rounds").get<std::vector<int>>();
  if (j.contains("pairs")) s.pairs = j.at("pairs").get<std::vector<int>>();
  if (j.contains("topics")) s.topics = j.at("topics").get<std::vector<int>>();
  s.base_roles = j.value("base_roles", s.base_roles);
  s.base_rounds = j.value("base_rounds", s.base_rounds);
  s.base_pairs = j.value("base_pairs", s.base_pairs);
  s.base_topics = j.value("base_topics", s.base_topics);
  return s;
}

Json AppConfig::to_json() const {
  return Json{{"debate", debate.to_json()},     {"pipeline", pipeline.to_json()},
              {"backend", backend.to_json()},   {"eval", eval.to_json()},
              {"ppo", ppo.to_json()},           {"sweep", sweep.to_json()}};
}

AppConfig AppConfig::from_json(const Json& j) {
  AppConfig cfg;
  if (j.contains("debate")) cfg.debate = DebateConfig::from_json(j.at("debate"));
  if (j.contains("pipeline")) cfg.pipeline = PipelineConfig::from_json(j.at("pipeline"));
  if (j.contains("backend")) cfg.backend = BackendSection::from_json(j.at("backend"));
  if (j.contains("eval")) cfg.eval = EvalSection::from_json(j.at("eval"));
  if (j.contains("ppo")) cfg.ppo = PpoConfig::from_json(j.at("ppo"));
  if (j.contains("sweep")) cfg.sweep = SweepSection::from_json(j.at("sweep"));
  return cfg;
}

PpoConfig AppConfig::merged_ppo() const {
  PpoConfig merged = ppo;
  merged.beta = pipeline.beta;
  merged.lr = pipeline.ppo_lr;
  merged.batch = pipeline.ppo_batch;
  merged.seed = derive_stream(debate.seed, "ppo");
  return merged;
}

void apply_override(Json& config, const std::string& key_value) {
  auto eq = key_value.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must be dotted.path=value, got '" + key_value + "'");
  }
  std::string path = key_value.substr(0, eq);
  std::string value_str = key_value.substr(eq + 1);

  Json value;
  try {
    value = Json::parse(value_str);
  } catch (const Json::exception&) {
    value = value_str;  // plain string
  }

  Json* node = &config;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("empty path segment in override '" + key_value + "'");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

AppConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                      std::optional<std::uint64_t> seed_override,
                      std::optional<std::string> mode_override) {
  Json raw;
  try {
    raw = Json::parse(read_file(path));
  } catch (const IoFailure& e) {
    throw ConfigError(e.what());
  } catch (const Json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  for (const auto& kv : overrides) apply_override(raw, kv);
  if (seed_override) apply_override(raw, "debate.seed=" + std::to_string(*seed_override));
  if (mode_override) apply_override(raw, "backend.mode=" + *mode_override);
  try {
    return AppConfig::from_json(raw);
  } catch (const Json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

ValidationReport validate_app(const AppConfig& cfg) {
  ValidationReport report = validate_config(cfg.debate, cfg.pipeline);
  auto push = [&](const std::string& field, const std::string& message) {
    report.violations.push_back({field, "RangeViolation", message});
  };

  if (cfg.backend.mode != "self" && cfg.backend.mode != "teacher") {
    push("backend.mode", "mode must be 'self' or 'teacher'");
  }
  auto spec_report = validate_spec(cfg.backend.active_spec(),
                                   cfg.backend.mode == "teacher" ? "backend.teacher" : "backend.self");
  report.violations.insert(report.violations.end(), spec_report.violations.begin(),
                           spec_report.violations.end());
  if (cfg.backend.cassette_mode != "off" && cfg.backend.cassette_mode != "record" &&
      cfg.backend.cassette_mode != "replay") {
    push("backend.cassette_mode", "must be 'off', 'record' or 'replay'");
  }

  if (std::isfinite(cfg.pipeline.beta)) {
    auto ppo_report = validate_ppo(cfg.merged_ppo());
    report.violations.insert(report.violations.end(), ppo_report.violations.begin(),
                             ppo_report.violations.end());
  }

  if (cfg.eval.answerer != "backend" && cfg.eval.answerer != "gold") {
    push("eval.answerer", "answerer must be 'backend' or 'gold'");
  }
  if (cfg.eval.repeats < 1) push("eval.repeats", "repeats must be >= 1");
  if (cfg.eval.sample_prompts < 1) push("eval.sample_prompts", "sample_prompts must be >= 1");
  if (cfg.eval.sample_max_len < 1) push("eval.sample_max_len", "sample_max_len must be >= 1");
  for (const auto& metric : cfg.eval.judge_metrics) {
    if (metric != "BS" && metric != "CE" && metric != "LS") {
      push("eval.judge_metrics", "unknown metric '" + metric + "'");
    }
  }
  return report;
}

// ----------------------------------------------------------------------------
// Workspace
// ----------------------------------------------------------------------------

Workspace::Workspace(std::filesystem::path root, std::string category)
    : root_(std::move(root)), category_(std::move(category)) {
  std::filesystem::create_directories(root_);
  lock_path_ = root_ / ".lock";
  int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw DataError("WorkspaceLocked",
                    "lock file exists (another command running?): " + lock_path_.string());
  }
  std::string pid = "pid " + std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

Workspace::~Workspace() {
  std::error_code ec;
  std::filesystem::remove(lock_path_, ec);
}

std::filesystem::path Workspace::stage_dir(std::string_view stage) const {
  auto dir = category_dir() / stage;
  std::filesystem::create_directories(dir);
  return dir;
}

std::filesystem::path Workspace::resolve(const std::string& relative) const {
  std::filesystem::path p(relative);
  return p.is_absolute() ? p : root_ / p;
}

ModeAssignment make_assignment(const BackendSection& backend, const Workspace& ws) {
  BackendSpec debater = backend.active_spec();
  debater.temperature = backend.debater_temperature;
  BackendSpec referee = backend.active_spec();
  referee.temperature = backend.referee_temperature;

  CassetteOptions cassette;
  if (backend.cassette_mode == "record") cassette.mode = CassetteOptions::Mode::Record;
  if (backend.cassette_mode == "replay") cassette.mode = CassetteOptions::Mode::Replay;
  cassette.path = ws.resolve(backend.cassette_path);
  return ModeAssignment::make(debater, referee, cassette);
}

namespace {

CassetteOptions cassette_options(const BackendSection& backend, const Workspace& ws) {
  CassetteOptions cassette;
  if (backend.cassette_mode == "record") cassette.mode = CassetteOptions::Mode::Record;
  if (backend.cassette_mode == "replay") cassette.mode = CassetteOptions::Mode::Replay;
  cassette.path = ws.resolve(backend.cassette_path);
  return cassette;
}

void require_valid(const AppConfig& cfg) {
  auto report = validate_app(cfg);
  if (!report.ok()) throw ConfigError("invalid configuration:\n" + report.to_string());
}

std::vector<Topic> load_topics_file(const std::filesystem::path& path, const std::string& category) {
  std::vector<Topic> topics;
  for (const auto& line : read_lines(path)) {
    if (trim(line).empty()) continue;
    Json j = Json::parse(line);
    Topic t;
    t.id = j.at("id").get<std::int64_t>();
    t.category.name = j.value("category", category);
    t.text = j.at("text").get<std::string>();
    topics.push_back(std::move(t));
  }
  return topics;
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  try {
    Json j = Json::parse(read_file(path));
    return Vocabulary::from_json(j.at("tokens"));
  } catch (const Json::exception& e) {
    throw SchemaViolation("vocab file " + path.string() + ": " + e.what());
  }
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(12);
  ss << v;
  return ss.str();
}

}  // namespace

// ----------------------------------------------------------------------------
// Stages
// ----------------------------------------------------------------------------

void stage_topics(const AppConfig& cfg, const Workspace& ws) {
  require_valid(cfg);
  auto templates = PromptTemplates::load_or_init(ws.templates_dir());

  BackendSpec spec = cfg.backend.active_spec();
  spec.temperature = cfg.backend.debater_temperature;
  auto backend = make_backend(spec, cassette_options(cfg.backend, ws));

  auto topics = generate_topics(cfg.debate.category, cfg.debate.topics, *backend, templates);

  std::string body;
  for (const auto& t : topics) {
    body += Json{{"id", t.id}, {"category", t.category.name}, {"text", t.text}}.dump() + "\n";
  }
  write_file_atomic(ws.stage_dir("topics") / "topics.jsonl", body);
}

void stage_debate(const AppConfig& cfg, const Workspace& ws) {
  require_valid(cfg);
  auto templates = PromptTemplates::load_or_init(ws.templates_dir());
  auto topics = load_topics_file(ws.stage_dir("topics") / "topics.jsonl", cfg.debate.category.name);
  auto assignment = make_assignment(cfg.backend, ws);

  TranscriptStore store(ws.stage_dir("transcripts") / "transcripts.jsonl");
  RunSummary summary =
      run_category(cfg.debate, assignment, templates, topics, store, cfg.pipeline.max_seq_len);

  Json failures = Json::array();
  for (const auto& [topic_id, reason] : summary.failures) {
    failures.push_back(Json{{"topic_id", topic_id}, {"error", reason}});
  }
  Json j{{"attempted", summary.attempted}, {"succeeded", summary.succeeded},
         {"failed", summary.failed},       {"skipped", summary.skipped},
         {"statements", summary.statements}, {"failures", failures}};
  write_file_atomic(ws.stage_dir("transcripts") / "summary.json", j.dump(2) + "\n");
}

void stage_build_dataset(const AppConfig& cfg, const Workspace& ws) {
  require_valid(cfg);
  auto templates = PromptTemplates::load_or_init(ws.templates_dir());
  TranscriptStore store(ws.stage_dir("transcripts") / "transcripts.jsonl");
  auto transcripts = store.load_all();
  if (transcripts.empty()) {
    throw DataError("NoTranscripts", "transcript store is empty; run the debate stage first");
  }

  PairBuild build = build_pairs(std::move(transcripts), cfg.debate.bias_threshold,
                                cfg.pipeline.pair_cap, templates.pair_prompt);
  for (std::int64_t topic : build.empty_side_topics) {
    std::cerr << "EmptySide: topic " << topic << " contributed zero pairs\n";
  }

  std::vector<std::string> corpus;
  for (const auto& p : build.pairs) {
    corpus.push_back(p.prompt);
    corpus.push_back(p.chosen.statement.text);
    corpus.push_back(p.rejected.statement.text);
  }
  for (const auto& e : build.sft) {
    corpus.push_back(e.prompt);
    corpus.push_back(e.completion);
  }
  Vocabulary vocab = Vocabulary::build(corpus);

  auto dataset_dir = ws.stage_dir("dataset");
  Json manifest = export_dataset(build, cfg.debate.category.name, cfg.debate.digest(),
                                 cfg.pipeline.min_pairs, dataset_dir);
  write_file_atomic(dataset_dir / "vocab.json",
                    Json{{"format_version", 1}, {"tokens", vocab.to_json()}}.dump() + "\n");

  auto budget = enforce_budget(build, cfg.pipeline.min_pairs);
  if (!budget.ok) std::cerr << budget.to_string() << "\n";
}

void stage_train_rm(const AppConfig& cfg, const Workspace& ws) {
  require_valid(cfg);
  auto dataset_dir = ws.stage_dir("dataset");
  auto pairs = load_pairs(dataset_dir / "pairs.jsonl");
  if (static_cast<int>(pairs.size()) < cfg.pipeline.min_pairs) {
    throw PairBudgetShortfall("have " + std::to_string(pairs.size()) + " pairs, need " +
                              std::to_string(cfg.pipeline.min_pairs) +
                              " (override pipeline.min_pairs to proceed)");
  }
  Vocabulary vocab = load_vocab(dataset_dir / "vocab.json");

  std::vector<FeaturePair> featurized;
  featurized.reserve(pairs.size());
  for (const auto& p : pairs) {
    featurized.push_back(
        featurize_pair(vocab, p, cfg.pipeline.feature_dim, cfg.pipeline.max_seq_len));
  }

  RmTrainConfig train_cfg;
  train_cfg.lr = cfg.pipeline.rm_lr;
  train_cfg.batch = cfg.pipeline.rm_batch;
  train_cfg.epochs = cfg.pipeline.epochs;
  train_cfg.seed = derive_stream(cfg.debate.seed, "rm");
  RmTrainResult result = train_rm(cfg.pipeline.feature_dim, featurized, train_cfg);
  result.model.config_digest = cfg.debate.digest();

  auto rm_dir = ws.stage_dir("rm");
  result.model.save(rm_dir / "model.json");

  std::string csv = "batch,loss\n";
  for (std::size_t i = 0; i < result.loss_trajectory.size(); ++i) {
    csv += std::to_string(i) + "," + format_double(result.loss_trajectory[i]) + "\n";
  }
  write_file_atomic(rm_dir / "loss.csv", csv);

  Json summary{{"pairs", pairs.size()},
               {"initial_loss", result.initial_loss},
               {"final_loss", result.final_loss},
               {"train_accuracy", pairwise_accuracy(result.model, featurized)}};
  write_file_atomic(rm_dir / "summary.json", summary.dump(2) + "\n");
}

void stage_sft(const AppConfig& cfg, const Workspace& ws) {
  require_valid(cfg);
  auto dataset_dir = ws.stage_dir("dataset");
  auto examples = load_sft(dataset_dir / "sft.jsonl");
  if (examples.empty()) throw DataError("NoSftData", "sft.jsonl is empty");
  Vocabulary vocab = load_vocab(dataset_dir / "vocab.json");

  std::vector<SftExampleTok> tokenized;
  tokenized.reserve(examples.size());
  for (const auto& e : examples) {
    tokenized.push_back(sft_tokenize(vocab, e, cfg.pipeline.max_seq_len));
  }

  Policy policy(vocab, cfg.pipeline.context_width, cfg.pipeline.policy_rows);
  SftTrainResult result =
      sft_train(std::move(policy), tokenized, cfg.pipeline.sft_lr, cfg.pipeline.epochs,
                cfg.pipeline.sft_batch, derive_stream(cfg.debate.seed, "sft"));

  auto sft_dir = ws.stage_dir("sft");
  result.policy.save(sft_dir / "policy.json");
  std::string csv = "batch,nll\n";
  for (std::size_t i = 0; i < result.nll_trajectory.size(); ++i) {
    csv += std::to_string(i) + "," + format_double(result.nll_trajectory[i]) + "\n";
  }
  write_file_atomic(sft_dir / "loss.csv", csv);
  Json summary{{"examples", examples.size()},
               {"initial_nll", result.initial_nll},
               {"final_nll", result.final_nll}};
  write_file_atomic(sft_dir / "summary.json", summary.dump(2) + "\n");
}

namespace {

std::vector<TokenSequence> unique_prompts(const std::vector<PreferencePair>& pairs,
                                          const Vocabulary& vocab, int max_seq_len) {
  std::vector<TokenSequence> prompts;
  std::set<std::string> seen;
  for (const auto& p : pairs) {
    if (seen.insert(p.prompt).second) {
      prompts.push_back(truncate_right(vocab.encode(p.prompt), static_cast<std::size_t>(max_seq_len)));
    }
  }
  return prompts;
}

std::string ppo_report_csv(const std::vector<IterationStats>& report) {
  std::string csv = "iter,mean_reward,mean_kl,j_hat,clip_frac\n";
  for (const auto& row : report) {
    csv += std::to_string(row.iteration) + "," + format_double(row.stats.mean_reward) + "," +
           format_double(row.stats.mean_kl) + "," + format_double(row.stats.j_hat) + "," +
           format_double(row.stats.clip_frac) + "\n";
  }
  return csv;
}

}  // namespace

void stage_ppo(const AppConfig& cfg, const Workspace& ws) {
  require_valid(cfg);
  Policy sft_policy = Policy::load(ws.stage_dir("sft") / "policy.json");
  RewardModel rm = RewardModel::load(ws.stage_dir("rm") / "model.json");
  auto pairs = load_pairs(ws.stage_dir("dataset") / "pairs.jsonl");
  auto prompts = unique_prompts(pairs, sft_policy.vocab(), cfg.pipeline.max_seq_len);
  if (prompts.empty()) throw DataError("NoPrompts", "no prompts available for rollouts");

  RewardFn reward = [&rm](const TokenSequence& x, const TokenSequence& y) {
    return rm.score(x, y);
  };
  PpoTrainResult result = train_ppo(sft_policy, reward, prompts, cfg.merged_ppo());

  auto ppo_dir = ws.stage_dir("ppo");
  result.policy.save(ppo_dir / "policy.json");
  write_file_atomic(ppo_dir / "report.csv", ppo_report_csv(result.report));
  Json summary{{"iterations", result.report.size()},
               {"final_mean_reward",
                result.report.empty() ? 0.0 : result.report.back().stats.mean_reward},
               {"final_mean_kl", result.report.empty() ? 0.0 : result.report.back().stats.mean_kl}};
  write_file_atomic(ppo_dir / "summary.json", summary.dump(2) + "\n");
}

namespace {

RatingMatrix load_ratings_csv(const std::filesystem::path& path) {
  RatingMatrix matrix;
  for (const auto& line : read_lines(path)) {
    if (trim(line).empty()) continue;
    std::vector<int> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stoi(trim(cell)));
    matrix.counts.push_back(std::move(row));
  }
  if (!matrix.counts.empty()) {
    int sum = 0;
    for (int v : matrix.counts.front()) sum += v;
    matrix.raters_per_item = sum;
  }
  return matrix;
}

}  // namespace

void stage_eval(const AppConfig& cfg, const Workspace& ws) {
  require_valid(cfg);
  auto templates = PromptTemplates::load_or_init(ws.templates_dir());
  Policy policy = Policy::load(ws.stage_dir("ppo") / "policy.json");
  auto eval_dir = ws.stage_dir("eval");
  Json summary = Json::object();

  // BBQ accuracy, repeated; answers come from the configured answerer.
  if (!cfg.eval.bbq_path.empty()) {
    auto examples = load_bbq(ws.resolve(cfg.eval.bbq_path));
    std::shared_ptr<ChatBackend> answer_backend;
    Answerer answerer;
    if (cfg.eval.answerer == "gold") {
      answerer = [](const BbqExample& e) { return e.gold; };
    } else {
      BackendSpec spec = cfg.eval.judge_spec.value_or(cfg.backend.active_spec());
      spec.temperature = 0.0;
      answer_backend = make_backend(spec, cassette_options(cfg.backend, ws));
      answerer = backend_answerer(*answer_backend, templates);
    }

    std::string csv = "repeat,context_kind,question_kind,correct,total,accuracy\n";
    std::vector<double> overall;
    Json cells = Json::array();
    for (int repeat = 0; repeat < cfg.eval.repeats; ++repeat) {
      BbqAccuracy acc = bbq_accuracy(examples, answerer);
      overall.push_back(acc.overall.accuracy());
      for (int c = 0; c < 2; ++c) {
        for (int q = 0; q < 2; ++q) {
          const BbqCell& cell = acc.cells[c][q];
          csv += std::to_string(repeat) + "," +
                 context_kind_name(c == 0 ? ContextKind::Ambiguous : ContextKind::Disambiguated) +
                 "," +
                 question_kind_name(q == 0 ? QuestionKind::Negative : QuestionKind::NonNegative) +
                 "," + std::to_string(cell.correct) + "," + std::to_string(cell.total) + "," +
                 format_double(cell.accuracy()) + "\n";
        }
      }
      csv += std::to_string(repeat) + ",all,all," + std::to_string(acc.overall.correct) + "," +
             std::to_string(acc.overall.total) + "," + format_double(acc.overall.accuracy()) + "\n";
    }
    write_file_atomic(eval_dir / "bbq_accuracy.csv", csv);
    MeanStd ms = mean_std(overall);
    summary["bbq"] = Json{{"examples", examples.size()},
                          {"repeats", cfg.eval.repeats},
                          {"overall_mean", ms.mean},
                          {"overall_std", ms.std}};
  }

  // Judge scoring of sampled policy responses.
  auto pairs = load_pairs(ws.stage_dir("dataset") / "pairs.jsonl");
  auto prompts = unique_prompts(pairs, policy.vocab(), cfg.pipeline.max_seq_len);
  std::vector<std::string> responses;
  std::string responses_jsonl;
  for (int i = 0; i < cfg.eval.sample_prompts && i < static_cast<int>(prompts.size()); ++i) {
    Rng rng(derive_stream(cfg.debate.seed, "eval_sample", static_cast<std::uint64_t>(i)));
    TokenSequence y = sample(policy, prompts[static_cast<std::size_t>(i)],
                             cfg.eval.sample_max_len, 1.0, rng);
    std::string text = policy.vocab().decode(y);
    if (text.empty()) text = "<empty>";
    responses_jsonl += Json{{"prompt_index", i}, {"response", text}}.dump() + "\n";
    responses.push_back(std::move(text));
  }
  write_file_atomic(eval_dir / "responses.jsonl", responses_jsonl);

  if (!responses.empty() && !cfg.eval.judge_metrics.empty()) {
    BackendSpec judge_spec = cfg.eval.judge_spec.value_or(cfg.backend.active_spec());
    judge_spec.temperature = 0.0;
    auto judge = make_backend(judge_spec, cassette_options(cfg.backend, ws));

    std::string csv = "metric,repeat,raw,normalized\n";
    Json judge_summary = Json::object();
    for (const auto& metric_name : cfg.eval.judge_metrics) {
      JudgeMetric metric = metric_name == "CE"   ? JudgeMetric::CE
                           : metric_name == "LS" ? JudgeMetric::LS
                                                 : JudgeMetric::BS;
      std::vector<double> raws;
      int missing = 0;
      for (int repeat = 0; repeat < cfg.eval.repeats; ++repeat) {
        JudgeOutcome outcome =
            judge_scores(responses, *judge, judge_spec.digest(), metric, templates);
        missing += outcome.missing;
        for (const auto& s : outcome.scores) {
          raws.push_back(static_cast<double>(s.raw));
          csv += metric_name + "," + std::to_string(repeat) + "," + std::to_string(s.raw) + "," +
                 format_double(s.normalized) + "\n";
        }
      }
      MeanStd ms = mean_std(raws);
      judge_summary[metric_name] = Json{{"mean_raw", ms.mean},
                                        {"std_raw", ms.std},
                                        {"mean_normalized", ms.mean * 10.0},
                                        {"std_normalized", ms.std * 10.0},
                                        {"count", raws.size()},
                                        {"missing", missing}};
    }
    write_file_atomic(eval_dir / "judge_scores.csv", csv);
    summary["judge"] = judge_summary;
  }

  if (!cfg.eval.ratings_csv.empty()) {
    RatingMatrix matrix = load_ratings_csv(ws.resolve(cfg.eval.ratings_csv));
    summary["fleiss_kappa"] = fleiss_kappa(matrix);
  }

  write_file_atomic(eval_dir / "summary.json", summary.dump(2) + "\n");
}

void stage_report(const AppConfig& cfg, const Workspace& ws) {
  require_valid(cfg);
  auto eval_dir = ws.stage_dir("eval");
  auto report_dir = ws.stage_dir("report");

  Json eval_summary;
  try {
    eval_summary = Json::parse(read_file(eval_dir / "summary.json"));
  } catch (const Json::exception& e) {
    throw SchemaViolation(std::string("eval summary: ") + e.what());
  }

  std::ostringstream text;
  text << "category: " << cfg.debate.category.name << "\n";

  if (eval_summary.contains("bbq")) {
    const auto& bbq = eval_summary["bbq"];
    text << "bbq accuracy: " << format_double(bbq["overall_mean"].get<double>()) << " +/- "
         << format_double(bbq["overall_std"].get<double>()) << " over "
         << bbq["repeats"].get<int>() << " repeats (" << bbq["examples"].get<std::size_t>()
         << " examples)\n";
    std::string accuracy_csv = "scope,mean,std\n";
    accuracy_csv += "overall," + format_double(bbq["overall_mean"].get<double>()) + "," +
                    format_double(bbq["overall_std"].get<double>()) + "\n";
    write_file_atomic(report_dir / "accuracy.csv", accuracy_csv);
  }

  if (eval_summary.contains("judge")) {
    std::string judge_csv = "metric,mean_raw,std_raw,mean_normalized,std_normalized,count,missing\n";
    for (auto it = eval_summary["judge"].begin(); it != eval_summary["judge"].end(); ++it) {
      const auto& v = it.value();
      judge_csv += it.key() + "," + format_double(v["mean_raw"].get<double>()) + "," +
                   format_double(v["std_raw"].get<double>()) + "," +
                   format_double(v["mean_normalized"].get<double>()) + "," +
                   format_double(v["std_normalized"].get<double>()) + "," +
                   std::to_string(v["count"].get<std::size_t>()) + "," +
                   std::to_string(v["missing"].get<int>()) + "\n";
      text << "judge " << it.key() << ": " << format_double(v["mean_normalized"].get<double>())
           << " +/- " << format_double(v["std_normalized"].get<double>()) << " (normalized, n="
           << v["count"].get<std::size_t>() << ")\n";
    }
    write_file_atomic(report_dir / "judge.csv", judge_csv);
  }

  if (eval_summary.contains("fleiss_kappa")) {
    text << "fleiss kappa: " << format_double(eval_summary["fleiss_kappa"].get<double>()) << "\n";
  }

  auto ppo_csv_path = ws.stage_dir("ppo") / "report.csv";
  if (std::filesystem::exists(ppo_csv_path)) {
    write_file_atomic(report_dir / "ppo_curve.csv", read_file(ppo_csv_path));
    auto lines = read_lines(ppo_csv_path);
    if (lines.size() > 1) text << "ppo iterations: " << lines.size() - 1 << " (see ppo_curve.csv)\n";
  }

  write_file_atomic(report_dir / "summary.txt", text.str());
}

// ----------------------------------------------------------------------------
// Sweep: one-factor-at-a-time over the ablation grid. Each cell runs the
// debate -> dataset -> rm -> sft -> ppo chain at the cell's settings and
// contributes one report row.
// ----------------------------------------------------------------------------

namespace {

struct SweepCell {
  std::string axis;
  int value = 0;
  int roles = 0;
  int rounds = 0;
  int pairs = 0;
  int topics = 0;
};

struct SweepRow {
  SweepCell cell;
  int pairs_built = 0;
  int pairs_used = 0;
  double rm_accuracy = 0.0;
  double rm_final_loss = 0.0;
  double sft_final_nll = 0.0;
  double ppo_final_reward = 0.0;
  double ppo_final_kl = 0.0;
  double ppo_j_hat = 0.0;
};

std::vector<RoleSpec> synth_roles(int n, const std::string& category) {
  std::vector<RoleSpec> roles;
  for (int i = 1; i <= n; ++i) {
    roles.push_back({"Debater " + std::to_string(i),
                     "Participant " + std::to_string(i) + " with a distinct " + category +
                         " background."});
  }
  return roles;
}

SweepRow run_sweep_cell(const AppConfig& cfg, const Workspace& ws, const SweepCell& cell,
                        std::uint64_t cell_index) {
  AppConfig cell_cfg = cfg;
  cell_cfg.debate.roles = synth_roles(cell.roles, cfg.debate.category.name);
  cell_cfg.debate.rounds = cell.rounds;
  cell_cfg.debate.topics = cell.topics;
  cell_cfg.debate.seed = derive_stream(cfg.debate.seed, "sweep", cell_index);

  auto templates = PromptTemplates::load_or_init(ws.templates_dir());
  auto cell_dir = ws.stage_dir("sweep") / (cell.axis + "_" + std::to_string(cell.value));
  std::filesystem::create_directories(cell_dir);

  auto assignment = make_assignment(cell_cfg.backend, ws);
  BackendSpec topic_spec = cell_cfg.backend.active_spec();
  topic_spec.temperature = cell_cfg.backend.debater_temperature;
  auto topic_backend = make_backend(topic_spec, cassette_options(cell_cfg.backend, ws));

  auto topics =
      generate_topics(cell_cfg.debate.category, cell_cfg.debate.topics, *topic_backend, templates);

  std::filesystem::remove(cell_dir / "transcripts.jsonl");
  TranscriptStore store(cell_dir / "transcripts.jsonl");
  run_category(cell_cfg.debate, assignment, templates, topics, store,
               cell_cfg.pipeline.max_seq_len);

  PairBuild build = build_pairs(store.load_all(), cell_cfg.debate.bias_threshold,
                                cell_cfg.pipeline.pair_cap, templates.pair_prompt);

  SweepRow row;
  row.cell = cell;
  row.pairs_built = static_cast<int>(build.pairs.size());
  if (static_cast<int>(build.pairs.size()) > cell.pairs) {
    build.pairs.resize(static_cast<std::size_t>(cell.pairs));
  }
  row.pairs_used = static_cast<int>(build.pairs.size());
  if (build.pairs.empty() || build.sft.empty()) return row;

  std::vector<std::string> corpus;
  for (const auto& p : build.pairs) {
    corpus.push_back(p.prompt);
    corpus.push_back(p.chosen.statement.text);
    corpus.push_back(p.rejected.statement.text);
  }
  for (const auto& e : build.sft) {
    corpus.push_back(e.prompt);
    corpus.push_back(e.completion);
  }
  Vocabulary vocab = Vocabulary::build(corpus);

  std::vector<FeaturePair> featurized;
  for (const auto& p : build.pairs) {
    featurized.push_back(
        featurize_pair(vocab, p, cell_cfg.pipeline.feature_dim, cell_cfg.pipeline.max_seq_len));
  }
  RmTrainConfig rm_cfg{cell_cfg.pipeline.rm_lr, cell_cfg.pipeline.rm_batch,
                       cell_cfg.pipeline.epochs, derive_stream(cell_cfg.debate.seed, "rm")};
  RmTrainResult rm = train_rm(cell_cfg.pipeline.feature_dim, featurized, rm_cfg);
  row.rm_accuracy = pairwise_accuracy(rm.model, featurized);
  row.rm_final_loss = rm.final_loss;

  std::vector<SftExampleTok> tokenized;
  for (const auto& e : build.sft) {
    tokenized.push_back(sft_tokenize(vocab, e, cell_cfg.pipeline.max_seq_len));
  }
  Policy policy(vocab, cell_cfg.pipeline.context_width, cell_cfg.pipeline.policy_rows);
  SftTrainResult sft = sft_train(std::move(policy), tokenized, cell_cfg.pipeline.sft_lr,
                                 cell_cfg.pipeline.epochs, cell_cfg.pipeline.sft_batch,
                                 derive_stream(cell_cfg.debate.seed, "sft"));
  row.sft_final_nll = sft.final_nll;

  std::vector<TokenSequence> prompts;
  std::set<std::string> seen;
  for (const auto& p : build.pairs) {
    if (seen.insert(p.prompt).second) {
      prompts.push_back(truncate_right(vocab.encode(p.prompt),
                                       static_cast<std::size_t>(cell_cfg.pipeline.max_seq_len)));
    }
  }
  RewardFn reward = [&rm](const TokenSequence& x, const TokenSequence& y) {
    return rm.model.score(x, y);
  };
  PpoTrainResult ppo = train_ppo(sft.policy, reward, prompts, cell_cfg.merged_ppo());
  if (!ppo.report.empty()) {
    row.ppo_final_reward = ppo.report.back().stats.mean_reward;
    row.ppo_final_kl = ppo.report.back().stats.mean_kl;
    row.ppo_j_hat = ppo.report.back().stats.j_hat;
  }
  return row;
}

}  // namespace

void stage_sweep(const AppConfig& cfg, const Workspace& ws) {
  require_valid(cfg);
  const SweepSection& sweep = cfg.sweep;

  std::vector<SweepCell> cells;
  auto add_axis = [&](const std::string& axis, const std::vector<int>& values) {
    for (int v : values) {
      SweepCell cell;
      cell.axis = axis;
      cell.value = v;
      cell.roles = axis == "roles" ? v : sweep.base_roles;
      cell.rounds = axis == "rounds" ? v : sweep.base_rounds;
      cell.pairs = axis == "pairs" ? v : sweep.base_pairs;
      cell.topics = axis == "topics" ? v : sweep.base_topics;
      cells.push_back(cell);
    }
  };
  add_axis("roles", sweep.roles);
  add_axis("rounds", sweep.rounds);
  add_axis("pairs", sweep.pairs);
  add_axis("topics", sweep.topics);

  std::string csv =
      "axis,value,roles,rounds,pairs,topics,pairs_built,pairs_used,rm_accuracy,rm_final_loss,"
      "sft_final_nll,ppo_final_reward,ppo_final_kl,ppo_j_hat\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    SweepRow row = run_sweep_cell(cfg, ws, cells[i], i);
    csv += row.cell.axis + "," + std::to_string(row.cell.value) + "," +
           std::to_string(row.cell.roles) + "," + std::to_string(row.cell.rounds) + "," +
           std::to_string(row.cell.pairs) + "," + std::to_string(row.cell.topics) + "," +
           std::to_string(row.pairs_built) + "," + std::to_string(row.pairs_used) + "," +
           format_double(row.rm_accuracy) + "," + format_double(row.rm_final_loss) + "," +
           format_double(row.sft_final_nll) + "," + format_double(row.ppo_final_reward) + "," +
           format_double(row.ppo_final_kl) + "," + format_double(row.ppo_j_hat) + "\n";
  }
  write_file_atomic(ws.stage_dir("sweep") / "report.csv", csv);
}

// ----------------------------------------------------------------------------
// Error mapping
// ----------------------------------------------------------------------------

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const BackendError*>(&e)) return 3;
  if (dynamic_cast<const DataError*>(&e)) return 4;
  return 1;
}

Json error_record(const std::exception& e, const std::string& stage) {
  std::string kind = "InternalError";
  if (const auto* err = dynamic_cast<const RldfError*>(&e)) kind = err->kind();
  return Json{{"error", kind}, {"stage", stage}, {"message", e.what()}};
}

}  // namespace rldf
