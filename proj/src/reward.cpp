#include "rldf/reward.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace rldf {

namespace {

constexpr std::uint64_t kUnigramTag = 0x75;  // 'u'
constexpr std::uint64_t kBigramTag = 0x62;   // 'b'
constexpr std::uint64_t kPromptTag = 0x70;   // 'p'

inline std::int32_t bucket(std::span<const std::int32_t> ids, std::uint64_t tag, std::int32_t dim) {
  return static_cast<std::int32_t>(fnv1a64(ids, tag) % static_cast<std::uint64_t>(dim));
}

}  // namespace

FeatureVector featurize(const TokenSequence& x, const TokenSequence& y, std::int32_t dim) {
  if (dim < 2) throw std::invalid_argument("featurize: dim must be >= 2");
  std::map<std::int32_t, double> counts;
  for (std::int32_t t : y.tokens) {
    counts[bucket(std::span(&t, 1), kUnigramTag, dim)] += 1.0;
  }
  for (std::size_t i = 0; i + 1 < y.tokens.size(); ++i) {
    counts[bucket(std::span(y.tokens.data() + i, 2), kBigramTag, dim)] += 1.0;
  }
  for (std::int32_t t : x.tokens) {
    counts[bucket(std::span(&t, 1), kPromptTag, dim)] += 1.0;
  }
  FeatureVector out;
  out.dim = dim;
  out.indices.reserve(counts.size());
  out.values.reserve(counts.size());
  for (const auto& [index, value] : counts) {
    out.indices.push_back(index);
    out.values.push_back(value);
  }
  return out;
}

RewardModel RewardModel::zeros(std::int32_t dim) {
  RewardModel rm;
  rm.dim = dim;
  rm.theta.assign(static_cast<std::size_t>(dim), 0.0);
  return rm;
}

double RewardModel::score(const FeatureVector& features) const {
  if (features.dim != dim) throw std::invalid_argument("RewardModel::score: dim mismatch");
  double s = bias;
  for (std::size_t i = 0; i < features.indices.size(); ++i) {
    s += theta[static_cast<std::size_t>(features.indices[i])] * features.values[i];
  }
  return s;
}

double RewardModel::score(const TokenSequence& x, const TokenSequence& y) const {
  return score(featurize(x, y, dim));
}

Json RewardModel::to_json() const {
  Json sparse = Json::array();
  for (std::int32_t i = 0; i < dim; ++i) {
    double v = theta[static_cast<std::size_t>(i)];
    if (v != 0.0) sparse.push_back(Json::array({i, v}));
  }
  return Json{{"format_version", 1},
              {"dim", dim},
              {"bias", bias},
              {"theta", sparse},
              {"config_digest", config_digest}};
}

RewardModel RewardModel::from_json(const Json& j) {
  RewardModel rm = zeros(j.at("dim").get<std::int32_t>());
  rm.bias = j.value("bias", 0.0);
  rm.config_digest = j.value("config_digest", std::string{});
  for (const auto& entry : j.at("theta")) {
    rm.theta.at(entry.at(0).get<std::size_t>()) = entry.at(1).get<double>();
  }
  return rm;
}

void RewardModel::save(const std::filesystem::path& path) const {
  write_file_atomic(path, to_json().dump() + "\n");
}

RewardModel RewardModel::load(const std::filesystem::path& path) {
  try {
    return from_json(Json::parse(read_file(path)));
  } catch (const Json::exception& e) {
    throw SchemaViolation("reward model " + path.string() + ": " + e.what());
  }
}

FeaturePair featurize_pair(const Vocabulary& vocab, const PreferencePair& pair, std::int32_t dim,
                           int max_seq_len) {
  auto cap = static_cast<std::size_t>(max_seq_len);
  TokenSequence x = truncate_right(vocab.encode(pair.prompt), cap);
  TokenSequence good = truncate_right(vocab.encode(pair.chosen.statement.text), cap);
  TokenSequence bad = truncate_right(vocab.encode(pair.rejected.statement.text), cap);
  return {featurize(x, good, dim), featurize(x, bad, dim)};
}

RankingLossResult ranking_loss(const RewardModel& rm, std::span<const FeaturePair> batch) {
  if (batch.empty()) throw std::invalid_argument("ranking_loss: empty batch");
  RankingLossResult result;
  result.grad_theta.assign(static_cast<std::size_t>(rm.dim), 0.0);

  double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& pair : batch) {
    double margin = rm.score(pair.good) - rm.score(pair.bad);
    result.loss += neg_log_sigmoid(margin) * inv;
    // d/dtheta [-ln sigma(margin)] = -(1 - sigma(margin)) * (f_good - f_bad)
    double coef = -(1.0 - sigmoid(margin)) * inv;
    for (std::size_t i = 0; i < pair.good.indices.size(); ++i) {
      result.grad_theta[static_cast<std::size_t>(pair.good.indices[i])] += coef * pair.good.values[i];
    }
    for (std::size_t i = 0; i < pair.bad.indices.size(); ++i) {
      result.grad_theta[static_cast<std::size_t>(pair.bad.indices[i])] -= coef * pair.bad.values[i];
    }
  }
  if (!std::isfinite(result.loss)) throw NonFiniteLoss("ranking loss is not finite");
  return result;
}

namespace {

double full_set_loss(const RewardModel& rm, std::span<const FeaturePair> pairs) {
  double total = 0.0;
  for (const auto& pair : pairs) {
    total += neg_log_sigmoid(rm.score(pair.good) - rm.score(pair.bad));
  }
  return total / static_cast<double>(pairs.size());
}

}  // namespace

RmTrainResult train_rm(std::int32_t dim, std::span<const FeaturePair> pairs,
                       const RmTrainConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("train_rm: need at least one pair");
  RmTrainResult result;
  result.model = RewardModel::zeros(dim);
  result.initial_loss = full_set_loss(result.model, pairs);

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_stream(cfg.seed, "rm_shuffle", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    std::size_t batch_size = static_cast<std::size_t>(std::max(1, cfg.batch));
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::size_t count = std::min(batch_size, order.size() - start);
      std::vector<FeaturePair> batch;
      batch.reserve(count);
      for (std::size_t i = 0; i < count; ++i) batch.push_back(pairs[order[start + i]]);

      RankingLossResult step;
      try {
        step = ranking_loss(result.model, batch);
      } catch (const NonFiniteLoss&) {
        // Abort with the last good parameters.
        result.final_loss = full_set_loss(result.model, pairs);
        return result;
      }
      result.loss_trajectory.push_back(step.loss);
      for (std::int32_t i = 0; i < dim; ++i) {
        result.model.theta[static_cast<std::size_t>(i)] -= cfg.lr * step.grad_theta[static_cast<std::size_t>(i)];
      }
    }
  }
  result.final_loss = full_set_loss(result.model, pairs);
  return result;
}

double pairwise_accuracy(const RewardModel& rm, std::span<const FeaturePair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("pairwise_accuracy: empty pairs");
  double correct = 0.0;
  for (const auto& pair : pairs) {
    double margin = rm.score(pair.good) - rm.score(pair.bad);
    if (margin > 0) {
      correct += 1.0;
    } else if (margin == 0) {
      correct += 0.5;
    }
  }
  return correct / static_cast<double>(pairs.size());
}

}  // namespace rldf
