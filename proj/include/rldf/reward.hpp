#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rldf/core.hpp"
#include "rldf/dataset.hpp"

namespace rldf {

// Sparse hashed feature counts: response unigrams and bigrams plus
// prompt-tagged unigrams, each bucketed into [0, dim).
struct FeatureVector {
  std::vector<std::int32_t> indices;  // strictly increasing
  std::vector<double> values;
  std::int32_t dim = 0;
};

FeatureVector featurize(const TokenSequence& x, const TokenSequence& y, std::int32_t dim);

// Linear scalar model: score = theta . features + bias.
struct RewardModel {
  std::int32_t dim = 0;
  std::vector<double> theta;
  double bias = 0.0;
  std::string config_digest;

  static RewardModel zeros(std::int32_t dim);
  double score(const FeatureVector& features) const;
  double score(const TokenSequence& x, const TokenSequence& y) const;

  Json to_json() const;
  static RewardModel from_json(const Json& j);
  void save(const std::filesystem::path& path) const;
  static RewardModel load(const std::filesystem::path& path);
};

struct FeaturePair {
  FeatureVector good;
  FeatureVector bad;
};

FeaturePair featurize_pair(const Vocabulary& vocab, const PreferencePair& pair, std::int32_t dim,
                           int max_seq_len);

struct RankingLossResult {
  double loss = 0.0;
  std::vector<double> grad_theta;  // dense, length dim
  double grad_bias = 0.0;          // identically zero: bias cancels in the margin
};

// Mean over the batch of -ln sigma(R(good) - R(bad)), with its gradient.
RankingLossResult ranking_loss(const RewardModel& rm, std::span<const FeaturePair> batch);

struct RmTrainConfig {
  double lr = 3e-5;
  int batch = 32;
  int epochs = 1;
  std::uint64_t seed = 0;
};

struct RmTrainResult {
  RewardModel model;
  std::vector<double> loss_trajectory;  // per-batch mean loss
  double initial_loss = 0.0;            // full-set mean loss before training
  double final_loss = 0.0;              // full-set mean loss after training
};

RmTrainResult train_rm(std::int32_t dim, std::span<const FeaturePair> pairs,
                       const RmTrainConfig& cfg);

// Fraction of pairs ranked correctly (margin > 0); ties count 0.5.
double pairwise_accuracy(const RewardModel& rm, std::span<const FeaturePair> pairs);

}  // namespace rldf
