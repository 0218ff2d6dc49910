#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "rldf/core.hpp"
#include "rldf/dataset.hpp"

namespace rldf {

// Tabular autoregressive categorical model: a logit table whose rows are
// hashed context windows of the last `context_width` tokens and whose
// columns are the vocabulary.
class Policy {
 public:
  Policy() = default;
  Policy(Vocabulary vocab, int context_width, std::int32_t rows);

  const Vocabulary& vocab() const { return vocab_; }
  int context_width() const { return context_width_; }
  std::int32_t rows() const { return rows_; }
  std::int32_t vocab_size() const { return vocab_.size(); }

  // Row for the context that ends with the given tokens; short contexts are
  // left-padded with a sentinel.
  std::int32_t row_of(std::span<const std::int32_t> context) const;

  double logit(std::int32_t row, std::int32_t token) const;
  void add_logit(std::int32_t row, std::int32_t token, double delta);

  std::vector<double> row_log_probs(std::int32_t row) const;
  std::vector<double> row_probs(std::int32_t row) const;

  bool same_shape(const Policy& other) const;

  Json to_json() const;
  static Policy from_json(const Json& j);
  void save(const std::filesystem::path& path) const;
  static Policy load(const std::filesystem::path& path);

 private:
  Vocabulary vocab_;
  int context_width_ = 2;
  std::int32_t rows_ = 1;
  std::vector<double> logits_;  // rows_ x vocab_size
};

struct SftExampleTok {
  TokenSequence prompt;
  TokenSequence completion;  // ends with the end-of-sequence token
};

SftExampleTok sft_tokenize(const Vocabulary& vocab, const SftExample& example, int max_seq_len);

struct SftTrainResult {
  Policy policy;
  std::vector<double> nll_trajectory;  // per-batch mean token NLL
  double initial_nll = 0.0;
  double final_nll = 0.0;
};

// Minibatch gradient ascent on mean token log-likelihood of completions.
SftTrainResult sft_train(Policy policy, std::span<const SftExampleTok> examples, double lr,
                         int epochs, int batch, std::uint64_t seed);

// Mean token NLL of the examples under the policy.
double corpus_nll(const Policy& policy, std::span<const SftExampleTok> examples);

// Autoregressive draw; stops at the end token or max_len. temperature 0 is
// argmax with ties broken toward the lowest token id.
TokenSequence sample(const Policy& policy, const TokenSequence& x, int max_len, double temperature,
                     Rng& rng);

struct LogprobResult {
  std::vector<double> per_token;
  double total = 0.0;
};

LogprobResult logprob(const Policy& policy, const TokenSequence& x, const TokenSequence& y);

// Exact KL(policy || ref) for the distribution at one table row.
double state_kl(const Policy& policy, const Policy& ref, std::int32_t row);

// Mean exact KL over the given context windows.
double kl_divergence(const Policy& policy, const Policy& ref,
                     std::span<const std::vector<std::int32_t>> states);

}  // namespace rldf
