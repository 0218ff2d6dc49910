#pragma once

#include <functional>
#include <span>
#include <vector>

#include "rldf/policy.hpp"

namespace rldf {

struct PpoConfig {
  double beta = 0.0;        // KL coefficient
  double clip_eps = 0.2;
  double gamma = 1.0;
  double lam = 0.95;        // GAE lambda
  double lr = 5e-6;
  int batch = 4;            // rollouts per minibatch
  int iterations = 20;
  int rollouts_per_iter = 32;
  int max_response_len = 32;
  double critic_lr = 0.1;
  bool center_rewards = false;
  std::uint64_t seed = 0;

  Json to_json() const;
  static PpoConfig from_json(const Json& j);
};

ValidationReport validate_ppo(const PpoConfig& cfg);

// One sampled response with everything the update step needs. Shaped
// per-token rewards are -beta * (ln pi - ln ref) at each step, with the
// terminal reward added on the last one.
struct Rollout {
  TokenSequence prompt;
  TokenSequence response;
  std::vector<std::int32_t> rows;     // state row per emitted token
  std::vector<double> logp_behavior;  // under the policy that sampled
  std::vector<double> logp_ref;
  double terminal_reward = 0.0;
  std::vector<double> shaped;
  std::vector<double> returns;
  std::vector<double> advantages;
  double seq_kl_exact = 0.0;  // sum over steps of exact per-state KL to ref
};

// Tabular value baseline over the policy's state rows.
struct Critic {
  std::vector<double> values;

  explicit Critic(std::int32_t rows = 1) : values(static_cast<std::size_t>(rows), 0.0) {}
  double value(std::int32_t row) const { return values[static_cast<std::size_t>(row)]; }
};

using RewardFn = std::function<double(const TokenSequence& x, const TokenSequence& y)>;

std::vector<Rollout> collect_rollouts(const Policy& policy, const Policy& ref,
                                      const RewardFn& reward, std::span<const TokenSequence> prompts,
                                      const PpoConfig& cfg, std::uint64_t iteration,
                                      const Critic& critic);

struct UpdateStats {
  double mean_reward = 0.0;
  double mean_kl = 0.0;   // exact KL to reference, nats per token
  double j_hat = 0.0;     // mean terminal reward - beta * mean sequence KL
  double clip_frac = 0.0;
};

// One clipped-surrogate epoch over the rollouts; the critic regresses toward
// the returns. Only the policy moves when all advantages are zero.
UpdateStats ppo_update(Policy& policy, Critic& critic, std::span<const Rollout> rollouts,
                       const PpoConfig& cfg);

struct IterationStats {
  int iteration = 0;
  UpdateStats stats;
};

struct PpoTrainResult {
  Policy policy;
  std::vector<IterationStats> report;
};

// Freezes a reference copy of the SFT policy, then alternates rollout
// collection and updates. Aborts to the last good policy on a non-finite
// update.
PpoTrainResult train_ppo(const Policy& sft_policy, const RewardFn& reward,
                         std::span<const TokenSequence> prompts, const PpoConfig& cfg);

}  // namespace rldf
