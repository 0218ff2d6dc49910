#include "rldf/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace rldf {

Json PpoConfig::to_json() const {
  return Json{{"beta", beta},
              {"clip_eps", clip_eps},
              {"gamma", gamma},
              {"lam", lam},
              {"lr", lr},
              {"batch", batch},
              {"iterations", iterations},
              {"rollouts_per_iter", rollouts_per_iter},
              {"max_response_len", max_response_len},
              {"critic_lr", critic_lr},
              {"center_rewards", center_rewards},
              {"seed", seed}};
}

PpoConfig PpoConfig::from_json(const Json& j) {
  PpoConfig cfg;
  cfg.beta = j.value("beta", cfg.beta);
  cfg.clip_eps = j.value("clip_eps", cfg.clip_eps);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.lam = j.value("lam", cfg.lam);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.rollouts_per_iter = j.value("rollouts_per_iter", cfg.rollouts_per_iter);
  cfg.max_response_len = j.value("max_response_len", cfg.max_response_len);
  cfg.critic_lr = j.value("critic_lr", cfg.critic_lr);
  cfg.center_rewards = j.value("center_rewards", cfg.center_rewards);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

ValidationReport validate_ppo(const PpoConfig& cfg) {
  ValidationReport report;
  auto range = [&](const std::string& field, const std::string& message) {
    report.violations.push_back({"ppo." + field, "RangeViolation", message});
  };
  if (!(cfg.beta >= 0)) range("beta", "beta must be >= 0");
  if (!(cfg.clip_eps > 0 && cfg.clip_eps < 1)) range("clip_eps", "clip_eps must be in (0,1)");
  if (!(cfg.gamma >= 0 && cfg.gamma <= 1)) range("gamma", "gamma must be in [0,1]");
  if (!(cfg.lam >= 0 && cfg.lam <= 1)) range("lam", "lam must be in [0,1]");
  if (!(cfg.lr > 0)) range("lr", "lr must be > 0");
  if (cfg.batch < 1) range("batch", "batch must be >= 1");
  if (cfg.iterations < 0) range("iterations", "iterations must be >= 0");
  if (cfg.rollouts_per_iter < 1) range("rollouts_per_iter", "rollouts_per_iter must be >= 1");
  if (cfg.max_response_len < 1) range("max_response_len", "max_response_len must be >= 1");
  return report;
}

std::vector<Rollout> collect_rollouts(const Policy& policy, const Policy& ref,
                                      const RewardFn& reward, std::span<const TokenSequence> prompts,
                                      const PpoConfig& cfg, std::uint64_t iteration,
                                      const Critic& critic) {
  if (prompts.empty()) throw std::invalid_argument("collect_rollouts: prompts must be non-empty");

  std::vector<Rollout> rollouts;
  rollouts.reserve(static_cast<std::size_t>(cfg.rollouts_per_iter));
  for (int k = 0; k < cfg.rollouts_per_iter; ++k) {
    // Streams keyed by (iteration, rollout index) so collection order does
    // not affect the draws.
    Rng rng(derive_stream(cfg.seed, "ppo_rollout",
                          (iteration << 24) ^ static_cast<std::uint64_t>(k)));
    Rollout r;
    r.prompt = prompts[static_cast<std::size_t>(k) % prompts.size()];
    r.response = sample(policy, r.prompt, cfg.max_response_len, 1.0, rng);

    std::vector<std::int32_t> context = r.prompt.tokens;
    for (std::int32_t token : r.response.tokens) {
      std::int32_t row = policy.row_of(context);
      r.rows.push_back(row);
      r.logp_behavior.push_back(policy.row_log_probs(row)[static_cast<std::size_t>(token)]);
      r.logp_ref.push_back(ref.row_log_probs(row)[static_cast<std::size_t>(token)]);
      r.seq_kl_exact += state_kl(policy, ref, row);
      context.push_back(token);
    }

    r.terminal_reward = reward(r.prompt, r.response);

    std::size_t steps = r.response.tokens.size();
    r.shaped.resize(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      r.shaped[t] = -cfg.beta * (r.logp_behavior[t] - r.logp_ref[t]);
    }
    r.shaped[steps - 1] += r.terminal_reward;

    // GAE against the critic baseline; terminal value is zero.
    r.returns.resize(steps);
    r.advantages.resize(steps);
    double next_value = 0.0;
    double next_advantage = 0.0;
    for (std::size_t t = steps; t-- > 0;) {
      double value = critic.value(r.rows[t]);
      double delta = r.shaped[t] + cfg.gamma * next_value - value;
      next_advantage = delta + cfg.gamma * cfg.lam * next_advantage;
      r.advantages[t] = next_advantage;
      r.returns[t] = next_advantage + value;
      next_value = value;
    }
    rollouts.push_back(std::move(r));
  }
  return rollouts;
}

UpdateStats ppo_update(Policy& policy, Critic& critic, std::span<const Rollout> rollouts,
                       const PpoConfig& cfg) {
  if (rollouts.empty()) throw std::invalid_argument("ppo_update: rollouts must be non-empty");

  UpdateStats stats;
  long total_steps = 0;
  long clipped_steps = 0;
  double total_kl = 0.0;
  for (const auto& r : rollouts) {
    stats.mean_reward += r.terminal_reward;
    total_kl += r.seq_kl_exact;
    total_steps += static_cast<long>(r.response.tokens.size());
  }
  stats.mean_reward /= static_cast<double>(rollouts.size());
  stats.mean_kl = total_steps == 0 ? 0.0 : total_kl / static_cast<double>(total_steps);
  stats.j_hat = stats.mean_reward - cfg.beta * total_kl / static_cast<double>(rollouts.size());

  std::size_t batch_size = static_cast<std::size_t>(std::max(1, cfg.batch));
  for (std::size_t start = 0; start < rollouts.size(); start += batch_size) {
    std::size_t count = std::min(batch_size, rollouts.size() - start);

    std::map<std::int32_t, std::vector<double>> grad;
    long batch_steps = 0;
    for (std::size_t i = 0; i < count; ++i) {
      const Rollout& r = rollouts[start + i];
      batch_steps += static_cast<long>(r.response.tokens.size());
    }
    if (batch_steps == 0) continue;

    for (std::size_t i = 0; i < count; ++i) {
      const Rollout& r = rollouts[start + i];
      for (std::size_t t = 0; t < r.response.tokens.size(); ++t) {
        std::int32_t row = r.rows[t];
        std::int32_t action = r.response.tokens[t];
        double advantage = r.advantages[t];

        auto log_probs = policy.row_log_probs(row);
        double ratio = std::exp(log_probs[static_cast<std::size_t>(action)] - r.logp_behavior[t]);
        if (!std::isfinite(ratio)) throw NonFiniteUpdate("probability ratio is not finite");
        if (ratio < 1.0 - cfg.clip_eps || ratio > 1.0 + cfg.clip_eps) ++clipped_steps;

        double unclipped = ratio * advantage;
        double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * advantage;
        // min(unclipped, clipped): the clipped branch is constant in phi.
        if (unclipped <= clipped && advantage != 0.0) {
          auto [it, inserted] = grad.try_emplace(row);
          if (inserted) it->second.assign(static_cast<std::size_t>(policy.vocab_size()), 0.0);
          double coef = ratio * advantage;
          for (std::size_t a = 0; a < it->second.size(); ++a) {
            it->second[a] -= coef * std::exp(log_probs[a]);
          }
          it->second[static_cast<std::size_t>(action)] += coef;
        }
      }
    }

    double scale = cfg.lr / static_cast<double>(batch_steps);
    for (const auto& [row, row_grad] : grad) {
      for (std::size_t a = 0; a < row_grad.size(); ++a) {
        double delta = scale * row_grad[a];
        if (!std::isfinite(delta)) throw NonFiniteUpdate("policy update is not finite");
        policy.add_logit(row, static_cast<std::int32_t>(a), delta);
      }
    }

    for (std::size_t i = 0; i < count; ++i) {
      const Rollout& r = rollouts[start + i];
      for (std::size_t t = 0; t < r.response.tokens.size(); ++t) {
        auto row = static_cast<std::size_t>(r.rows[t]);
        critic.values[row] += cfg.critic_lr * (r.returns[t] - critic.values[row]);
      }
    }
  }

  stats.clip_frac = total_steps == 0 ? 0.0 : static_cast<double>(clipped_steps) / static_cast<double>(total_steps);
  return stats;
}

PpoTrainResult train_ppo(const Policy& sft_policy, const RewardFn& reward,
                         std::span<const TokenSequence> prompts, const PpoConfig& cfg) {
  PpoTrainResult result;
  result.policy = sft_policy;
  Policy reference = sft_policy;  // frozen
  Critic critic(sft_policy.rows());

  double reward_mean = 0.0;
  long reward_count = 0;
  RewardFn effective_reward = reward;
  if (cfg.center_rewards) {
    effective_reward = [&](const TokenSequence& x, const TokenSequence& y) {
      double r = reward(x, y);
      ++reward_count;
      reward_mean += (r - reward_mean) / static_cast<double>(reward_count);
      return r - reward_mean;
    };
  }

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    auto rollouts = collect_rollouts(result.policy, reference, effective_reward, prompts, cfg,
                                     static_cast<std::uint64_t>(iter), critic);
    Policy checkpoint = result.policy;
    try {
      UpdateStats stats = ppo_update(result.policy, critic, rollouts, cfg);
      result.report.push_back({iter, stats});
    } catch (const NonFiniteUpdate&) {
      result.policy = std::move(checkpoint);
      break;
    }
  }
  return result;
}

}  // namespace rldf
