#include "rldf/policy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace rldf {

namespace {
constexpr std::int32_t kPadToken = -1;
}

Policy::Policy(Vocabulary vocab, int context_width, std::int32_t rows)
    : vocab_(std::move(vocab)), context_width_(context_width), rows_(rows) {
  if (context_width_ < 1) throw std::invalid_argument("Policy: context_width must be >= 1");
  if (rows_ < 1) throw std::invalid_argument("Policy: rows must be >= 1");
  logits_.assign(static_cast<std::size_t>(rows_) * static_cast<std::size_t>(vocab_.size()), 0.0);
}

std::int32_t Policy::row_of(std::span<const std::int32_t> context) const {
  std::vector<std::int32_t> window(static_cast<std::size_t>(context_width_), kPadToken);
  std::size_t take = std::min(context.size(), static_cast<std::size_t>(context_width_));
  for (std::size_t i = 0; i < take; ++i) {
    window[window.size() - take + i] = context[context.size() - take + i];
  }
  return static_cast<std::int32_t>(fnv1a64(window, 0x43) % static_cast<std::uint64_t>(rows_));
}

double Policy::logit(std::int32_t row, std::int32_t token) const {
  return logits_[static_cast<std::size_t>(row) * vocab_.size() + static_cast<std::size_t>(token)];
}

void Policy::add_logit(std::int32_t row, std::int32_t token, double delta) {
  logits_[static_cast<std::size_t>(row) * vocab_.size() + static_cast<std::size_t>(token)] += delta;
}

std::vector<double> Policy::row_log_probs(std::int32_t row) const {
  const double* base = logits_.data() + static_cast<std::size_t>(row) * vocab_.size();
  std::size_t v = static_cast<std::size_t>(vocab_.size());
  double max_logit = *std::max_element(base, base + v);
  double sum = 0.0;
  for (std::size_t i = 0; i < v; ++i) sum += std::exp(base[i] - max_logit);
  double log_z = max_logit + std::log(sum);
  std::vector<double> out(v);
  for (std::size_t i = 0; i < v; ++i) out[i] = base[i] - log_z;
  return out;
}

std::vector<double> Policy::row_probs(std::int32_t row) const {
  std::vector<double> out = row_log_probs(row);
  for (double& x : out) x = std::exp(x);
  return out;
}

bool Policy::same_shape(const Policy& other) const {
  return context_width_ == other.context_width_ && rows_ == other.rows_ &&
         vocab_ == other.vocab_;
}

Json Policy::to_json() const {
  Json rows_json = Json::object();
  std::size_t v = static_cast<std::size_t>(vocab_.size());
  for (std::int32_t r = 0; r < rows_; ++r) {
    Json cols = Json::array();
    const double* base = logits_.data() + static_cast<std::size_t>(r) * v;
    for (std::size_t c = 0; c < v; ++c) {
      if (base[c] != 0.0) cols.push_back(Json::array({c, base[c]}));
    }
    if (!cols.empty()) rows_json[std::to_string(r)] = std::move(cols);
  }
  return Json{{"format_version", 1},
              {"context_width", context_width_},
              {"rows", rows_},
              {"vocab", vocab_.to_json()},
              {"logits", rows_json}};
}

Policy Policy::from_json(const Json& j) {
  Policy policy(Vocabulary::from_json(j.at("vocab")), j.at("context_width").get<int>(),
                j.at("rows").get<std::int32_t>());
  for (auto it = j.at("logits").begin(); it != j.at("logits").end(); ++it) {
    std::int32_t row = static_cast<std::int32_t>(std::stol(it.key()));
    for (const auto& entry : it.value()) {
      policy.logits_[static_cast<std::size_t>(row) * policy.vocab_.size() +
                     entry.at(0).get<std::size_t>()] = entry.at(1).get<double>();
    }
  }
  return policy;
}

void Policy::save(const std::filesystem::path& path) const {
  write_file_atomic(path, to_json().dump() + "\n");
}

Policy Policy::load(const std::filesystem::path& path) {
  try {
    return from_json(Json::parse(read_file(path)));
  } catch (const Json::exception& e) {
    throw SchemaViolation("policy file " + path.string() + ": " + e.what());
  }
}

// ----------------------------------------------------------------------------
// SFT
// ----------------------------------------------------------------------------

SftExampleTok sft_tokenize(const Vocabulary& vocab, const SftExample& example, int max_seq_len) {
  SftExampleTok tok;
  auto cap = static_cast<std::size_t>(max_seq_len);
  tok.prompt = truncate_right(vocab.encode(example.prompt), cap);
  tok.completion = truncate_right(vocab.encode(example.completion), cap > 1 ? cap - 1 : 1);
  tok.completion.tokens.push_back(Vocabulary::kEosId);
  return tok;
}

namespace {

// Visits (row, target token) for every completion position of one example.
template <typename Fn>
void walk_completion(const Policy& policy, const SftExampleTok& example, Fn&& fn) {
  std::vector<std::int32_t> context = example.prompt.tokens;
  for (std::int32_t target : example.completion.tokens) {
    fn(policy.row_of(context), target);
    context.push_back(target);
  }
}

}  // namespace

double corpus_nll(const Policy& policy, std::span<const SftExampleTok> examples) {
  double total = 0.0;
  long count = 0;
  for (const auto& example : examples) {
    walk_completion(policy, example, [&](std::int32_t row, std::int32_t target) {
      total -= policy.row_log_probs(row)[static_cast<std::size_t>(target)];
      ++count;
    });
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

SftTrainResult sft_train(Policy policy, std::span<const SftExampleTok> examples, double lr,
                         int epochs, int batch, std::uint64_t seed) {
  if (examples.empty()) throw std::invalid_argument("sft_train: need at least one example");
  SftTrainResult result;
  result.initial_nll = corpus_nll(policy, examples);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t batch_size = static_cast<std::size_t>(std::max(1, batch));

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(derive_stream(seed, "sft_shuffle", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::size_t count = std::min(batch_size, order.size() - start);

      // Gradient of mean token log-likelihood: for each visited (row, target),
      // +1 on the target and -softmax on the whole row.
      std::map<std::int32_t, std::vector<double>> grad;
      double nll = 0.0;
      long tokens = 0;
      for (std::size_t i = 0; i < count; ++i) {
        const auto& example = examples[order[start + i]];
        walk_completion(policy, example, [&](std::int32_t row, std::int32_t target) {
          auto log_probs = policy.row_log_probs(row);
          nll -= log_probs[static_cast<std::size_t>(target)];
          auto [it, inserted] = grad.try_emplace(row);
          if (inserted) it->second.assign(static_cast<std::size_t>(policy.vocab_size()), 0.0);
          for (std::size_t a = 0; a < it->second.size(); ++a) {
            it->second[a] -= std::exp(log_probs[a]);
          }
          it->second[static_cast<std::size_t>(target)] += 1.0;
          ++tokens;
        });
      }
      if (tokens == 0) continue;
      nll /= static_cast<double>(tokens);
      if (!std::isfinite(nll)) throw NonFiniteLoss("sft NLL is not finite");
      result.nll_trajectory.push_back(nll);
      double scale = lr / static_cast<double>(tokens);
      for (const auto& [row, row_grad] : grad) {
        for (std::size_t a = 0; a < row_grad.size(); ++a) {
          policy.add_logit(row, static_cast<std::int32_t>(a), scale * row_grad[a]);
        }
      }
    }
  }
  result.final_nll = corpus_nll(policy, examples);
  result.policy = std::move(policy);
  return result;
}

// ----------------------------------------------------------------------------
// Inference
// ----------------------------------------------------------------------------

TokenSequence sample(const Policy& policy, const TokenSequence& x, int max_len, double temperature,
                     Rng& rng) {
  if (temperature < 0) throw std::invalid_argument("sample: temperature must be >= 0");
  TokenSequence out;
  std::vector<std::int32_t> context = x.tokens;
  for (int step = 0; step < max_len; ++step) {
    std::int32_t row = policy.row_of(context);
    std::int32_t token;
    if (temperature == 0.0) {
      auto log_probs = policy.row_log_probs(row);
      token = static_cast<std::int32_t>(
          std::max_element(log_probs.begin(), log_probs.end()) - log_probs.begin());
    } else {
      auto log_probs = policy.row_log_probs(row);
      std::vector<double> weights(log_probs.size());
      double max_scaled = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < log_probs.size(); ++a) {
        max_scaled = std::max(max_scaled, log_probs[a] / temperature);
      }
      for (std::size_t a = 0; a < log_probs.size(); ++a) {
        weights[a] = std::exp(log_probs[a] / temperature - max_scaled);
      }
      token = static_cast<std::int32_t>(rng.categorical(weights));
    }
    out.tokens.push_back(token);
    if (token == Vocabulary::kEosId) break;
    context.push_back(token);
  }
  return out;
}

LogprobResult logprob(const Policy& policy, const TokenSequence& x, const TokenSequence& y) {
  if (y.empty()) throw std::invalid_argument("logprob: y must be non-empty");
  LogprobResult result;
  std::vector<std::int32_t> context = x.tokens;
  for (std::int32_t token : y.tokens) {
    std::int32_t row = policy.row_of(context);
    double lp = policy.row_log_probs(row)[static_cast<std::size_t>(token)];
    result.per_token.push_back(lp);
    result.total += lp;
    context.push_back(token);
  }
  return result;
}

double state_kl(const Policy& policy, const Policy& ref, std::int32_t row) {
  auto p_log = policy.row_log_probs(row);
  auto q_log = ref.row_log_probs(row);
  double kl = 0.0;
  for (std::size_t a = 0; a < p_log.size(); ++a) {
    if (!std::isfinite(q_log[a])) {
      throw SupportMismatch("reference assigns zero probability at row " + std::to_string(row));
    }
    kl += std::exp(p_log[a]) * (p_log[a] - q_log[a]);
  }
  return kl;
}

double kl_divergence(const Policy& policy, const Policy& ref,
                     std::span<const std::vector<std::int32_t>> states) {
  if (!policy.same_shape(ref)) {
    throw std::invalid_argument("kl_divergence: policies must share vocabulary and table shape");
  }
  if (states.empty()) throw std::invalid_argument("kl_divergence: need at least one state");
  double total = 0.0;
  for (const auto& context : states) {
    total += state_kl(policy, ref, policy.row_of(context));
  }
  return total / static_cast<double>(states.size());
}

}  // namespace rldf
