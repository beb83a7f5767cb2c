#pragma once

#include <vector>

#include "hiercap/discriminator.hpp"
#include "hiercap/optim.hpp"

namespace hiercap {

// Q(t) for t = 1..T stored at q[t-1]; variance[t-1] is the sample variance of
// the N rollout rewards behind q[t-1] (0 at t = T, which uses no rollout).
struct RewardTable {
  std::vector<double> q;
  std::vector<double> variance;
  std::size_t rollouts = 0;
};

// N continuations of `prefix` for a single-scene batch, sampled from the
// generator itself. Every returned sequence starts with the prefix verbatim.
std::vector<TokenSeq> rollout(const Generator& gen, const SceneBatch& scene, const TokenSeq& prefix, std::size_t n,
                              Rng& rng);

// Per-token action values for sampled sequences of every scene in the batch.
// Q(T) is the discriminator score of the full sequence; earlier steps average
// the score of N rollouts from the prefix.
std::vector<RewardTable> estimate_rewards(const Generator& gen, const Discriminator& disc, const SceneBatch& batch,
                                          const std::vector<TokenSeq>& sequences, std::size_t n, Rng& rng);

// Surrogate loss -(1/B) sum_b sum_t log G(y_t | Y_{1:t-1}) * (Q_b(t) - baseline).
// Q values enter as constants.
Tensor pg_surrogate(const Generator& gen, const SceneBatch& batch, const std::vector<TokenSeq>& sequences,
                    const std::vector<RewardTable>& rewards, double baseline = 0.0);

struct PolicyGradientConfig {
  std::size_t rollouts = 16;
  bool use_baseline = false;  // moving-average baseline, off by default
  double baseline_decay = 0.9;
};

struct PolicyGradientStats {
  double surrogate = 0.0;  // g_loss
  double mean_q = 0.0;     // mean over all tokens of Q(t)
  double j = 0.0;          // mean terminal reward D(Y_{1:T})
  std::vector<TokenSeq> samples;
};

class PolicyGradient {
 public:
  explicit PolicyGradient(PolicyGradientConfig config) : config_(config) {}

  // Samples a caption per scene, estimates rewards, and applies one
  // optimizer step to the generator parameters in `optimizer`.
  PolicyGradientStats step(const Generator& gen, const Discriminator& disc, Adam& optimizer, const SceneBatch& batch,
                           Rng& rng);

  const PolicyGradientConfig& config() const { return config_; }
  double baseline() const { return baseline_; }
  void set_baseline(double value, bool initialized) {
    baseline_ = value;
    baseline_ready_ = initialized;
  }
  bool baseline_ready() const { return baseline_ready_; }

 private:
  PolicyGradientConfig config_;
  double baseline_ = 0.0;
  bool baseline_ready_ = false;
};

// Mean D(Y) over one multinomial sample per scene.
double expected_reward(const Generator& gen, const Discriminator& disc, const SceneBatch& batch, Rng& rng);

}  // namespace hiercap
