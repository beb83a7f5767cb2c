#include "hiercap/rollout.hpp"

#include <algorithm>
#include <numeric>

#include "hiercap/vocab.hpp"

namespace hiercap {

namespace {

void require_pretrained(const Discriminator& disc) {
  if (!disc.pretrained()) throw ContractError("rewards requested from a discriminator that was never pretrained");
}

bool finished(const TokenSeq& seq, std::size_t max_len) {
  return !seq.empty() && (seq.back() == kEndId || seq.size() >= max_len);
}

}  // namespace

std::vector<TokenSeq> rollout(const Generator& gen, const SceneBatch& scene, const TokenSeq& prefix, std::size_t n,
                              Rng& rng) {
  if (scene.size() != 1) throw DimensionError("rollout: expects a single-scene batch");
  if (n == 0) throw ContractError("rollout: N must be positive");
  if (finished(prefix, gen.config().max_gen_len)) throw ContractError("rollout: prefix is already complete");
  const EncodedBatch enc = gen.encode(scene);
  const std::vector<std::size_t> rep(n, 0);
  GeneratorState state;
  int input = kStartId;
  if (prefix.empty()) {
    state = gen.init_state(1);
  } else {
    state = gen.replay_states(enc, {prefix})[prefix.size() - 1];
    input = prefix.back();
  }
  auto tails = gen.continue_rows(take_encoded(enc, rep), take_state(state, rep), std::vector<int>(n, input),
                                 std::vector<std::size_t>(n, prefix.size()), SampleMode::multinomial, rng);
  std::vector<TokenSeq> out;
  for (auto& tail : tails) {
    TokenSeq seq = prefix;
    seq.insert(seq.end(), tail.begin(), tail.end());
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<RewardTable> estimate_rewards(const Generator& gen, const Discriminator& disc, const SceneBatch& batch,
                                          const std::vector<TokenSeq>& sequences, std::size_t n, Rng& rng) {
  require_pretrained(disc);
  const std::size_t B = batch.size();
  if (sequences.size() != B) throw DimensionError("estimate_rewards: one sequence per scene required");
  if (n == 0) throw ContractError("estimate_rewards: N must be positive");
  std::size_t T = 0;
  for (const auto& s : sequences) {
    if (!finished(s, gen.config().max_gen_len)) throw ContractError("estimate_rewards: sequence is not complete");
    T = std::max(T, s.size());
  }
  std::vector<RewardTable> tables(B);
  for (std::size_t b = 0; b < B; ++b) {
    tables[b].q.assign(sequences[b].size(), 0.0);
    tables[b].variance.assign(sequences[b].size(), 0.0);
    tables[b].rollouts = n;
  }
  // t = T: the discriminator on the full sequence, no rollout.
  const std::vector<double> terminal = disc.d_score(batch, sequences);
  for (std::size_t b = 0; b < B; ++b) tables[b].q.back() = terminal[b];

  const EncodedBatch enc = gen.encode(batch);
  const std::vector<GeneratorState> states = gen.replay_states(enc, sequences);
  for (std::size_t t = 1; t < T; ++t) {
    // Every scene whose sequence extends past t contributes N rollouts.
    std::vector<std::size_t> owners, rep;
    for (std::size_t b = 0; b < B; ++b) {
      if (sequences[b].size() <= t) continue;
      owners.push_back(b);
      rep.insert(rep.end(), n, b);
    }
    if (owners.empty()) continue;
    std::vector<int> input;
    for (std::size_t b : rep) input.push_back(sequences[b][t - 1]);
    auto tails = gen.continue_rows(take_encoded(enc, rep), take_state(states[t - 1], rep), std::move(input),
                                   std::vector<std::size_t>(rep.size(), t), SampleMode::multinomial, rng);
    std::vector<TokenSeq> full(rep.size());
    for (std::size_t i = 0; i < rep.size(); ++i) {
      full[i].assign(sequences[rep[i]].begin(), sequences[rep[i]].begin() + static_cast<std::ptrdiff_t>(t));
      full[i].insert(full[i].end(), tails[i].begin(), tails[i].end());
    }
    const std::vector<double> scores = disc.d_score(take_scenes(batch, rep), full);
    for (std::size_t k = 0; k < owners.size(); ++k) {
      const double* s = scores.data() + k * n;
      const double mean = std::accumulate(s, s + n, 0.0) / static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (s[i] - mean) * (s[i] - mean);
      RewardTable& table = tables[owners[k]];
      table.q[t - 1] = mean;
      table.variance[t - 1] = n > 1 ? var / static_cast<double>(n - 1) : 0.0;
    }
  }
  return tables;
}

Tensor pg_surrogate(const Generator& gen, const SceneBatch& batch, const std::vector<TokenSeq>& sequences,
                    const std::vector<RewardTable>& rewards, double baseline) {
  if (rewards.size() != sequences.size()) throw DimensionError("pg_surrogate: one reward table per sequence required");
  std::vector<std::vector<double>> weights;
  for (const auto& r : rewards) {
    std::vector<double> w = r.q;
    for (double& x : w) x -= baseline;
    weights.push_back(std::move(w));
  }
  return scale(gen.sequence_nll(batch, sequences, weights), 1.0 / static_cast<double>(sequences.size()));
}

PolicyGradientStats PolicyGradient::step(const Generator& gen, const Discriminator& disc, Adam& optimizer,
                                         const SceneBatch& batch, Rng& rng) {
  require_pretrained(disc);
  PolicyGradientStats stats;
  stats.samples = gen.generate(batch, SampleMode::multinomial, rng);
  const auto rewards = estimate_rewards(gen, disc, batch, stats.samples, config_.rollouts, rng);
  double q_sum = 0.0, j_sum = 0.0;
  std::size_t tokens = 0;
  for (const auto& r : rewards) {
    q_sum = std::accumulate(r.q.begin(), r.q.end(), q_sum);
    tokens += r.q.size();
    j_sum += r.q.back();
  }
  stats.mean_q = q_sum / static_cast<double>(tokens);
  stats.j = j_sum / static_cast<double>(rewards.size());

  double b = 0.0;
  if (config_.use_baseline) {
    if (!baseline_ready_) {
      baseline_ = stats.mean_q;
      baseline_ready_ = true;
    }
    b = baseline_;
    baseline_ = config_.baseline_decay * baseline_ + (1.0 - config_.baseline_decay) * stats.mean_q;
  }

  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor loss = pg_surrogate(gen, batch, stats.samples, rewards, b);
    stats.surrogate = loss.item();
    optimizer.zero_grad();
    tape.backward(loss);
  }
  optimizer.step();
  return stats;
}

double expected_reward(const Generator& gen, const Discriminator& disc, const SceneBatch& batch, Rng& rng) {
  require_pretrained(disc);
  const auto samples = gen.generate(batch, SampleMode::multinomial, rng);
  const auto scores = disc.d_score(batch, samples);
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

}  // namespace hiercap
