#include <doctest.h>

#include <cmath>
#include <numeric>

#include "hiercap/rollout.hpp"
#include "support.hpp"

using namespace hiercap;
using testing::values;

namespace {

struct Fixture {
  ToySceneConfig scene_config = testing::small_scene_config();
  std::vector<ToyScene> scenes;
  Vocabulary vocab;
  SceneBatch batch;
  explicit Fixture(std::size_t n = 3, std::uint64_t seed = 400)
      : scenes(testing::small_scenes(n, seed, scene_config)),
        vocab(testing::vocab_of(scenes)),
        batch(make_batch(scenes, scene_config.object_slots)) {}
};

Tensor param(const NamedTensors& params, const std::string& name) {
  for (const auto& [n, t] : params) {
    if (n == name) return t;
  }
  FAIL("missing parameter ", name);
  return {};
}

void fill(Tensor t, double value) {
  for (double& v : t.mutable_data()) v = value;
}

// Saturates both LSTMs so h is positive and lets W_p put a huge margin on
// `token` at every step.
void force_token(const Generator& gen, int token) {
  for (const auto& [name, t] : gen.parameters()) {
    const bool bias = name.find(".b_") != std::string::npos;
    if (name.find("lstm") != std::string::npos) fill(t, bias && name.back() != 'f' ? 20.0 : 0.0);
  }
  Tensor wp = param(gen.parameters(), "gen.W_p");
  fill(wp, 0.0);
  const std::size_t V = wp.dim(1);
  for (std::size_t r = 0; r < wp.dim(0); ++r) wp.mutable_data()[r * V + static_cast<std::size_t>(token)] = 100.0;
}

Discriminator pretrained_disc(const Fixture& f, DiscVariant variant, std::uint64_t seed) {
  Rng rng(seed);
  Discriminator d(testing::tiny_discriminator(f.vocab.size(), f.scene_config, variant), rng);
  d.mark_pretrained();
  return d;
}

std::vector<double> grads_of(const NamedTensors& params) {
  std::vector<double> g;
  for (const auto& [n, p] : params) {
    if (p.has_grad()) g.insert(g.end(), p.grad().begin(), p.grad().end());
    else g.insert(g.end(), p.numel(), 0.0);
  }
  return g;
}

std::vector<double> backward_grads(const NamedTensors& params, const std::function<Tensor()>& loss_fn) {
  for (const auto& [n, p] : params) Tensor(p).zero_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(loss_fn());
  }
  auto g = grads_of(params);
  for (const auto& [n, p] : params) Tensor(p).zero_grad();
  return g;
}

}  // namespace

TEST_SUITE("rollout") {

TEST_CASE("forced generator gives identical rollouts and flat Q") {
  Fixture f(1);
  GeneratorConfig c = testing::tiny_generator(f.vocab.size(), f.scene_config);
  c.max_gen_len = 6;
  Rng rng(1);
  const Generator gen(c, rng);
  force_token(gen, 3);
  Rng sample(2);
  const auto outs = rollout(gen, f.batch, {3, 3}, 8, sample);
  for (const auto& s : outs) CHECK(s == outs[0]);
  CHECK(outs[0] == TokenSeq(6, 3));

  const Discriminator d = pretrained_disc(f, DiscVariant::coherence, 3);
  const auto seqs = gen.generate(f.batch, SampleMode::multinomial, sample);
  const auto table = estimate_rewards(gen, d, f.batch, seqs, 4, sample)[0];
  for (double q : table.q) CHECK(std::abs(q - table.q.back()) < 1e-15);
  for (std::size_t t = 0; t + 1 < table.q.size(); ++t) CHECK(table.variance[t] < 1e-30);
}

TEST_CASE("rollouts keep the prefix verbatim and finish") {
  Fixture f(1);
  GeneratorConfig c = testing::tiny_generator(f.vocab.size(), f.scene_config);
  c.max_gen_len = 9;
  Rng rng(4);
  const Generator gen(c, rng);
  const TokenSeq prefix = {5, 3, 4};
  Rng sample(5);
  for (const auto& s : rollout(gen, f.batch, prefix, 50, sample)) {
    REQUIRE(s.size() > prefix.size());
    CHECK(TokenSeq(s.begin(), s.begin() + 3) == prefix);
    CHECK((s.back() == kEndId || s.size() == 9));
  }
  CHECK_THROWS_AS(rollout(gen, f.batch, {3, kEndId}, 2, sample), ContractError);
}

TEST_CASE("first rollout token follows the softmax within three standard errors") {
  Fixture f(1);
  GeneratorConfig c = testing::tiny_generator(f.vocab.size(), f.scene_config);
  c.max_gen_len = 3;
  Rng rng(6);
  const Generator gen(c, rng);
  const TokenSeq prefix = {4, 3};
  const EncodedBatch enc = gen.encode(f.batch);
  const auto state = gen.replay_states(enc, {prefix})[1];
  const int last = prefix.back();
  const StepOutput out = gen.step(enc, state, std::span(&last, 1));
  const auto l = out.logits.data();
  std::vector<double> p(l.size(), 0.0);
  double z = 0.0;
  for (std::size_t v = 0; v < l.size(); ++v) {
    if (gen.emittable()[v]) z += p[v] = std::exp(l[v]);
  }
  for (double& x : p) x /= z;

  const std::size_t n = 100000;
  Rng sample(7);
  std::vector<double> counts(p.size(), 0.0);
  for (const auto& s : rollout(gen, f.batch, prefix, n, sample)) counts[static_cast<std::size_t>(s[2])] += 1.0;
  for (std::size_t v = 0; v < p.size(); ++v) {
    const double se = std::sqrt(p[v] * (1.0 - p[v]) / static_cast<double>(n));
    INFO("token ", v);
    CHECK(std::abs(counts[v] / static_cast<double>(n) - p[v]) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("terminal Q is the discriminator score of the full sequence") {
  Fixture f(3);
  Rng rng(8);
  const Generator gen(testing::tiny_generator(f.vocab.size(), f.scene_config), rng);
  const Discriminator d = pretrained_disc(f, DiscVariant::coherence, 9);
  Rng sample(10);
  const auto seqs = gen.generate(f.batch, SampleMode::multinomial, sample);
  const auto tables = estimate_rewards(gen, d, f.batch, seqs, 3, sample);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    CHECK(tables[b].q.size() == seqs[b].size());
    CHECK(tables[b].q.back() == d.d_score(f.scenes[b], seqs[b], f.scene_config.object_slots));
    CHECK(tables[b].variance.back() == 0.0);
    for (double q : tables[b].q) {
      CHECK(q > 0.0);
      CHECK(q < 1.0);
    }
  }
}

TEST_CASE("large-N Q(1) matches enumeration on a two-word vocabulary") {
  // NULL, START, END and one word: the only continuations of [w] at T = 2
  // are [w, END] and [w, w].
  Fixture f(1);
  const Vocabulary vocab = Vocabulary::build({"w"}, 0);
  REQUIRE(vocab.size() == 4);
  GeneratorConfig c = testing::tiny_generator(vocab.size(), f.scene_config);
  c.max_gen_len = 2;
  Rng rng(11);
  const Generator gen(c, rng);
  Rng drng(12);
  Discriminator d(testing::tiny_discriminator(vocab.size(), f.scene_config, DiscVariant::coherence), drng);
  d.mark_pretrained();

  const int w = 3;
  const EncodedBatch enc = gen.encode(f.batch);
  const StepOutput s1 = gen.step(enc, gen.init_state(1), std::span(&kStartId, 1));
  const StepOutput s2 = gen.step(enc, s1.state, std::span(&w, 1));
  const auto l = s2.logits.data();
  const double p_end = std::exp(l[kEndId]) / (std::exp(l[kEndId]) + std::exp(l[w]));
  const double d_end = d.d_score(f.scenes[0], {w, kEndId}, c.object_slots);
  const double d_ww = d.d_score(f.scenes[0], {w, w}, c.object_slots);
  const double exact = p_end * d_end + (1.0 - p_end) * d_ww;
  const double sd = std::abs(d_end - d_ww) * std::sqrt(p_end * (1.0 - p_end));

  const std::size_t n = 20000;
  Rng sample(13);
  const auto table = estimate_rewards(gen, d, f.batch, {{w, kEndId}}, n, sample)[0];
  CHECK(std::abs(table.q[0] - exact) <= 4.0 * sd / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(table.variance[0] - sd * sd) <= 0.05 * sd * sd);
}

TEST_CASE("variance of the Q estimate shrinks like 1/N") {
  Fixture f(1);
  GeneratorConfig c = testing::tiny_generator(f.vocab.size(), f.scene_config);
  c.max_gen_len = 4;
  Rng rng(14);
  const Generator gen(c, rng);
  DiscriminatorConfig dc = testing::tiny_discriminator(f.vocab.size(), f.scene_config, DiscVariant::coherence);
  dc.init_scale = 2.0;
  Rng drng(15);
  Discriminator d(dc, drng);
  d.mark_pretrained();
  const std::vector<TokenSeq> seq = {{4, 3, 5, kEndId}};
  Rng sample(16);
  std::vector<double> xs, ys;
  for (std::size_t n : {2u, 8u, 32u, 128u}) {
    std::vector<double> q;
    for (int rep = 0; rep < 300; ++rep) q.push_back(estimate_rewards(gen, d, f.batch, seq, n, sample)[0].q[0]);
    const double mean = std::accumulate(q.begin(), q.end(), 0.0) / q.size();
    double var = 0.0;
    for (double x : q) var += (x - mean) * (x - mean);
    xs.push_back(std::log(static_cast<double>(n)));
    ys.push_back(std::log(var / (q.size() - 1)));
  }
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  const double slope = sxy / sxx;
  INFO("slope ", slope);
  CHECK(slope < -0.5);
  CHECK(slope > -2.0);
}

TEST_CASE("zero rewards give a zero update") {
  Fixture f(2);
  Rng rng(17);
  const Generator gen(testing::tiny_generator(f.vocab.size(), f.scene_config), rng);
  Rng sample(18);
  const auto seqs = gen.generate(f.batch, SampleMode::multinomial, sample);
  std::vector<RewardTable> zero;
  for (const auto& s : seqs) zero.push_back({std::vector<double>(s.size(), 0.0), std::vector<double>(s.size(), 0.0), 1});
  const auto g = backward_grads(gen.parameters(), [&] { return pg_surrogate(gen, f.batch, seqs, zero); });
  for (double x : g) CHECK(x == 0.0);

  std::vector<Tensor> before;
  for (const auto& [n, p] : gen.parameters()) before.push_back(p.detach());
  Adam opt(gen.parameters(), AdamConfig{1e-4});
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(pg_surrogate(gen, f.batch, seqs, zero));
  }
  opt.step();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(values(before[i]) == values(gen.parameters()[i].second));
}

TEST_CASE("unit rewards reduce the surrogate to the sampled log-likelihood") {
  Fixture f(2);
  Rng rng(19);
  const Generator gen(testing::tiny_generator(f.vocab.size(), f.scene_config), rng);
  Rng sample(20);
  const auto seqs = gen.generate(f.batch, SampleMode::multinomial, sample);
  std::vector<RewardTable> ones;
  for (const auto& s : seqs) ones.push_back({std::vector<double>(s.size(), 1.0), std::vector<double>(s.size(), 0.0), 1});
  const auto pg = backward_grads(gen.parameters(), [&] { return pg_surrogate(gen, f.batch, seqs, ones); });
  const auto mle = backward_grads(gen.parameters(), [&] { return scale(gen.mle_loss(f.batch, seqs), 0.5); });
  REQUIRE(pg.size() == mle.size());
  for (std::size_t i = 0; i < pg.size(); ++i) CHECK(std::abs(pg[i] - mle[i]) <= 1e-12 * (1.0 + std::abs(mle[i])));
}

TEST_CASE("a generator step leaves the discriminator without gradient") {
  Fixture f(3);
  Rng rng(21);
  const Generator gen(testing::tiny_generator(f.vocab.size(), f.scene_config), rng);
  const Discriminator d = pretrained_disc(f, DiscVariant::coherence, 22);
  Adam opt(gen.parameters(), AdamConfig{1e-4});
  PolicyGradient pg(PolicyGradientConfig{4});
  Rng sample(23);
  const auto before = grads_of(gen.parameters());
  const auto stats = pg.step(gen, d, opt, f.batch, sample);
  for (const auto& [n, p] : d.parameters()) {
    if (p.has_grad()) {
      for (double x : p.grad()) CHECK(x == 0.0);
    }
  }
  CHECK(stats.samples.size() == 3);
  CHECK(stats.j > 0.0);
  CHECK(stats.j < 1.0);
  CHECK(opt.steps() == 1);
}

TEST_CASE("untrained discriminator is refused") {
  Fixture f(1);
  Rng rng(24);
  const Generator gen(testing::tiny_generator(f.vocab.size(), f.scene_config), rng);
  Rng drng(25);
  const Discriminator d(testing::tiny_discriminator(f.vocab.size(), f.scene_config, DiscVariant::coherence), drng);
  Rng sample(26);
  CHECK_THROWS_AS(estimate_rewards(gen, d, f.batch, {{3, kEndId}}, 2, sample), ContractError);
  Adam opt(gen.parameters(), AdamConfig{});
  PolicyGradient pg(PolicyGradientConfig{});
  CHECK_THROWS_AS(pg.step(gen, d, opt, f.batch, sample), ContractError);
  CHECK_THROWS_AS(expected_reward(gen, d, f.batch, sample), ContractError);
}

TEST_CASE("expected reward of a constant discriminator") {
  Fixture f(4);
  Rng rng(27);
  const Generator gen(testing::tiny_generator(f.vocab.size(), f.scene_config), rng);
  const Discriminator d = pretrained_disc(f, DiscVariant::coherence, 28);
  for (const auto& [n, t] : d.parameters()) {
    if (n == "disc.W_i" || n == "disc.b_i") fill(t, 0.0);
  }
  Rng sample(29);
  CHECK(expected_reward(gen, d, f.batch, sample) == 0.5);
  const Discriminator live = pretrained_disc(f, DiscVariant::coherence, 30);
  const double j = expected_reward(gen, live, f.batch, sample);
  CHECK(j > 0.0);
  CHECK(j < 1.0);
}

TEST_CASE("moving-average baseline") {
  Fixture f(2);
  Rng rng(31);
  const Generator gen(testing::tiny_generator(f.vocab.size(), f.scene_config), rng);
  const Discriminator d = pretrained_disc(f, DiscVariant::coherence, 32);
  Adam opt(gen.parameters(), AdamConfig{1e-4});
  PolicyGradient pg(PolicyGradientConfig{2, true, 0.5});
  Rng sample(33);
  CHECK_FALSE(pg.baseline_ready());
  const auto s1 = pg.step(gen, d, opt, f.batch, sample);
  CHECK(pg.baseline_ready());
  CHECK(pg.baseline() == s1.mean_q);
  const auto s2 = pg.step(gen, d, opt, f.batch, sample);
  CHECK(std::abs(pg.baseline() - (0.5 * s1.mean_q + 0.5 * s2.mean_q)) < 1e-15);
}

}  // TEST_SUITE
