#include <doctest.h>

#include <cmath>

#include "hiercap/discriminator.hpp"
#include "hiercap/optim.hpp"
#include "support.hpp"

using namespace hiercap;
using testing::grad_check;
using testing::values;

namespace {

struct Fixture {
  ToySceneConfig scene_config = testing::small_scene_config();
  std::vector<ToyScene> scenes;
  Vocabulary vocab;
  SceneBatch batch;
  explicit Fixture(std::size_t n = 4, std::uint64_t seed = 200)
      : scenes(testing::small_scenes(n, seed, scene_config)),
        vocab(testing::vocab_of(scenes)),
        batch(make_batch(scenes, scene_config.object_slots)) {}

  std::vector<TokenSeq> refs(std::size_t k = 0) const {
    std::vector<TokenSeq> out;
    for (const auto& s : scenes) out.push_back(vocab.encode(s.refs[k]));
    return out;
  }
  // Random word sequences ending with END.
  std::vector<TokenSeq> noise(Rng& rng, std::size_t len) const {
    std::vector<TokenSeq> out;
    for (std::size_t b = 0; b < scenes.size(); ++b) {
      TokenSeq s;
      for (std::size_t t = 0; t + 1 < len; ++t) s.push_back(3 + static_cast<int>(rng.below(vocab.size() - 3)));
      s.push_back(kEndId);
      out.push_back(s);
    }
    return out;
  }
};

void zero_image_branch(const Discriminator& d) {
  for (const auto& [name, t] : d.parameters()) {
    if (name == "disc.W_i" || name == "disc.b_i") {
      for (double& v : Tensor(t).mutable_data()) v = 0.0;
    }
  }
}

}  // namespace

TEST_SUITE("discriminator") {

TEST_CASE("scores lie strictly inside the unit interval for every length") {
  Fixture f;
  for (const auto variant : {DiscVariant::sentence, DiscVariant::coherence}) {
    Rng rng(1);
    const Discriminator d(testing::tiny_discriminator(f.vocab.size(), f.scene_config, variant), rng);
    Rng words(2);
    for (std::size_t len = 1; len <= 30; ++len) {
      const auto caps = f.noise(words, len);
      const auto s = d.d_score(f.batch, caps);
      CHECK(s == d.d_score(f.batch, caps));
      for (double p : s) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
      }
      CHECK(d.encode_sentences(caps).shape() == Shape{f.scenes.size(), 3});
    }
  }
}

TEST_CASE("parameter names per variant") {
  Fixture f(1);
  Rng rng(3);
  const Discriminator s(testing::tiny_discriminator(f.vocab.size(), f.scene_config, DiscVariant::sentence), rng);
  const Discriminator c(testing::tiny_discriminator(f.vocab.size(), f.scene_config, DiscVariant::coherence), rng);
  auto names = [](const Discriminator& d) {
    std::vector<std::string> out;
    for (const auto& [n, t] : d.parameters()) out.push_back(n);
    return out;
  };
  const auto sn = names(s), cn = names(c);
  CHECK(std::find(sn.begin(), sn.end(), "disc.w_s") != sn.end());
  CHECK(std::find(sn.begin(), sn.end(), "disc.W_i") == sn.end());
  CHECK(std::find(cn.begin(), cn.end(), "disc.W_i") != cn.end());
  CHECK(std::find(cn.begin(), cn.end(), "disc.embed") != cn.end());
  for (const auto& n : cn) CHECK(n.rfind("disc.", 0) == 0);
  CHECK(parse_disc_variant("sentence") == DiscVariant::sentence);
  CHECK_THROWS_AS(parse_disc_variant("pairwise"), ConfigError);
}

TEST_CASE("zero image vector gives one half for every caption") {
  Fixture f;
  Rng rng(4);
  const Discriminator d(testing::tiny_discriminator(f.vocab.size(), f.scene_config, DiscVariant::coherence), rng);
  zero_image_branch(d);
  const Tensor pooled = d.pool_image(f.batch);
  for (double v : pooled.data()) CHECK(v == 0.0);
  Rng words(5);
  for (double p : d.d_score(f.batch, f.noise(words, 6))) CHECK(p == 0.5);
  const std::vector<double> labels = {1, 0, 1, 0};
  CHECK(std::abs(d.d_loss(f.batch, f.refs(), labels).item() - std::log(2.0)) < 1e-15);
}

TEST_CASE("sentence variant ignores the scene") {
  Fixture f;
  Rng rng(6);
  const Discriminator d(testing::tiny_discriminator(f.vocab.size(), f.scene_config, DiscVariant::sentence), rng);
  const TokenSeq cap = f.refs()[0];
  const double s0 = d.d_score(f.scenes[0], cap, f.scene_config.object_slots);
  for (const auto& scene : f.scenes) CHECK(d.d_score(scene, cap, f.scene_config.object_slots) == s0);
}

TEST_CASE("pooled image uses the masked object mean") {
  Fixture f(2);
  Rng rng(7);
  const Discriminator d(testing::tiny_discriminator(f.vocab.size(), f.scene_config, DiscVariant::coherence), rng);
  // Changing a padded slot's features leaves V_i unchanged.
  ToyScene s = f.scenes[0];
  std::size_t pad = s.valid.size();
  for (std::size_t k = 0; k < s.valid.size(); ++k) {
    if (!s.valid[k]) pad = k;
  }
  if (pad < s.valid.size()) {
    std::vector<double> obj = values(s.objects);
    for (std::size_t c = 0; c < f.scene_config.local_dim; ++c) obj[pad * f.scene_config.local_dim + c] = 9.0;
    ToyScene t = s;
    t.objects = Tensor::from(s.objects.shape(), obj);
    CHECK(values(d.pool_image(make_batch(std::vector<ToyScene>{s}, 6))) ==
          values(d.pool_image(make_batch(std::vector<ToyScene>{t}, 6))));
  }
}

TEST_CASE("binary cross-entropy limits") {
  const std::vector<double> labels = {1, 0};
  CHECK(bce_with_logits(Tensor::from({2}, {60.0, -60.0}), labels).item() < 1e-20);
  CHECK(std::abs(bce_with_logits(Tensor::from({2}, {0.0, 0.0}), labels).item() - std::log(2.0)) < 1e-15);
}

TEST_CASE("errors") {
  Fixture f(2);
  Rng rng(8);
  const Discriminator d(testing::tiny_discriminator(f.vocab.size(), f.scene_config, DiscVariant::coherence), rng);
  CHECK_THROWS_AS(d.d_score(f.batch, std::vector<TokenSeq>{TokenSeq{}, TokenSeq{3, kEndId}}), ContractError);
  const std::vector<double> bad = {1, 0.5};
  CHECK_THROWS_AS(d.d_loss(f.batch, f.refs(), bad), ContractError);
  CHECK_THROWS_AS(d.d_score(f.batch, std::vector<TokenSeq>{TokenSeq{3}}), DimensionError);
}

TEST_CASE("discriminator loss gradient matches finite differences") {
  Fixture f(2);
  for (const auto variant : {DiscVariant::sentence, DiscVariant::coherence}) {
    Rng rng(9);
    const Discriminator d(testing::tiny_discriminator(f.vocab.size(), f.scene_config, variant), rng);
    Rng words(10);
    const auto fake = f.noise(words, 5);
    const auto real = f.refs();
    const SceneBatch doubled = make_batch(std::vector<ToyScene>{f.scenes[0], f.scenes[1], f.scenes[0], f.scenes[1]},
                                          f.scene_config.object_slots);
    const std::vector<TokenSeq> caps = {real[0], real[1], fake[0], fake[1]};
    const std::vector<double> labels = {1, 1, 0, 0};
    const auto report = grad_check(d.parameters(), [&] { return d.d_loss(doubled, caps, labels); });
    INFO(to_string(variant), " worst ", report.worst, " ", report.analytic, " vs ", report.numeric);
    CHECK(report.max_rel < 1e-4);
  }
}

TEST_CASE("training on a fixed fake set decreases the loss every step") {
  Fixture f(16, 300);
  DiscriminatorConfig c = testing::tiny_discriminator(f.vocab.size(), f.scene_config, DiscVariant::coherence);
  c.embed_dim = 16;
  c.hidden_dim = 16;
  c.joint_dim = 8;
  c.init_scale = 0.08;
  Rng rng(11);
  const Discriminator d(c, rng);
  Rng words(12);
  const auto fake = f.noise(words, 8);
  const auto real = f.refs();
  std::vector<ToyScene> doubled = f.scenes;
  doubled.insert(doubled.end(), f.scenes.begin(), f.scenes.end());
  const SceneBatch batch = make_batch(doubled, f.scene_config.object_slots);
  std::vector<TokenSeq> caps = real;
  caps.insert(caps.end(), fake.begin(), fake.end());
  std::vector<double> labels(real.size(), 1.0);
  labels.resize(caps.size(), 0.0);
  Adam opt(d.parameters(), AdamConfig{1e-3});
  double prev = 1e300;
  for (int step = 0; step < 100; ++step) {
    opt.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = d.d_loss(batch, caps, labels);
    CHECK(loss.item() < prev);
    prev = loss.item();
    tape.backward(loss);
    opt.step();
  }
}

TEST_CASE("config json round trip") {
  DiscriminatorConfig c;
  c.vocab_size = 40;
  c.variant = DiscVariant::sentence;
  CHECK(DiscriminatorConfig::from_json(c.to_json()).to_json() == c.to_json());
}

}  // TEST_SUITE
