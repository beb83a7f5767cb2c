#include "hiercap/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hiercap/vocab.hpp"

namespace hiercap {

DiscVariant parse_disc_variant(const std::string& name) {
  if (name == "sentence") return DiscVariant::sentence;
  if (name == "coherence") return DiscVariant::coherence;
  throw ConfigError("unknown discriminator variant '" + name + "' (expected sentence or coherence)");
}

std::string to_string(DiscVariant variant) { return variant == DiscVariant::sentence ? "sentence" : "coherence"; }

void DiscriminatorConfig::validate() const {
  if (vocab_size <= 3) throw ConfigError("discriminator vocabulary is too small");
  if (embed_dim == 0 || hidden_dim == 0 || joint_dim == 0 || global_dim == 0 || local_dim == 0) {
    throw ConfigError("discriminator dimensions must be positive");
  }
  if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
}

nlohmann::json DiscriminatorConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"embed_dim", embed_dim},   {"hidden_dim", hidden_dim},
          {"joint_dim", joint_dim},   {"global_dim", global_dim}, {"local_dim", local_dim},
          {"variant", to_string(variant)}, {"lstm_candidate_activation", to_string(candidate)},
          {"init_scale", init_scale}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const nlohmann::json& j) {
  DiscriminatorConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("vocab_size", c.vocab_size);
  get("embed_dim", c.embed_dim);
  get("hidden_dim", c.hidden_dim);
  get("joint_dim", c.joint_dim);
  get("global_dim", c.global_dim);
  get("local_dim", c.local_dim);
  if (j.contains("variant")) c.variant = parse_disc_variant(j.at("variant").get<std::string>());
  if (j.contains("lstm_candidate_activation")) {
    c.candidate = parse_candidate_activation(j.at("lstm_candidate_activation").get<std::string>());
  }
  get("init_scale", c.init_scale);
  c.validate();
  return c;
}

Discriminator::Discriminator(DiscriminatorConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  embedding_ = Embedding::create(c.vocab_size, c.embed_dim, rng, c.init_scale);
  lstm_ = LstmCell::create(c.embed_dim, c.hidden_dim, rng, c.init_scale, c.candidate);
  w_w_ = uniform_param({c.hidden_dim, c.joint_dim}, c.init_scale, rng);
  b_w_ = zero_param({c.joint_dim});
  params_.emplace_back("disc.embed", embedding_.table);
  lstm_.collect("disc.lstm.", params_);
  params_.emplace_back("disc.W_w", w_w_);
  params_.emplace_back("disc.b_w", b_w_);
  if (c.variant == DiscVariant::sentence) {
    w_s_ = uniform_param({c.joint_dim, 1}, c.init_scale, rng);
    b_s_ = zero_param({1});
    params_.emplace_back("disc.w_s", w_s_);
    params_.emplace_back("disc.b_s", b_s_);
  } else {
    w_i_ = uniform_param({c.global_dim + c.local_dim, c.joint_dim}, c.init_scale, rng);
    b_i_ = zero_param({c.joint_dim});
    params_.emplace_back("disc.W_i", w_i_);
    params_.emplace_back("disc.b_i", b_i_);
  }
}

Tensor Discriminator::encode_sentences(std::span<const TokenSeq> captions) const {
  const std::size_t B = captions.size();
  if (B == 0) throw ContractError("discriminator: empty caption batch");
  std::size_t T = 0;
  for (const auto& cap : captions) {
    if (cap.empty()) throw ContractError("discriminator: empty caption");
    T = std::max(T, cap.size());
  }
  LstmState state = LstmState::zeros(B, config_.hidden_dim);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<int> input(B, kNullId);
    Mask live(B, 0);
    bool all = true;
    for (std::size_t b = 0; b < B; ++b) {
      if (t < captions[b].size()) {
        input[b] = captions[b][t];
        live[b] = 1;
      } else {
        all = false;
      }
    }
    LstmState next = lstm_step(lstm_, embed(embedding_, input), state);
    if (all) {
      state = std::move(next);
    } else {
      // Rows past their end keep their final state.
      state = {select_rows(live, next.h, state.h), select_rows(live, next.c, state.c)};
    }
  }
  return linear(w_w_, b_w_, state.h);
}

Tensor Discriminator::pool_image(const SceneBatch& batch) const {
  if (config_.variant != DiscVariant::coherence) throw ContractError("pool_image: sentence variant has no image branch");
  const std::size_t B = batch.size(), L = batch.grid.dim(1), Dg = batch.grid.dim(2);
  const std::size_t K = batch.objects.dim(1), Dl = batch.objects.dim(2);
  if (Dg != config_.global_dim || Dl != config_.local_dim) {
    throw DimensionError("discriminator: scene feature dims do not match the configuration");
  }
  std::vector<double> pooled(B * (Dg + Dl), 0.0);
  const auto g = batch.grid.data();
  const auto o = batch.objects.data();
  for (std::size_t b = 0; b < B; ++b) {
    double* row = pooled.data() + b * (Dg + Dl);
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t j = 0; j < Dg; ++j) row[j] += g[(b * L + l) * Dg + j];
    }
    for (std::size_t j = 0; j < Dg; ++j) row[j] /= static_cast<double>(L);
    std::size_t n = 0;
    for (std::size_t k = 0; k < K; ++k) {
      if (!batch.valid[b * K + k]) continue;
      ++n;
      for (std::size_t j = 0; j < Dl; ++j) row[Dg + j] += o[(b * K + k) * Dl + j];
    }
    if (n == 0) throw ContractError("discriminator: scene without valid objects");
    for (std::size_t j = 0; j < Dl; ++j) row[Dg + j] /= static_cast<double>(n);
  }
  return linear(w_i_, b_i_, Tensor::from({B, Dg + Dl}, std::move(pooled)));
}

Tensor Discriminator::logits(const SceneBatch& batch, std::span<const TokenSeq> captions) const {
  if (batch.size() != captions.size()) throw DimensionError("discriminator: one caption per scene required");
  const Tensor v_w = encode_sentences(captions);
  if (config_.variant == DiscVariant::sentence) {
    return reshape(linear(w_s_, b_s_, v_w), {captions.size()});
  }
  return row_dot(pool_image(batch), v_w);
}

std::vector<double> Discriminator::d_score(const SceneBatch& batch, std::span<const TokenSeq> captions) const {
  const Tensor logit = logits(batch, captions);
  const auto z = logit.data();
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double s = z[i] >= 0 ? 1.0 / (1.0 + std::exp(-z[i])) : std::exp(z[i]) / (1.0 + std::exp(z[i]));
    // Saturated logits still map strictly inside (0, 1).
    p[i] = std::clamp(s, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
  }
  return p;
}

double Discriminator::d_score(const ToyScene& scene, const TokenSeq& caption, std::size_t object_slots) const {
  const SceneBatch batch = make_batch(std::vector<const ToyScene*>{&scene}, object_slots);
  return d_score(batch, std::span<const TokenSeq>(&caption, 1))[0];
}

Tensor Discriminator::d_loss(const SceneBatch& batch, std::span<const TokenSeq> captions,
                             std::span<const double> labels) const {
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw ContractError("d_loss: labels must be 0 or 1");
  }
  return bce_with_logits(logits(batch, captions), labels);
}

}  // namespace hiercap
