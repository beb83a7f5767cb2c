#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "hiercap/generator.hpp"

namespace hiercap {

enum class DiscVariant { sentence, coherence };
DiscVariant parse_disc_variant(const std::string& name);
std::string to_string(DiscVariant variant);

struct DiscriminatorConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 128;
  std::size_t hidden_dim = 512;
  std::size_t joint_dim = 256;  // E, dimension of V_w and V_i
  std::size_t global_dim = 32;
  std::size_t local_dim = 48;
  DiscVariant variant = DiscVariant::coherence;
  CandidateActivation candidate = CandidateActivation::tanh;
  double init_scale = 0.08;

  void validate() const;
  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json& j);
};

// LSTM sentence encoder followed by either a logistic readout of V_w
// (sentence variant) or sigmoid(V_i . V_w) against pooled image features
// (coherence variant). Captions are fed without START, END included.
class Discriminator {
 public:
  Discriminator(DiscriminatorConfig config, Rng& rng);

  const DiscriminatorConfig& config() const { return config_; }
  // Parameters named disc.embed, disc.lstm.*, disc.W_w, disc.b_w and either
  // disc.w_s, disc.b_s (sentence) or disc.W_i, disc.b_i (coherence).
  const NamedTensors& parameters() const { return params_; }

  // Pretraining gate: scoring an untrained discriminator for rewards is a
  // contract violation.
  bool pretrained() const { return pretrained_; }
  void mark_pretrained(bool flag = true) { pretrained_ = flag; }

  Tensor encode_sentences(std::span<const TokenSeq> captions) const;  // V_w, [B, E]
  Tensor pool_image(const SceneBatch& batch) const;                     // V_i, [B, E]

  // Pre-sigmoid scores, [B].
  Tensor logits(const SceneBatch& batch, std::span<const TokenSeq> captions) const;
  // Probabilities of being a reference caption, one per row.
  std::vector<double> d_score(const SceneBatch& batch, std::span<const TokenSeq> captions) const;
  double d_score(const ToyScene& scene, const TokenSeq& caption, std::size_t object_slots) const;

  // Mean binary cross-entropy against labels (1 real, 0 generated).
  Tensor d_loss(const SceneBatch& batch, std::span<const TokenSeq> captions, std::span<const double> labels) const;

 private:
  DiscriminatorConfig config_;
  Embedding embedding_;
  LstmCell lstm_;
  Tensor w_w_, b_w_;
  Tensor w_s_, b_s_;
  Tensor w_i_, b_i_;
  NamedTensors params_;
  bool pretrained_ = false;
};

}  // namespace hiercap
