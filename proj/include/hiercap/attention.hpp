#pragma once

#include <iosfwd>
#include <string>

#include "hiercap/nn.hpp"

namespace hiercap {

// Additive scorer e_i = v . tanh(W_a a_i + W_h h + b).
struct AttentionParams {
  Tensor w_a;  // [feature_dim, att_dim]
  Tensor w_h;  // [hidden_dim, att_dim]
  Tensor b;    // [att_dim]
  Tensor v;    // [att_dim, 1]

  static AttentionParams create(std::size_t feature_dim, std::size_t hidden_dim, std::size_t att_dim, Rng& rng,
                                double init_scale = 0.08);
  std::size_t feature_dim() const { return w_a.dim(0); }
  std::size_t hidden_dim() const { return w_h.dim(0); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct GlobalFeatures {
  Tensor a;  // [L, D_g]
};

struct LocalFeatures {
  Tensor d;    // [K, D_l]
  Mask valid;  // K flags; padded slots are 0
};

struct AttentionWeights {
  Tensor alpha;  // [L] / [K], or [B, L] / [B, K] in the batched form
  Tensor z;      // context
};

// Features of a batch with the location-dependent half of the scorer
// precomputed once per sequence.
struct AttentionKeys {
  Tensor feats;      // [B, L, D]
  Tensor projected;  // [B, L, A] = feats W_a + b
  Mask mask;         // B*L flags, empty = all valid
};

AttentionKeys prepare_keys(const AttentionParams& params, const Tensor& feats, Mask mask = {});

// Scores for every location of every batch row: [B, L].
Tensor attention_scores(const AttentionParams& params, const AttentionKeys& keys, const Tensor& h_prev);

// alpha = masked softmax of the scores, z = sum_i alpha_i feats_i.
AttentionWeights attend(const AttentionParams& params, const AttentionKeys& keys, const Tensor& h_prev);

// Single-scene forms. h_prev may be [H] or [1, H].
Tensor score(const AttentionParams& params, const Tensor& features, const Tensor& h_prev);
AttentionWeights global_context(const AttentionParams& params, const GlobalFeatures& a, const Tensor& h_prev);
// z^d = Concat(sum_i alpha^d_i d_i, h_prev_global).
AttentionWeights local_context(const AttentionParams& params, const LocalFeatures& d, const Tensor& h_prev_local,
                               const Tensor& h_prev_global);

// JSON-lines writer for per-step attention weights:
// {"scene": s, "step": t, "stream": "global"|"local", "alpha": [...]}
class AttentionTrace {
 public:
  explicit AttentionTrace(std::ostream& out) : out_(out) {}
  void write(std::size_t scene, std::size_t step, const std::string& stream, std::span<const double> alpha);

 private:
  std::ostream& out_;
};

}  // namespace hiercap
