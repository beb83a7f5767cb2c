#pragma once

#include <span>
#include <string>

#include "hiercap/checkpoint.hpp"
#include "hiercap/ops.hpp"
#include "hiercap/rng.hpp"

namespace hiercap {

enum class CandidateActivation { tanh, sigmoid };

CandidateActivation parse_candidate_activation(const std::string& name);
std::string to_string(CandidateActivation act);

// Weights uniform in [-scale, scale], flagged trainable.
Tensor uniform_param(Shape shape, double scale, Rng& rng);
Tensor zero_param(Shape shape);

struct LstmState {
  Tensor h;  // [batch, hidden]
  Tensor c;  // [batch, hidden]

  static LstmState zeros(std::size_t batch, std::size_t hidden);
};

// Four-gate LSTM cell: i, f, o use sigmoid; the candidate g uses tanh unless
// configured otherwise. W_x* are [input_dim, hidden_dim], W_h* are
// [hidden_dim, hidden_dim], biases [hidden_dim].
struct LstmCell {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  CandidateActivation candidate = CandidateActivation::tanh;

  Tensor w_xi, w_hi, b_i;
  Tensor w_xf, w_hf, b_f;
  Tensor w_xo, w_ho, b_o;
  Tensor w_xc, w_hc, b_c;

  static LstmCell create(std::size_t input_dim, std::size_t hidden_dim, Rng& rng, double init_scale = 0.08,
                         CandidateActivation candidate = CandidateActivation::tanh);

  void collect(const std::string& prefix, NamedTensors& out) const;
};

LstmState lstm_step(const LstmCell& cell, const Tensor& z, const LstmState& state);

struct Embedding {
  Tensor table;  // [vocab, embed_dim]

  static Embedding create(std::size_t vocab, std::size_t dim, Rng& rng, double init_scale = 0.08);
  std::size_t vocab_size() const { return table.dim(0); }
  std::size_t dim() const { return table.dim(1); }
};

// Row gather of `tokens`; result [tokens.size(), embed_dim].
Tensor embed(const Embedding& embedding, std::span<const int> tokens);

// x [batch, in] * w [in, out] (+ b [out] when defined).
Tensor linear(const Tensor& w, const Tensor& b, const Tensor& x);

}  // namespace hiercap
