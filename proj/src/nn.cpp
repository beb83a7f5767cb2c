#include "hiercap/nn.hpp"

namespace hiercap {

CandidateActivation parse_candidate_activation(const std::string& name) {
  if (name == "tanh") return CandidateActivation::tanh;
  if (name == "sigmoid") return CandidateActivation::sigmoid;
  throw ConfigError("lstm candidate activation must be tanh or sigmoid, got '" + name + "'");
}

std::string to_string(CandidateActivation act) {
  return act == CandidateActivation::tanh ? "tanh" : "sigmoid";
}

Tensor uniform_param(Shape shape, double scale, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-scale, scale);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor zero_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

LstmState LstmState::zeros(std::size_t batch, std::size_t hidden) {
  return {Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden})};
}

LstmCell LstmCell::create(std::size_t input_dim, std::size_t hidden_dim, Rng& rng, double init_scale,
                          CandidateActivation candidate) {
  LstmCell cell;
  cell.input_dim = input_dim;
  cell.hidden_dim = hidden_dim;
  cell.candidate = candidate;
  Tensor* x_weights[] = {&cell.w_xi, &cell.w_xf, &cell.w_xo, &cell.w_xc};
  Tensor* h_weights[] = {&cell.w_hi, &cell.w_hf, &cell.w_ho, &cell.w_hc};
  Tensor* biases[] = {&cell.b_i, &cell.b_f, &cell.b_o, &cell.b_c};
  for (int g = 0; g < 4; ++g) {
    *x_weights[g] = uniform_param({input_dim, hidden_dim}, init_scale, rng);
    *h_weights[g] = uniform_param({hidden_dim, hidden_dim}, init_scale, rng);
    *biases[g] = zero_param({hidden_dim});
  }
  return cell;
}

void LstmCell::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + "W_xi", w_xi);
  out.emplace_back(prefix + "W_hi", w_hi);
  out.emplace_back(prefix + "b_i", b_i);
  out.emplace_back(prefix + "W_xf", w_xf);
  out.emplace_back(prefix + "W_hf", w_hf);
  out.emplace_back(prefix + "b_f", b_f);
  out.emplace_back(prefix + "W_xo", w_xo);
  out.emplace_back(prefix + "W_ho", w_ho);
  out.emplace_back(prefix + "b_o", b_o);
  out.emplace_back(prefix + "W_xc", w_xc);
  out.emplace_back(prefix + "W_hc", w_hc);
  out.emplace_back(prefix + "b_c", b_c);
}

namespace {
Tensor gate_input(const Tensor& z, const Tensor& h, const Tensor& wx, const Tensor& wh, const Tensor& b) {
  return add(add(matmul(z, wx), matmul(h, wh)), b);
}
}  // namespace

LstmState lstm_step(const LstmCell& cell, const Tensor& z, const LstmState& state) {
  if (z.rank() != 2 || z.dim(1) != cell.input_dim) {
    throw DimensionError("lstm_step: input " + shape_str(z.shape()) + " does not match input_dim " +
                         std::to_string(cell.input_dim));
  }
  if (state.h.shape() != state.c.shape() || state.h.rank() != 2 || state.h.dim(1) != cell.hidden_dim ||
      state.h.dim(0) != z.dim(0)) {
    throw DimensionError("lstm_step: state " + shape_str(state.h.shape()) + " does not match hidden_dim " +
                         std::to_string(cell.hidden_dim));
  }
  const Tensor i = sigmoid(gate_input(z, state.h, cell.w_xi, cell.w_hi, cell.b_i));
  const Tensor f = sigmoid(gate_input(z, state.h, cell.w_xf, cell.w_hf, cell.b_f));
  const Tensor o = sigmoid(gate_input(z, state.h, cell.w_xo, cell.w_ho, cell.b_o));
  const Tensor g_pre = gate_input(z, state.h, cell.w_xc, cell.w_hc, cell.b_c);
  const Tensor g = cell.candidate == CandidateActivation::tanh ? tanh(g_pre) : sigmoid(g_pre);
  LstmState next;
  next.c = add(mul(f, state.c), mul(i, g));
  next.h = mul(o, tanh(next.c));
  return next;
}

Embedding Embedding::create(std::size_t vocab, std::size_t dim, Rng& rng, double init_scale) {
  return {uniform_param({vocab, dim}, init_scale, rng)};
}

Tensor embed(const Embedding& embedding, std::span<const int> tokens) {
  return gather_rows(embedding.table, tokens);
}

Tensor linear(const Tensor& w, const Tensor& b, const Tensor& x) {
  Tensor y = matmul(x, w);
  return b.defined() ? add(y, b) : y;
}

}  // namespace hiercap
