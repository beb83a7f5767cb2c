#include <doctest.h>

#include <cmath>

#include "hiercap/nn.hpp"
#include "hiercap/optim.hpp"
#include "support.hpp"

using namespace hiercap;
using testing::grad_check;
using testing::values;

namespace {

LstmCell zero_cell(std::size_t in, std::size_t hidden) {
  Rng rng(0);
  LstmCell cell = LstmCell::create(in, hidden, rng);
  for (Tensor* t : {&cell.w_xi, &cell.w_hi, &cell.b_i, &cell.w_xf, &cell.w_hf, &cell.b_f, &cell.w_xo, &cell.w_ho,
                    &cell.b_o, &cell.w_xc, &cell.w_hc, &cell.b_c}) {
    for (double& v : t->mutable_data()) v = 0.0;
  }
  return cell;
}

Tensor random_input(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.normal();
  return Tensor::from({rows, cols}, v);
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("lstm cell parameter shapes") {
  Rng rng(1);
  const LstmCell cell = LstmCell::create(5, 3, rng);
  CHECK(cell.w_xi.shape() == Shape{5, 3});
  CHECK(cell.w_hc.shape() == Shape{3, 3});
  CHECK(cell.b_o.shape() == Shape{3});
  for (double v : cell.w_xf.data()) CHECK(std::abs(v) <= 0.08);
  for (double v : cell.b_f.data()) CHECK(v == 0.0);
  NamedTensors named;
  cell.collect("gen.lstm_g.", named);
  CHECK(named.size() == 12);
  CHECK(named.front().first.rfind("gen.lstm_g.", 0) == 0);
}

TEST_CASE("zero cell gives zero state") {
  const LstmCell cell = zero_cell(4, 3);
  Rng rng(2);
  const LstmState next = lstm_step(cell, random_input(2, 4, rng), LstmState::zeros(2, 3));
  for (double v : next.h.data()) CHECK(v == 0.0);
  for (double v : next.c.data()) CHECK(v == 0.0);
}

TEST_CASE("saturated forget gate conserves the cell") {
  LstmCell cell = zero_cell(4, 3);
  for (double& v : cell.b_f.mutable_data()) v = 40.0;
  for (double& v : cell.b_i.mutable_data()) v = -40.0;
  Rng rng(3);
  LstmState state{Tensor::zeros({1, 3}), Tensor::from({1, 3}, {0.7, -1.2, 0.3})};
  const auto c0 = values(state.c);
  for (int t = 0; t < 20; ++t) state = lstm_step(cell, random_input(1, 4, rng), state);
  const auto c = values(state.c);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(c[i] - c0[i]) < 1e-9);
}

TEST_CASE("lstm step is deterministic and checks dims") {
  Rng rng(4);
  const LstmCell cell = LstmCell::create(4, 3, rng);
  const Tensor z = random_input(2, 4, rng);
  const LstmState s = LstmState::zeros(2, 3);
  CHECK(values(lstm_step(cell, z, s).h) == values(lstm_step(cell, z, s).h));
  CHECK_THROWS_AS(lstm_step(cell, random_input(2, 5, rng), s), DimensionError);
  CHECK_THROWS_AS(lstm_step(cell, z, LstmState::zeros(2, 4)), DimensionError);
}

TEST_CASE("sigmoid candidate switch changes the cell") {
  Rng a(5), b(5);
  const LstmCell t = LstmCell::create(3, 2, a, 0.5, CandidateActivation::tanh);
  const LstmCell s = LstmCell::create(3, 2, b, 0.5, CandidateActivation::sigmoid);
  Rng rng(6);
  const Tensor z = random_input(1, 3, rng);
  CHECK(values(lstm_step(t, z, LstmState::zeros(1, 2)).h) != values(lstm_step(s, z, LstmState::zeros(1, 2)).h));
  CHECK(parse_candidate_activation("sigmoid") == CandidateActivation::sigmoid);
  CHECK_THROWS_AS(parse_candidate_activation("relu"), ConfigError);
}

TEST_CASE("lstm gradients match finite differences") {
  Rng rng(7);
  const LstmCell cell = LstmCell::create(4, 3, rng, 0.5);
  NamedTensors params;
  cell.collect("", params);
  const Tensor z1 = random_input(2, 4, rng), z2 = random_input(2, 4, rng);
  const auto report = grad_check(params, [&] {
    LstmState s = lstm_step(cell, z1, LstmState::zeros(2, 3));
    s = lstm_step(cell, z2, s);
    return sum(add(s.h, scale(s.c, 0.3)));
  });
  INFO(report.worst);
  CHECK(report.max_rel < 1e-4);
}

TEST_CASE("embedding lookup") {
  Rng rng(8);
  const Embedding e = Embedding::create(5, 4, rng);
  const std::vector<int> zero = {0};
  CHECK(values(embed(e, zero)) == std::vector<double>(e.table.data().begin(), e.table.data().begin() + 4));

  // One-hot rows times the table reproduce the gather.
  const std::vector<int> ids = {3, 1, 4, 3};
  std::vector<double> onehot(ids.size() * 5, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) onehot[i * 5 + static_cast<std::size_t>(ids[i])] = 1.0;
  CHECK(values(embed(e, ids)) == values(matmul(Tensor::from({4, 5}, onehot), e.table)));

  const std::vector<int> bad = {5};
  CHECK_THROWS_AS(embed(e, bad), VocabularyError);
  const std::vector<int> negative = {-1};
  CHECK_THROWS_AS(embed(e, negative), VocabularyError);
}

TEST_CASE("embedding gradient scatters to gathered rows") {
  Rng rng(9);
  Embedding e = Embedding::create(5, 4, rng);
  const std::vector<int> ids = {2, 2};
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(embed(e, ids)));
  }
  const auto g = e.table.grad();
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(g[r * 4 + c] == (r == 2 ? 2.0 : 0.0));
  }
}

TEST_CASE("linear layer") {
  Rng rng(10);
  const Tensor x = random_input(3, 4, rng);
  CHECK(values(linear(Tensor::identity(4), Tensor::zeros({4}), x)) == values(x));
  const Tensor b = Tensor::from({2}, {0.5, -1.5});
  CHECK(values(linear(Tensor::zeros({4, 2}), b, Tensor::zeros({1, 4}))) == std::vector<double>{0.5, -1.5});
  CHECK(linear(Tensor::zeros({1024, 7}), Tensor(), Tensor::zeros({2, 1024})).shape() == Shape{2, 7});
}

TEST_CASE("adam decreases a quadratic and round trips its state") {
  Tensor w = Tensor::from({2}, {3.0, -2.0}, true);
  Adam opt({{"w", w}}, AdamConfig{0.1});
  double before = 0.0;
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(mul(w, w));
    if (i == 0) before = loss.item();
    tape.backward(loss);
    opt.step();
  }
  CHECK(sum(mul(w, w)).item() < 1e-2 * before);
  CHECK(opt.steps() == 200);

  Checkpoint ckpt;
  ckpt.tensors = opt.state("opt.");
  Tensor w2 = w.detach();
  w2.set_requires_grad(true);
  Adam restored({{"w", w2}}, AdamConfig{0.1});
  restored.restore(ckpt, "opt.", opt.steps());
  for (Adam* o : {&opt, &restored}) {
    o->params()[0].second.impl()->ensure_grad();
    o->params()[0].second.impl()->grad = {0.3, -0.1};
    o->step();
  }
  CHECK(values(w) == values(w2));
}

}  // TEST_SUITE
