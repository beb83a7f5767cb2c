#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hiercap/tensor.hpp"

// Differentiable primitives. Every op validates shapes (DimensionError),
// rejects non-finite results (NumericError) and records its local gradient on
// the active tape when any input requires a gradient.
namespace hiercap {

using Mask = std::vector<std::uint8_t>;  // 1 = keep, 0 = excluded

Tensor matmul(const Tensor& a, const Tensor& b);

// `b` must match `a` exactly or be a row vector ([n] or [1,n]) broadcast over
// every leading index of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

enum class Elementwise { add, mul, sigmoid, tanh };
Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b = {});

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Softmax over the last axis of a rank-1 or rank-2 tensor. Entries with
// mask 0 get probability exactly 0 and receive no gradient; every row needs at
// least one kept entry.
Tensor softmax(const Tensor& x, std::span<const std::uint8_t> mask = {});
Tensor log_softmax(const Tensor& x);

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t offset, std::size_t length);
Tensor reshape(const Tensor& x, Shape shape);

// rows of `table` selected by `ids`; result [ids.size(), table.dim(1)].
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

// x[b, index[b]] for x of shape [B, V].
Tensor pick(const Tensor& x, std::span<const int> index);

// sum_b weight[b] * -log softmax(logits[b])[target[b]], softmax restricted to
// columns with allowed[v] = 1 (all columns when `allowed` is empty). Rows with
// weight exactly 0 contribute nothing, including gradient.
Tensor weighted_nll(const Tensor& logits, std::span<const int> target,
                    std::span<const double> weight, std::span<const std::uint8_t> allowed = {});

// mean_b BCE(sigmoid(logit[b]), label[b]), computed from logits.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> label);

// z[b] = sum_l alpha[b,l] * feats[b,l,:]; alpha [B,L], feats [B,L,D] -> [B,D].
Tensor weighted_pool(const Tensor& alpha, const Tensor& feats);

// a [B,L,A] + b [B,A] broadcast along the middle axis.
Tensor add_expand(const Tensor& a, const Tensor& b);

// Row-wise dot product of two [B,E] tensors -> [B].
Tensor row_dot(const Tensor& a, const Tensor& b);

// Row b of the result is a[b] where keep_a[b] is set, otherwise b[b].
Tensor select_rows(std::span<const std::uint8_t> keep_a, const Tensor& a, const Tensor& b);

// Rows of x (leading axis) at `rows`, in order, with repetition allowed.
Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows);

}  // namespace hiercap
