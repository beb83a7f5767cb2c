#include "hiercap/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace hiercap {
namespace {

using Impl = TensorImpl;

bool needs_record(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

// Gradient buffer of `t`, or nullptr if `t` does not take gradients.
double* grad_of(Impl* t) {
  if (!t->requires_grad) return nullptr;
  t->ensure_grad();
  return t->grad.data();
}

// Builds the output tensor and, when recording, registers `backward`, which is
// invoked with the output impl (values and gradient).
template <class Backward>
Tensor emit(const char* op, Shape shape, std::vector<double> values,
            std::initializer_list<const Tensor*> inputs, Backward&& backward) {
  check_finite(values, op);
  const bool record = needs_record(inputs);
  Tensor out = make_tensor(std::move(shape), std::move(values), record);
  if (record) {
    std::vector<std::shared_ptr<Impl>> ins;
    for (const Tensor* t : inputs) {
      if (t->defined()) ins.push_back(t->shared());
    }
    Impl* out_raw = out.impl();
    Tape::active()->record(std::move(ins), out.shared(),
                           [out_raw, bw = std::forward<Backward>(backward)]() { bw(*out_raw); });
  }
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

// C[m,n] += A[m,k] * B[k,n]; accumulation over k is in ascending order for
// every output element, independent of m.
void gemm_acc(const double* __restrict A, const double* __restrict B, double* __restrict C,
              std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict c = C + i * n;
    const double* __restrict a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      const double* __restrict b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

std::vector<double> transpose(const double* src, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

enum class Broadcast { exact, row };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::exact;
  const std::size_t n = a.shape().back();
  const Shape& bs = b.shape();
  const bool row = (bs.size() == 1 && bs[0] == n) || (bs.size() == 2 && bs[0] == 1 && bs[1] == n);
  if (!row || a.rank() < 1) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(bs));
  }
  return Broadcast::row;
}

template <class Fwd, class GradA, class GradB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, GradA ga, GradB gb) {
  const Broadcast kind = broadcast_kind(a, b, op);
  const std::size_t total = a.numel();
  const std::size_t n = kind == Broadcast::exact ? total : b.numel();
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = fwd(ad[i], bd[i % n]);
  Impl* ai = a.impl();
  Impl* bi = b.impl();
  return emit(op, a.shape(), std::move(out), {&a, &b},
              [ai, bi, total, n, ga, gb](const Impl& node) {
    const std::vector<double>& g = node.grad;
                if (double* da = grad_of(ai)) {
                  for (std::size_t i = 0; i < total; ++i) da[i] += g[i] * ga(ai->data[i], bi->data[i % n]);
                }
                if (double* db = grad_of(bi)) {
                  for (std::size_t i = 0; i < total; ++i) db[i % n] += g[i] * gb(ai->data[i], bi->data[i % n]);
                }
              });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  Impl* ai = a.impl();
  Impl* bi = b.impl();
  return emit("matmul", {m, n}, std::move(out), {&a, &b}, [ai, bi, m, k, n](const Impl& node) {
    const std::vector<double>& g = node.grad;
    if (double* da = grad_of(ai)) {
      const std::vector<double> bt = transpose(bi->data.data(), k, n);
      gemm_acc(g.data(), bt.data(), da, m, n, k);
    }
    if (double* db = grad_of(bi)) {
      const std::vector<double> at = transpose(ai->data.data(), m, k);
      gemm_acc(at.data(), g.data(), db, k, m, n);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * factor;
  Impl* ai = a.impl();
  return emit("scale", a.shape(), std::move(out), {&a}, [ai, factor](const Impl& node) {
    const std::vector<double>& g = node.grad;
    if (double* da = grad_of(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * factor;
    }
  });
}

namespace {
// Unary op whose derivative is expressed through its output value y.
template <class Fwd, class Deriv>
Tensor unary_from_output(const char* op, const Tensor& x, Fwd fwd, Deriv dy) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  Impl* xi = x.impl();
  return emit(op, x.shape(), std::move(out), {&x}, [xi, dy](const Impl& node) {
    const std::vector<double>& g = node.grad;
    if (double* dx = grad_of(xi)) {
      const std::vector<double>& y = node.data;
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * dy(y[i], xi->data[i]);
    }
  });
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary_from_output(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double y, double) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_from_output(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double y, double) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary_from_output(
      "exp", x, [](double v) { return std::exp(v); }, [](double y, double) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw NumericError("log of a non-positive value");
  }
  return unary_from_output(
      "log", x, [](double v) { return std::log(v); }, [](double, double v) { return 1.0 / v; });
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
  switch (op) {
    case Elementwise::add:
      return add(a, b);
    case Elementwise::mul:
      return mul(a, b);
    case Elementwise::sigmoid:
      return sigmoid(a);
    case Elementwise::tanh:
      return tanh(a);
  }
  throw ContractError("unknown elementwise op");
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Impl* xi = x.impl();
  return emit("sum", {1}, {s}, {&x}, [xi](const Impl& node) {
    const std::vector<double>& g = node.grad;
    if (double* dx = grad_of(xi)) {
      for (std::size_t i = 0; i < xi->data.size(); ++i) dx[i] += g[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor softmax(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (x.rank() != 1 && x.rank() != 2) throw DimensionError("softmax: rank must be 1 or 2");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  if (!mask.empty() && mask.size() != x.numel()) throw DimensionError("softmax: mask size mismatch");
  const auto xd = x.data();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * n;
    double* yr = out.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.empty() || mask[r * n + j]) mx = std::max(mx, xr[j]);
    }
    if (!std::isfinite(mx)) throw ContractError("softmax: row has no unmasked entries");
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.empty() || mask[r * n + j]) {
        yr[j] = std::exp(xr[j] - mx);
        z += yr[j];
      }
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  Impl* xi = x.impl();
  return emit("softmax", x.shape(), std::move(out), {&x}, [xi, rows, n](const Impl& node) {
    const std::vector<double>& g = node.grad;
    double* dx = grad_of(xi);
    if (!dx) return;
    const std::vector<double>& y = node.data;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() != 1 && x.rank() != 2) throw DimensionError("log_softmax: rank must be 1 or 2");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xr[j] - lz;
  }
  Impl* xi = x.impl();
  return emit("log_softmax", x.shape(), std::move(out), {&x}, [xi, rows, n](const Impl& node) {
    const std::vector<double>& g = node.grad;
    double* dx = grad_of(xi);
    if (!dx) return;
    const std::vector<double>& y = node.data;
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
      for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * gs;
    }
  });
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (axis >= as.size() || axis >= bs.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range");
  }
  if (as.size() != bs.size()) throw DimensionError("concat: rank mismatch");
  for (std::size_t i = 0; i < as.size(); ++i) {
    if (i != axis && as[i] != bs[i]) {
      throw DimensionError("concat: shapes " + shape_str(as) + " and " + shape_str(bs) + " disagree off-axis");
    }
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= as[i];
  for (std::size_t i = axis + 1; i < as.size(); ++i) inner *= as[i];
  const std::size_t ca = as[axis] * inner, cb = bs[axis] * inner, cc = ca + cb;
  Shape shape = as;
  shape[axis] = as[axis] + bs[axis];
  std::vector<double> out(outer * cc);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(ad.data() + o * ca, ca, out.data() + o * cc);
    std::copy_n(bd.data() + o * cb, cb, out.data() + o * cc + ca);
  }
  Impl* ai = a.impl();
  Impl* bi = b.impl();
  return emit("concat", std::move(shape), std::move(out), {&a, &b}, [ai, bi, outer, ca, cb, cc](const Impl& node) {
    const std::vector<double>& g = node.grad;
    if (double* da = grad_of(ai)) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < ca; ++j) da[o * ca + j] += g[o * cc + j];
    }
    if (double* db = grad_of(bi)) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < cb; ++j) db[o * cb + j] += g[o * cc + ca + j];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t offset, std::size_t length) {
  const Shape& xs = x.shape();
  if (axis >= xs.size()) throw DimensionError("slice: axis out of range");
  if (length == 0 || offset + length > xs[axis]) throw DimensionError("slice: range out of bounds");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t src_stride = xs[axis] * inner, len = length * inner, off = offset * inner;
  Shape shape = xs;
  shape[axis] = length;
  std::vector<double> out(outer * len);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(xd.data() + o * src_stride + off, len, out.data() + o * len);
  Impl* xi = x.impl();
  return emit("slice", std::move(shape), std::move(out), {&x}, [xi, outer, src_stride, len, off](const Impl& node) {
    const std::vector<double>& g = node.grad;
    if (double* dx = grad_of(xi)) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < len; ++j) dx[o * src_stride + off + j] += g[o * len + j];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes size");
  }
  Impl* xi = x.impl();
  std::vector<double> values(x.data().begin(), x.data().end());
  return emit("reshape", std::move(shape), std::move(values), {&x}, [xi](const Impl& node) {
    const std::vector<double>& g = node.grad;
    if (double* dx = grad_of(xi)) {
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "gather_rows");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw VocabularyError("token id " + std::to_string(id) + " outside table of " + std::to_string(vocab) + " rows");
    }
  }
  std::vector<double> out(ids.size() * width);
  const auto td = table.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(td.data() + static_cast<std::size_t>(ids[r]) * width, width, out.data() + r * width);
  }
  Impl* ti = table.impl();
  std::vector<int> idv(ids.begin(), ids.end());
  return emit("gather_rows", {ids.size(), width}, std::move(out), {&table},
              [ti, idv = std::move(idv), width](const Impl& node) {
    const std::vector<double>& g = node.grad;
                if (double* dt = grad_of(ti)) {
                  for (std::size_t r = 0; r < idv.size(); ++r) {
                    double* row = dt + static_cast<std::size_t>(idv[r]) * width;
                    for (std::size_t j = 0; j < width; ++j) row[j] += g[r * width + j];
                  }
                }
              });
}

Tensor pick(const Tensor& x, std::span<const int> index) {
  require_rank(x, 2, "pick");
  const std::size_t rows = x.dim(0), n = x.dim(1);
  if (index.size() != rows) throw DimensionError("pick: one index per row required");
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= n) throw DimensionError("pick: index out of range");
    out[r] = x.data()[r * n + static_cast<std::size_t>(index[r])];
  }
  Impl* xi = x.impl();
  std::vector<int> idx(index.begin(), index.end());
  return emit("pick", {rows}, std::move(out), {&x}, [xi, idx = std::move(idx), n](const Impl& node) {
    const std::vector<double>& g = node.grad;
    if (double* dx = grad_of(xi)) {
      for (std::size_t r = 0; r < idx.size(); ++r) dx[r * n + static_cast<std::size_t>(idx[r])] += g[r];
    }
  });
}

Tensor weighted_nll(const Tensor& logits, std::span<const int> target, std::span<const double> weight,
                    std::span<const std::uint8_t> allowed) {
  require_rank(logits, 2, "weighted_nll");
  const std::size_t rows = logits.dim(0), n = logits.dim(1);
  if (target.size() != rows || weight.size() != rows) throw DimensionError("weighted_nll: per-row target and weight required");
  if (!allowed.empty() && allowed.size() != n) throw DimensionError("weighted_nll: allowed mask must cover every column");
  const auto ld = logits.data();
  // Cached probabilities for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(rows * n, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (weight[r] == 0.0) continue;
    const int t = target[r];
    if (t < 0 || static_cast<std::size_t>(t) >= n || (!allowed.empty() && !allowed[static_cast<std::size_t>(t)])) {
      throw VocabularyError("weighted_nll: target " + std::to_string(t) + " is not an allowed class");
    }
    const double* lr = ld.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (allowed.empty() || allowed[j]) mx = std::max(mx, lr[j]);
    }
    double z = 0.0;
    double* pr = probs->data() + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      if (allowed.empty() || allowed[j]) {
        pr[j] = std::exp(lr[j] - mx);
        z += pr[j];
      }
    }
    for (std::size_t j = 0; j < n; ++j) pr[j] /= z;
    total += weight[r] * -(lr[static_cast<std::size_t>(t)] - mx - std::log(z));
  }
  Impl* li = logits.impl();
  std::vector<int> tv(target.begin(), target.end());
  std::vector<double> wv(weight.begin(), weight.end());
  return emit("weighted_nll", {1}, {total}, {&logits},
              [li, probs, tv = std::move(tv), wv = std::move(wv), n](const Impl& node) {
    const std::vector<double>& g = node.grad;
                double* dl = grad_of(li);
                if (!dl) return;
                for (std::size_t r = 0; r < tv.size(); ++r) {
                  if (wv[r] == 0.0) continue;
                  const double s = g[0] * wv[r];
                  const double* pr = probs->data() + r * n;
                  for (std::size_t j = 0; j < n; ++j) dl[r * n + j] += s * pr[j];
                  dl[r * n + static_cast<std::size_t>(tv[r])] -= s;
                }
              });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> label) {
  const std::size_t rows = logits.numel();
  if (label.size() != rows) throw DimensionError("bce_with_logits: one label per logit required");
  const auto ld = logits.data();
  auto softplus = [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); };
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    // -[y log s(x) + (1-y) log(1-s(x))] = y softplus(-x) + (1-y) softplus(x)
    total += label[r] * softplus(-ld[r]) + (1.0 - label[r]) * softplus(ld[r]);
  }
  total /= static_cast<double>(rows);
  Impl* li = logits.impl();
  std::vector<double> lv(label.begin(), label.end());
  return emit("bce_with_logits", {1}, {total}, {&logits}, [li, lv = std::move(lv)](const Impl& node) {
    const std::vector<double>& g = node.grad;
    double* dl = grad_of(li);
    if (!dl) return;
    const double inv = 1.0 / static_cast<double>(lv.size());
    for (std::size_t r = 0; r < lv.size(); ++r) {
      const double x = li->data[r];
      const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      dl[r] += g[0] * inv * (s - lv[r]);
    }
  });
}

Tensor weighted_pool(const Tensor& alpha, const Tensor& feats) {
  require_rank(alpha, 2, "weighted_pool");
  require_rank(feats, 3, "weighted_pool");
  const std::size_t B = alpha.dim(0), L = alpha.dim(1), D = feats.dim(2);
  if (feats.dim(0) != B || feats.dim(1) != L) {
    throw DimensionError("weighted_pool: alpha " + shape_str(alpha.shape()) + " vs features " + shape_str(feats.shape()));
  }
  const auto ad = alpha.data();
  const auto fd = feats.data();
  std::vector<double> out(B * D, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    double* z = out.data() + b * D;
    for (std::size_t l = 0; l < L; ++l) {
      const double w = ad[b * L + l];
      if (w == 0.0) continue;
      const double* f = fd.data() + (b * L + l) * D;
      for (std::size_t j = 0; j < D; ++j) z[j] += w * f[j];
    }
  }
  Impl* ai = alpha.impl();
  Impl* fi = feats.impl();
  return emit("weighted_pool", {B, D}, std::move(out), {&alpha, &feats}, [ai, fi, B, L, D](const Impl& node) {
    const std::vector<double>& g = node.grad;
    if (double* da = grad_of(ai)) {
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
          const double* f = fi->data.data() + (b * L + l) * D;
          double acc = 0.0;
          for (std::size_t j = 0; j < D; ++j) acc += g[b * D + j] * f[j];
          da[b * L + l] += acc;
        }
    }
    if (double* df = grad_of(fi)) {
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
          const double w = ai->data[b * L + l];
          double* f = df + (b * L + l) * D;
          for (std::size_t j = 0; j < D; ++j) f[j] += w * g[b * D + j];
        }
    }
  });
}

Tensor add_expand(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "add_expand");
  require_rank(b, 2, "add_expand");
  const std::size_t B = a.dim(0), L = a.dim(1), A = a.dim(2);
  if (b.dim(0) != B || b.dim(1) != A) {
    throw DimensionError("add_expand: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  }
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(B * L * A);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < A; ++j) out[(bi * L + l) * A + j] = ad[(bi * L + l) * A + j] + bd[bi * A + j];
  Impl* ai = a.impl();
  Impl* bim = b.impl();
  return emit("add_expand", a.shape(), std::move(out), {&a, &b}, [ai, bim, B, L, A](const Impl& node) {
    const std::vector<double>& g = node.grad;
    if (double* da = grad_of(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (double* db = grad_of(bim)) {
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t l = 0; l < L; ++l)
          for (std::size_t j = 0; j < A; ++j) db[bi * A + j] += g[(bi * L + l) * A + j];
    }
  });
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "row_dot");
  if (a.shape() != b.shape()) throw DimensionError("row_dot: shapes differ");
  const std::size_t B = a.dim(0), E = a.dim(1);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(B, 0.0);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t j = 0; j < E; ++j) out[r] += ad[r * E + j] * bd[r * E + j];
  Impl* ai = a.impl();
  Impl* bi = b.impl();
  return emit("row_dot", {B}, std::move(out), {&a, &b}, [ai, bi, B, E](const Impl& node) {
    const std::vector<double>& g = node.grad;
    if (double* da = grad_of(ai)) {
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < E; ++j) da[r * E + j] += g[r] * bi->data[r * E + j];
    }
    if (double* db = grad_of(bi)) {
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < E; ++j) db[r * E + j] += g[r] * ai->data[r * E + j];
    }
  });
}

Tensor select_rows(std::span<const std::uint8_t> keep_a, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("select_rows: shapes differ");
  const std::size_t rows = a.dim(0);
  if (keep_a.size() != rows) throw DimensionError("select_rows: one flag per row required");
  const std::size_t width = a.numel() / rows;
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = (keep_a[r] ? ad.data() : bd.data()) + r * width;
    std::copy_n(src, width, out.data() + r * width);
  }
  Impl* ai = a.impl();
  Impl* bi = b.impl();
  std::vector<std::uint8_t> keep(keep_a.begin(), keep_a.end());
  return emit("select_rows", a.shape(), std::move(out), {&a, &b}, [ai, bi, keep = std::move(keep), width](const Impl& node) {
    const std::vector<double>& g = node.grad;
    double* da = grad_of(ai);
    double* db = grad_of(bi);
    for (std::size_t r = 0; r < keep.size(); ++r) {
      double* dst = keep[r] ? da : db;
      if (!dst) continue;
      for (std::size_t j = 0; j < width; ++j) dst[r * width + j] += g[r * width + j];
    }
  });
}

Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1) throw DimensionError("take_rows: rank must be >= 1");
  if (rows.empty()) throw DimensionError("take_rows: empty row list");
  const std::size_t n = x.dim(0);
  const std::size_t width = x.numel() / n;
  Shape shape = x.shape();
  shape[0] = rows.size();
  std::vector<double> out(rows.size() * width);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw DimensionError("take_rows: row index out of range");
    std::copy_n(xd.data() + rows[r] * width, width, out.data() + r * width);
  }
  Impl* xi = x.impl();
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return emit("take_rows", std::move(shape), std::move(out), {&x}, [xi, rv = std::move(rv), width](const Impl& node) {
    const std::vector<double>& g = node.grad;
    if (double* dx = grad_of(xi)) {
      for (std::size_t r = 0; r < rv.size(); ++r)
        for (std::size_t j = 0; j < width; ++j) dx[rv[r] * width + j] += g[r * width + j];
    }
  });
}

}  // namespace hiercap
