#include "hiercap/attention.hpp"

#include <ostream>

#include <json.hpp>

namespace hiercap {

AttentionParams AttentionParams::create(std::size_t feature_dim, std::size_t hidden_dim, std::size_t att_dim,
                                        Rng& rng, double init_scale) {
  AttentionParams p;
  p.w_a = uniform_param({feature_dim, att_dim}, init_scale, rng);
  p.w_h = uniform_param({hidden_dim, att_dim}, init_scale, rng);
  p.b = zero_param({att_dim});
  p.v = uniform_param({att_dim, 1}, init_scale, rng);
  return p;
}

void AttentionParams::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + "W_a", w_a);
  out.emplace_back(prefix + "W_h", w_h);
  out.emplace_back(prefix + "b", b);
  out.emplace_back(prefix + "v", v);
}

AttentionKeys prepare_keys(const AttentionParams& params, const Tensor& feats, Mask mask) {
  if (feats.rank() != 3 || feats.dim(2) != params.feature_dim()) {
    throw DimensionError("attention: features " + shape_str(feats.shape()) + " do not match feature_dim " +
                         std::to_string(params.feature_dim()));
  }
  const std::size_t B = feats.dim(0), L = feats.dim(1), A = params.w_a.dim(1);
  if (!mask.empty() && mask.size() != B * L) throw DimensionError("attention: mask must have one flag per location");
  const Tensor flat = reshape(feats, {B * L, params.feature_dim()});
  Tensor projected = reshape(add(matmul(flat, params.w_a), params.b), {B, L, A});
  return {feats, std::move(projected), std::move(mask)};
}

Tensor attention_scores(const AttentionParams& params, const AttentionKeys& keys, const Tensor& h_prev) {
  const std::size_t B = keys.feats.dim(0), L = keys.feats.dim(1), A = params.w_a.dim(1);
  if (h_prev.rank() != 2 || h_prev.dim(0) != B || h_prev.dim(1) != params.hidden_dim()) {
    throw DimensionError("attention: hidden state " + shape_str(h_prev.shape()) + " does not match hidden_dim " +
                         std::to_string(params.hidden_dim()));
  }
  const Tensor pre = tanh(add_expand(keys.projected, matmul(h_prev, params.w_h)));
  return reshape(matmul(reshape(pre, {B * L, A}), params.v), {B, L});
}

AttentionWeights attend(const AttentionParams& params, const AttentionKeys& keys, const Tensor& h_prev) {
  Tensor alpha = softmax(attention_scores(params, keys, h_prev), keys.mask);
  Tensor z = weighted_pool(alpha, keys.feats);
  return {std::move(alpha), std::move(z)};
}

namespace {
Tensor as_row(const Tensor& h) {
  if (h.rank() == 1) return reshape(h, {1, h.dim(0)});
  if (h.rank() == 2 && h.dim(0) == 1) return h;
  throw DimensionError("attention: single-scene hidden state must be [H] or [1,H], got " + shape_str(h.shape()));
}

Tensor as_batch(const Tensor& feats) {
  if (feats.rank() != 2) throw DimensionError("attention: single-scene features must be [L, D]");
  return reshape(feats, {1, feats.dim(0), feats.dim(1)});
}
}  // namespace

Tensor score(const AttentionParams& params, const Tensor& features, const Tensor& h_prev) {
  const AttentionKeys keys = prepare_keys(params, as_batch(features));
  return reshape(attention_scores(params, keys, as_row(h_prev)), {features.dim(0)});
}

AttentionWeights global_context(const AttentionParams& params, const GlobalFeatures& a, const Tensor& h_prev) {
  const AttentionKeys keys = prepare_keys(params, as_batch(a.a));
  AttentionWeights w = attend(params, keys, as_row(h_prev));
  return {reshape(w.alpha, {a.a.dim(0)}), reshape(w.z, {a.a.dim(1)})};
}

AttentionWeights local_context(const AttentionParams& params, const LocalFeatures& d, const Tensor& h_prev_local,
                               const Tensor& h_prev_global) {
  const std::size_t K = d.d.dim(0);
  if (d.valid.size() != K) throw DimensionError("local_context: valid mask must have one flag per object slot");
  bool any = false;
  for (auto v : d.valid) any = any || v;
  if (!any) throw ContractError("local_context: no valid object slots");
  const AttentionKeys keys = prepare_keys(params, as_batch(d.d), d.valid);
  AttentionWeights w = attend(params, keys, as_row(h_prev_local));
  Tensor z = concat(w.z, as_row(h_prev_global), 1);
  return {reshape(w.alpha, {K}), reshape(z, {z.dim(1)})};
}

void AttentionTrace::write(std::size_t scene, std::size_t step, const std::string& stream,
                           std::span<const double> alpha) {
  nlohmann::json row;
  row["scene"] = scene;
  row["step"] = step;
  row["stream"] = stream;
  row["alpha"] = std::vector<double>(alpha.begin(), alpha.end());
  out_ << row.dump() << '\n';
}

}  // namespace hiercap
