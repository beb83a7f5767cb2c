#include "hiercap/optim.hpp"

#include <algorithm>
#include <cmath>

namespace hiercap {

Adam::Adam(NamedTensors params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& entry : params_) {
    m_.emplace_back(entry.second.numel(), 0.0);
    v_.emplace_back(entry.second.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor& param = params_[p].second;
    const auto grad = param.grad();
    auto data = param.mutable_data();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      data[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& entry : params_) entry.second.zero_grad();
}

NamedTensors Adam::state(const std::string& prefix) const {
  NamedTensors out;
  for (std::size_t p = 0; p < params_.size(); ++p) {
    const Shape& shape = params_[p].second.shape();
    out.emplace_back(prefix + "m." + params_[p].first, Tensor::from(shape, m_[p]));
    out.emplace_back(prefix + "v." + params_[p].first, Tensor::from(shape, v_[p]));
  }
  return out;
}

void Adam::restore(const Checkpoint& ckpt, const std::string& prefix, std::uint64_t steps) {
  for (std::size_t p = 0; p < params_.size(); ++p) {
    const auto m = ckpt.get(prefix + "m." + params_[p].first).data();
    const auto v = ckpt.get(prefix + "v." + params_[p].first).data();
    if (m.size() != m_[p].size() || v.size() != v_[p].size()) throw DataError("optimizer state shape mismatch");
    std::copy(m.begin(), m.end(), m_[p].begin());
    std::copy(v.begin(), v.end(), v_[p].begin());
  }
  t_ = steps;
}

}  // namespace hiercap
