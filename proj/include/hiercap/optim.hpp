#pragma once

#include <cstdint>

#include "hiercap/checkpoint.hpp"

namespace hiercap {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed parameter list. Parameters without an accumulated
// gradient are treated as having gradient zero.
class Adam {
 public:
  Adam(NamedTensors params, AdamConfig config);

  void step();
  void zero_grad();

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  std::uint64_t steps() const { return t_; }
  const NamedTensors& params() const { return params_; }

  // Moment buffers as named tensors ("<prefix>m.<name>", "<prefix>v.<name>")
  // for checkpointing; restore() expects the same layout.
  NamedTensors state(const std::string& prefix) const;
  void restore(const Checkpoint& ckpt, const std::string& prefix, std::uint64_t steps);

 private:
  NamedTensors params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace hiercap
