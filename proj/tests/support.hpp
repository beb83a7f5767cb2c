#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hiercap/checkpoint.hpp"
#include "hiercap/discriminator.hpp"
#include "hiercap/ops.hpp"
#include "hiercap/toyscene.hpp"
#include "hiercap/vocab.hpp"

namespace testing {

struct GradReport {
  double max_rel = 0.0;
  std::string worst;  // "name[index]"
  std::size_t entries = 0;
  double analytic = 0.0, numeric = 0.0;  // at the worst entry
};

// Central finite differences against the tape gradient of `loss_fn` for
// every entry of every tensor in `params`. The relative error uses
// max(|analytic|, floor) as the denominator.
inline GradReport grad_check(const hiercap::NamedTensors& params, const std::function<hiercap::Tensor()>& loss_fn,
                             double h = 1e-5, double floor = 1e-8) {
  using namespace hiercap;
  for (const auto& [name, p] : params) {
    Tensor t = p;
    t.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  GradReport report;
  for (const auto& [name, p] : params) {
    Tensor t = p;
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end()) : std::vector<double>(t.numel(), 0.0);
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss_fn().item();
      data[i] = saved - h;
      const double down = loss_fn().item();
      data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double rel = std::abs(analytic[i] - fd) / std::max(std::abs(analytic[i]), floor);
      ++report.entries;
      if (rel > report.max_rel) {
        report.max_rel = rel;
        report.worst = name + "[" + std::to_string(i) + "]";
        report.analytic = analytic[i];
        report.numeric = fd;
      }
    }
  }
  for (const auto& [name, p] : params) {
    Tensor t = p;
    t.zero_grad();
  }
  return report;
}

// Scenes small enough for finite differences over every parameter.
inline hiercap::ToySceneConfig small_scene_config() {
  hiercap::ToySceneConfig c;
  c.grid_side = 5;
  c.global_dim = 8;
  c.local_dim = 6;
  c.object_slots = 6;
  c.max_objects = 3;
  c.min_clutter = 1;
  c.max_clutter = 2;
  return c;
}

inline std::vector<hiercap::ToyScene> small_scenes(std::size_t n, std::uint64_t seed,
                                                   const hiercap::ToySceneConfig& config = small_scene_config()) {
  std::vector<hiercap::ToyScene> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(hiercap::generate_scene(config, seed + i, "s" + std::to_string(i)));
  return out;
}

// Every word of the references, no threshold.
inline hiercap::Vocabulary vocab_of(const std::vector<hiercap::ToyScene>& scenes) {
  return hiercap::Vocabulary::build(hiercap::all_references(scenes), 1, false);
}

inline hiercap::GeneratorConfig tiny_generator(std::size_t vocab, const hiercap::ToySceneConfig& scenes) {
  hiercap::GeneratorConfig g;
  g.vocab_size = vocab;
  g.embed_dim = 5;
  g.hidden_dim = 4;
  g.att_dim = 3;
  g.global_dim = scenes.global_dim;
  g.local_dim = scenes.local_dim;
  g.object_slots = scenes.object_slots;
  g.init_scale = 1.0;
  return g;
}

inline hiercap::DiscriminatorConfig tiny_discriminator(std::size_t vocab, const hiercap::ToySceneConfig& scenes,
                                                      hiercap::DiscVariant variant) {
  hiercap::DiscriminatorConfig d;
  d.vocab_size = vocab;
  d.embed_dim = 5;
  d.hidden_dim = 4;
  d.joint_dim = 3;
  d.global_dim = scenes.global_dim;
  d.local_dim = scenes.local_dim;
  d.variant = variant;
  d.init_scale = 1.0;
  return d;
}

inline std::vector<double> values(const hiercap::Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace testing
