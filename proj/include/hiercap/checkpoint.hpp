#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hiercap/tensor.hpp"

namespace hiercap {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Named-tensor container. Layout (all integers and floats little-endian):
//
//   bytes 0..7   magic "HCKPT\0\0\1"
//   u32          length of the metadata blob, followed by that many bytes
//                (UTF-8 JSON, may be empty)
//   u32          tensor count N
//   N entries    u32 name length, name bytes, u32 rank, rank x u64 extents
//   N payloads   numel x f64 per tensor, in table order
struct Checkpoint {
  std::string meta;
  NamedTensors tensors;

  const Tensor& get(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies values from `source` into same-named, same-shaped tensors of `target`.
void assign_tensors(NamedTensors& target, const NamedTensors& source, const std::string& prefix = "");

}  // namespace hiercap
