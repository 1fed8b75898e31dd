#pragma once

// Named-parameter binary checkpoints.
//
// Layout (all integers little-endian):
//   "KGAC" magic, u32 version,  u32 parameter count
//   per parameter: u32 name length, name bytes, u32 rank, u64 dims[rank],
//                  float32 payload (row-major)

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgalign/autodiff.hpp"

namespace kgalign {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NamedTensors = std::map<std::string, Tensor<float>>;

std::string encode_checkpoint(const std::vector<const Parameter<float>*>& params);
NamedTensors decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<const Parameter<float>*>& params);
NamedTensors load_checkpoint(const std::filesystem::path& path);

// Copies matching tensors into `params`; every parameter must be present with
// an identical shape.
void assign_parameters(const NamedTensors& tensors, const std::vector<Parameter<float>*>& params);

}  // namespace kgalign
