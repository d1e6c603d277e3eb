#pragma once

#include "kt/layers.hpp"

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace kt::nn {

inline constexpr int kCheckpointVersion = 1;

// Binary layout: magic "KTCKPT\0\1", u64 header length, header JSON, u64 block count,
// then per block: u32 name length, name, u32 rank, u64 dims, f64 values. All integers
// and floats little-endian.
struct Checkpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> blocks;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// Throws std::runtime_error on malformed input.
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies block values into matching parameters; every parameter must be present with
// the same shape and no block may be left over.
void load_parameters(ParameterStore& store, const Checkpoint& checkpoint);
std::vector<std::pair<std::string, Tensor>> parameter_blocks(const ParameterStore& store);

}  // namespace kt::nn
