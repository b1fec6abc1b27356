#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hyperadapt/model.hpp"

namespace hyperadapt {

/// Corrupt, truncated, or mismatched checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  ModelSpec spec;
  KeyValues metadata;
  std::vector<NamedArray> params;

  const std::string* meta(std::string_view key) const;
};

// Byte layout (all integers and floats little-endian):
//   magic   "HADCKPT\0"                      8 bytes
//   version u32 = 1
//   n_kv    u32, then n_kv x {u32 len, key bytes, u32 len, value bytes}
//           keys are "model.<field>" (ModelSpec) or "meta.<name>"
//   n_param u32, then n_param x {u32 len, name, u32 rank, u64 dims[rank],
//                                f64 values[prod(dims)]}
//   fnv1a64 u64 over every preceding byte
std::vector<std::uint8_t> encode_checkpoint(const ModelSpec& spec, const ParameterStore& params,
                                            const KeyValues& metadata = {});
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model, const KeyValues& metadata = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every stored array into the model's parameter of the same name.
void restore_parameters(Model& model, const Checkpoint& checkpoint);
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& checkpoint);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace hyperadapt
