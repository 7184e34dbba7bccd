#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace shapeforge {

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

// Blob layout, repeated per tensor, all integers little-endian:
//   u32 name length | name bytes | u32 ndim | i64 dims[ndim] | float32 data[prod(dims)]
void write_tensor_blob(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_tensor_blob(const std::filesystem::path& path);

// Parameters followed by buffers, in registration order.
NamedTensors module_state(const torch::nn::Module& module);
// Copies values into the module; names and shapes must match exactly.
void load_module_state(torch::nn::Module& module, const NamedTensors& tensors, const std::string& what);

std::string sha256_hex(const void* data, size_t size);
// Hash over names, shapes and float32 values of the module state.
std::string state_hash(const torch::nn::Module& module);

void atomic_write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace shapeforge
