#include "shapeforge/archive.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "shapeforge/error.hpp"

namespace shapeforge {
namespace {

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

template <typename T>
void put(std::string& out, const T& value) {
  out.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

std::string serialize(const NamedTensors& tensors) {
  std::string out;
  for (const auto& [name, tensor] : tensors) {
    put(out, static_cast<uint32_t>(name.size()));
    out += name;
    put(out, static_cast<uint32_t>(tensor.dim()));
    for (int64_t d : tensor.sizes()) put(out, d);
    auto data = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    out.append(reinterpret_cast<const char*>(data.data_ptr<float>()), data.numel() * sizeof(float));
  }
  return out;
}

}  // namespace

void write_tensor_blob(const std::filesystem::path& path, const NamedTensors& tensors) {
  const std::string bytes = serialize(tensors);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("io_error", "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

NamedTensors read_tensor_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("io_error", "cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  size_t pos = 0;
  auto take = [&](void* dst, size_t n) {
    if (pos + n > bytes.size()) fail("truncated_blob", path.filename().string() + " is truncated");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  NamedTensors tensors;
  while (pos < bytes.size()) {
    uint32_t name_len = 0, ndim = 0;
    take(&name_len, sizeof(name_len));
    std::string name(name_len, '\0');
    take(name.data(), name_len);
    take(&ndim, sizeof(ndim));
    if (ndim > 8) fail("truncated_blob", path.filename().string() + ": implausible rank for " + name);
    std::vector<int64_t> dims(ndim);
    take(dims.data(), ndim * sizeof(int64_t));
    auto tensor = torch::empty(dims, torch::kFloat32);
    take(tensor.data_ptr<float>(), tensor.numel() * sizeof(float));
    tensors.emplace_back(std::move(name), std::move(tensor));
  }
  return tensors;
}

NamedTensors module_state(const torch::nn::Module& module) {
  NamedTensors out;
  for (const auto& item : module.named_parameters(true)) out.emplace_back(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) out.emplace_back(item.key(), item.value());
  return out;
}

void load_module_state(torch::nn::Module& module, const NamedTensors& tensors, const std::string& what) {
  std::map<std::string, torch::Tensor> by_name(tensors.begin(), tensors.end());
  torch::NoGradGuard no_grad;
  auto assign = [&](const std::string& name, torch::Tensor& target) {
    auto it = by_name.find(name);
    if (it == by_name.end()) fail("schema_mismatch", what + ": missing tensor " + name);
    if (it->second.sizes() != target.sizes()) fail("schema_mismatch", what + ": shape mismatch for " + name);
    target.copy_(it->second.to(target.scalar_type()));
    by_name.erase(it);
  };
  for (auto& item : module.named_parameters(true)) assign(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) assign(item.key(), item.value());
  if (!by_name.empty()) fail("schema_mismatch", what + ": unexpected tensor " + by_name.begin()->first);
}

std::string sha256_hex(const void* data, size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

std::string state_hash(const torch::nn::Module& module) {
  const std::string bytes = serialize(module_state(module));
  return sha256_hex(bytes.data(), bytes.size());
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) fail("io_error", "cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace shapeforge
