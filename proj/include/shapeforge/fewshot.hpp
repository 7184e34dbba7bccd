#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "shapeforge/geometry.hpp"
#include "shapeforge/latentspace.hpp"
#include "shapeforge/model.hpp"

namespace shapeforge {

// h(z) = z + fc2(relu(bn(fc1(z)))). fc2 starts near zero so h starts near identity.
class MappingNetImpl : public torch::nn::Module {
 public:
  explicit MappingNetImpl(int64_t dim, int64_t hidden = 0);
  torch::Tensor forward(const torch::Tensor& z);
  // Zeroes the residual branch: h(z) == z exactly.
  void set_identity();
  int64_t dim() const { return dim_; }
  int64_t hidden() const { return hidden_; }

 private:
  int64_t dim_;
  int64_t hidden_;
  torch::nn::Linear fc1_{nullptr};
  torch::nn::BatchNorm1d bn_{nullptr};
  torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(MappingNet);

// DCGAN discriminator without normalisation layers; one scalar per image.
class CriticImpl : public torch::nn::Module {
 public:
  CriticImpl(int64_t channels, int64_t resolution, int64_t base_width = 32);
  torch::Tensor forward(const torch::Tensor& images);  // [B, C, R, R] -> [B]

 private:
  torch::nn::ModuleList convs_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Critic);

using CriticFn = std::function<torch::Tensor(const torch::Tensor&)>;

// lambda * mean over x = u real + (1 - u) fake of (|grad_x D(x)|_2 - 1)^2.
// Differentiable w.r.t. the critic parameters.
torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& real, const torch::Tensor& fake,
                               double lambda = 10.0, std::optional<at::Generator> generator = std::nullopt);

// Mean |grad_x D(x)| at random interpolates, detached.
double interpolate_grad_norm(const CriticFn& critic, const torch::Tensor& real, const torch::Tensor& fake);

struct AdaptConfig {
  int steps = 300;          // mapping updates
  int critic_steps = 5;     // critic updates per mapping update
  double lambda_gp = 10.0;
  double lr_mapping = 1e-4;
  double lr_critic = 1e-4;
  int batch = 16;
  int64_t critic_width = 32;
  int64_t hidden = 0;       // 0: same as the code dimension
  uint64_t seed = 0;
  int log_every = 10;
};

struct AdaptLog {
  int step = 0;
  double critic_loss = 0.0;
  double mapping_loss = 0.0;
  double penalty = 0.0;
  double grad_norm = 0.0;
};

struct Adaptation {
  MappingNet mapping{nullptr};
  Critic critic{nullptr};
  Modality modality = Modality::Render;
  std::string base_hash;  // decoder hash of the frozen model
  AdaptConfig config;
  std::vector<AdaptLog> history;
};

// WGAN-GP on h with the generators frozen. Examples are [C, R, R] images in [0, 1]
// of the given modality; fake images use a random view from `views` per sample.
Adaptation adapt(MMVAD& model, const std::vector<torch::Tensor>& examples, Modality modality,
                 const std::vector<Viewpoint>& views, const AdaptConfig& config);

// h applied to n prior draws; deterministic per seed.
std::vector<JointLatentCode> sample_adapted(MappingNet& mapping, int64_t n, uint64_t seed, const LatentDims& dims);

inline constexpr int kMappingSchemaVersion = 1;

void save_adaptation(const Adaptation& adaptation, const std::filesystem::path& dir);
// Fails with base_mismatch when `expected_base_hash` is non-empty and differs.
Adaptation load_adaptation(const std::filesystem::path& dir, const std::string& expected_base_hash = "");

}  // namespace shapeforge
