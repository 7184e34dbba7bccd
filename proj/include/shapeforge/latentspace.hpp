#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace shapeforge {

struct LatentDims {
  int64_t shape = 32;
  int64_t color = 32;

  int64_t total() const { return shape + color; }
  bool operator==(const LatentDims&) const = default;
};

// z = z_s (+) z_c. Tensors may carry leading batch dimensions; the last
// dimension is the code axis.
struct JointLatentCode {
  torch::Tensor shape;
  torch::Tensor color;

  torch::Tensor full() const { return torch::cat({shape, color}, -1); }
  LatentDims dims() const { return {shape.size(-1), color.size(-1)}; }

  static JointLatentCode split(const torch::Tensor& full, int64_t shape_dim);
  static JointLatentCode zeros(const LatentDims& dims, torch::Dtype dtype = torch::kFloat32);
  JointLatentCode clone() const { return {shape.detach().clone(), color.detach().clone()}; }
};

// Diagonal Gaussian q(z) = N(mu, diag(exp(log_var))).
struct PosteriorParams {
  torch::Tensor mu;
  torch::Tensor log_var;
};

// Learnable per-instance posteriors; one row per training instance id in [0, N).
class CodeBookImpl : public torch::nn::Module {
 public:
  CodeBookImpl(int64_t instances, LatentDims dims);

  // mu ~ N(0, init_std^2), log_var = init_log_var; draws from the global torch RNG.
  void reset_parameters(double init_std = 0.01, double init_log_var = -6.0);

  PosteriorParams entry(int64_t id) const;
  PosteriorParams gather(const torch::Tensor& ids) const;
  int64_t size() const { return mu.size(0); }
  const LatentDims& dims() const { return dims_; }

  torch::Tensor mu;
  torch::Tensor log_var;

 private:
  LatentDims dims_;
};
TORCH_MODULE(CodeBook);

// mu + exp(0.5 log_var) * noise, split into the two subspaces.
JointLatentCode reparameterize(const PosteriorParams& params, const torch::Tensor& noise, int64_t shape_dim);

// KL(q || N(0, I)) summed over the code axis.
torch::Tensor kl_to_standard_normal(const PosteriorParams& params);

// gamma * max(|z|^2, beta) over the code axis. At |z|^2 == beta the gradient
// follows the |z|^2 branch.
torch::Tensor reg_loss(const torch::Tensor& z, double gamma = 0.02, double beta = 0.5);
inline torch::Tensor reg_loss(const JointLatentCode& z, double gamma = 0.02, double beta = 0.5) {
  return reg_loss(z.full(), gamma, beta);
}

// i.i.d. N(0, 1) code, a pure function of the seed.
JointLatentCode sample_prior(const LatentDims& dims, uint64_t seed, torch::Dtype dtype = torch::kFloat32);

}  // namespace shapeforge
