#include "shapeforge/latentspace.hpp"

#include "shapeforge/error.hpp"
#include "shapeforge/random.hpp"

namespace shapeforge {

JointLatentCode JointLatentCode::split(const torch::Tensor& full, int64_t shape_dim) {
  require(shape_dim >= 0 && shape_dim <= full.size(-1), "dim_mismatch", "shape dimension exceeds code length");
  return {full.narrow(-1, 0, shape_dim), full.narrow(-1, shape_dim, full.size(-1) - shape_dim)};
}

JointLatentCode JointLatentCode::zeros(const LatentDims& dims, torch::Dtype dtype) {
  return {torch::zeros({dims.shape}, dtype), torch::zeros({dims.color}, dtype)};
}

CodeBookImpl::CodeBookImpl(int64_t instances, LatentDims dims) : dims_(dims) {
  require(instances > 0, "invalid_config", "codebook needs at least one instance");
  mu = register_parameter("mu", torch::zeros({instances, dims.total()}));
  log_var = register_parameter("log_var", torch::zeros({instances, dims.total()}));
  reset_parameters();
}

void CodeBookImpl::reset_parameters(double init_std, double init_log_var) {
  torch::NoGradGuard no_grad;
  mu.normal_(0.0, init_std);
  log_var.fill_(init_log_var);
}

PosteriorParams CodeBookImpl::entry(int64_t id) const {
  require(id >= 0 && id < size(), "unknown_instance", "instance id " + std::to_string(id) + " out of range");
  return {mu[id], log_var[id]};
}

PosteriorParams CodeBookImpl::gather(const torch::Tensor& ids) const {
  return {mu.index_select(0, ids), log_var.index_select(0, ids)};
}

JointLatentCode reparameterize(const PosteriorParams& params, const torch::Tensor& noise, int64_t shape_dim) {
  require(noise.sizes() == params.mu.sizes() && params.log_var.sizes() == params.mu.sizes(), "dim_mismatch",
          "noise and posterior parameters must have equal shapes");
  return JointLatentCode::split(params.mu + torch::exp(0.5 * params.log_var) * noise, shape_dim);
}

torch::Tensor kl_to_standard_normal(const PosteriorParams& params) {
  require(params.log_var.sizes() == params.mu.sizes(), "dim_mismatch", "mu and log_var must have equal shapes");
  return 0.5 * (params.mu.square() + params.log_var.exp() - params.log_var - 1.0).sum(-1);
}

torch::Tensor reg_loss(const torch::Tensor& z, double gamma, double beta) {
  require(gamma >= 0.0 && beta >= 0.0, "invalid_config", "gamma and beta must be non-negative");
  auto sq = z.square().sum(-1);
  return gamma * torch::where(sq >= beta, sq, torch::full_like(sq, beta));
}

JointLatentCode sample_prior(const LatentDims& dims, uint64_t seed, torch::Dtype dtype) {
  require(dims.shape > 0 && dims.color > 0, "invalid_config", "latent dimensions must be positive");
  auto gen = make_generator(seed);
  auto full = torch::randn({dims.total()}, gen, torch::TensorOptions().dtype(dtype));
  return JointLatentCode::split(full, dims.shape);
}

}  // namespace shapeforge
