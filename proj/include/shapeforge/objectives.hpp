#pragma once

#include <optional>
#include <vector>

#include <torch/torch.h>

namespace shapeforge {

inline constexpr double kSdfClamp = 0.1;

// mean |clamp(pred) - clamp(true)| + mean |pred_rgb - true_rgb|
torch::Tensor sdf_color_loss(const torch::Tensor& pred_sdf, const torch::Tensor& pred_rgb,
                             const torch::Tensor& true_sdf, const torch::Tensor& true_rgb,
                             double clamp = kSdfClamp);

// Mean per-pixel binary cross-entropy of sigmoid(logits) against targets in [0, 1].
torch::Tensor sketch_loss(const torch::Tensor& logits, const torch::Tensor& target);

// Burt-Adelson pyramid over the last two dimensions ([..., H, W]). Levels
// 0..J-2 are band-pass residuals, level J-1 the low-pass remainder.
std::vector<torch::Tensor> laplacian_pyramid(const torch::Tensor& image, int levels);
torch::Tensor reconstruct_pyramid(const std::vector<torch::Tensor>& pyramid);

// (1/N) sum_j 4^-j |L^j(a) - L^j(b)|_1 with N the full-resolution element count.
torch::Tensor laplacian_l1(const torch::Tensor& a, const torch::Tensor& b, int levels = 3);

struct LossWeights {
  double c = 1.0;
  double s = 1.0;
  double r = 1.0;
  double kl = 1e-3;
};

struct LossBreakdown {
  torch::Tensor l_c;
  torch::Tensor l_s;
  torch::Tensor l_r;
  torch::Tensor kl;
  torch::Tensor total;
  LossWeights weights;
};

// Decoder outputs for one batch; any member may be absent.
struct ModalityOutputs {
  torch::Tensor sdf;
  torch::Tensor rgb;
  torch::Tensor sketch_logits;
  torch::Tensor render;
};

struct ModalityTargets {
  std::optional<torch::Tensor> sdf;
  std::optional<torch::Tensor> rgb;
  std::optional<torch::Tensor> sketch;
  std::optional<torch::Tensor> render;
};

// Negative-ELBO surrogate: weighted sum of the three reconstruction terms and
// the mean KL of the batch's posteriors. All modalities must be supplied.
LossBreakdown assemble_objective(const ModalityOutputs& outputs, const ModalityTargets& targets,
                                 const torch::Tensor& kl, const LossWeights& weights, int pyramid_levels = 3);

}  // namespace shapeforge
