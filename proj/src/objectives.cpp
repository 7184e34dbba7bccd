#include "shapeforge/objectives.hpp"

#include <cmath>

#include "shapeforge/error.hpp"

namespace shapeforge {
namespace {

namespace F = torch::nn::functional;

// Separable 5-tap binomial filter applied depthwise over [N, C, H, W].
torch::Tensor binomial_filter(const torch::Tensor& x, int64_t stride, double gain) {
  const int64_t channels = x.size(1);
  auto taps = torch::tensor({1.0, 4.0, 6.0, 4.0, 1.0}, x.options()) * (gain / 16.0);
  auto vertical = taps.view({1, 1, 5, 1}).expand({channels, 1, 5, 1});
  auto horizontal = taps.view({1, 1, 1, 5}).expand({channels, 1, 1, 5});
  auto padded = F::pad(x, F::PadFuncOptions({2, 2, 2, 2}).mode(torch::kReflect));
  auto y = F::conv2d(padded, vertical, F::Conv2dFuncOptions().stride({stride, 1}).groups(channels));
  return F::conv2d(y, horizontal, F::Conv2dFuncOptions().stride({1, stride}).groups(channels));
}

torch::Tensor as_nchw(const torch::Tensor& image) {
  require(image.dim() >= 2, "dim_mismatch", "image needs at least two dimensions");
  return image.reshape({-1, 1, image.size(-2), image.size(-1)});
}

torch::Tensor downsample(const torch::Tensor& x) { return binomial_filter(x, 2, 1.0); }

torch::Tensor upsample(const torch::Tensor& x) {
  // Zero insertion followed by the same filter with gain 2 per axis.
  auto zeros = torch::zeros_like(x);
  auto rows = torch::stack({x, zeros}, -2).reshape({x.size(0), x.size(1), 2 * x.size(2), x.size(3)});
  auto cols = torch::stack({rows, torch::zeros_like(rows)}, -1).reshape({x.size(0), x.size(1), 2 * x.size(2), 2 * x.size(3)});
  return binomial_filter(cols, 1, 2.0);
}

}  // namespace

torch::Tensor sdf_color_loss(const torch::Tensor& pred_sdf, const torch::Tensor& pred_rgb,
                             const torch::Tensor& true_sdf, const torch::Tensor& true_rgb, double clamp) {
  require(pred_sdf.numel() == true_sdf.numel() && pred_rgb.numel() == true_rgb.numel() &&
              pred_sdf.numel() * 3 == pred_rgb.numel(),
          "count_mismatch", "sdf/colour prediction and target counts differ");
  auto sdf_term = (pred_sdf.clamp(-clamp, clamp) - true_sdf.reshape(pred_sdf.sizes()).clamp(-clamp, clamp)).abs().mean();
  auto rgb_term = (pred_rgb - true_rgb.reshape(pred_rgb.sizes())).abs().mean();
  return sdf_term + rgb_term;
}

torch::Tensor sketch_loss(const torch::Tensor& logits, const torch::Tensor& target) {
  require(logits.sizes() == target.sizes(), "dim_mismatch", "sketch logits and target differ in resolution");
  return F::binary_cross_entropy_with_logits(logits, target);
}

std::vector<torch::Tensor> laplacian_pyramid(const torch::Tensor& image, int levels) {
  require(levels >= 1, "invalid_config", "pyramid needs at least one level");
  const int64_t h = image.size(-2), w = image.size(-1);
  const int64_t factor = int64_t{1} << (levels - 1);
  require(h == w, "dim_mismatch", "pyramid expects square images");
  require(h % factor == 0, "indivisible_size",
          "image side " + std::to_string(h) + " not divisible by 2^" + std::to_string(levels - 1));
  std::vector<torch::Tensor> pyramid;
  auto current = as_nchw(image);
  for (int j = 0; j + 1 < levels; ++j) {
    auto low = downsample(current);
    pyramid.push_back(current - upsample(low));
    current = low;
  }
  pyramid.push_back(current);
  auto batch_shape = image.sizes().vec();
  for (auto& level : pyramid) {
    batch_shape[batch_shape.size() - 2] = level.size(-2);
    batch_shape[batch_shape.size() - 1] = level.size(-1);
    level = level.reshape(batch_shape);
  }
  return pyramid;
}

torch::Tensor reconstruct_pyramid(const std::vector<torch::Tensor>& pyramid) {
  require(!pyramid.empty(), "invalid_config", "empty pyramid");
  auto current = as_nchw(pyramid.back());
  for (auto it = pyramid.rbegin() + 1; it != pyramid.rend(); ++it) {
    current = as_nchw(*it) + upsample(current);
  }
  return current.reshape(pyramid.front().sizes());
}

torch::Tensor laplacian_l1(const torch::Tensor& a, const torch::Tensor& b, int levels) {
  require(a.sizes() == b.sizes(), "dim_mismatch", "laplacian_l1 operands differ in shape");
  const auto pa = laplacian_pyramid(a, levels);
  const auto pb = laplacian_pyramid(b, levels);
  auto total = torch::zeros({}, a.options());
  for (int j = 0; j < levels; ++j) {
    total = total + std::pow(4.0, -j) * (pa[j] - pb[j]).abs().sum();
  }
  return total / static_cast<double>(a.numel());
}

LossBreakdown assemble_objective(const ModalityOutputs& outputs, const ModalityTargets& targets,
                                 const torch::Tensor& kl, const LossWeights& weights, int pyramid_levels) {
  require(targets.sdf && targets.rgb, "missing_modality", "3D target (sdf + colour) missing during training");
  require(targets.sketch.has_value(), "missing_modality", "sketch target missing during training");
  require(targets.render.has_value(), "missing_modality", "render target missing during training");
  LossBreakdown out;
  out.weights = weights;
  out.l_c = sdf_color_loss(outputs.sdf, outputs.rgb, *targets.sdf, *targets.rgb);
  out.l_s = sketch_loss(outputs.sketch_logits, *targets.sketch);
  out.l_r = laplacian_l1(outputs.render, *targets.render, pyramid_levels);
  out.kl = kl.mean();
  out.total = weights.c * out.l_c + weights.s * out.l_s + weights.r * out.l_r + weights.kl * out.kl;
  return out;
}

}  // namespace shapeforge
