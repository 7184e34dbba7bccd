#include "shapeforge/editor.hpp"

#include <algorithm>
#include <cmath>

#include "shapeforge/error.hpp"
#include "shapeforge/random.hpp"

namespace shapeforge {

namespace F = torch::nn::functional;

Subspace parse_subspace(const std::string& name) {
  if (name == "full") return Subspace::Full;
  if (name == "shape-only" || name == "shape") return Subspace::ShapeOnly;
  if (name == "color-only" || name == "color") return Subspace::ColorOnly;
  fail("unknown_subspace", "unknown subspace '" + name + "'");
}

const char* subspace_name(Subspace subspace) {
  switch (subspace) {
    case Subspace::Full: return "full";
    case Subspace::ShapeOnly: return "shape-only";
    case Subspace::ColorOnly: return "color-only";
  }
  return "?";
}

TransferKind parse_transfer(const std::string& name) {
  if (name == "shape") return TransferKind::Shape;
  if (name == "color") return TransferKind::Color;
  fail("unknown_transfer", "transfer must be 'shape' or 'color', got '" + name + "'");
}

namespace {

torch::Tensor per_pixel_loss(Modality modality, const torch::Tensor& output, const torch::Tensor& target) {
  if (modality == Modality::Sketch) {
    return F::binary_cross_entropy_with_logits(output, target, F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone))
        .mean(0);
  }
  return (output - target).abs().mean(0);
}

void validate(const EditSpec& spec, int64_t resolution) {
  require(spec.modality != Modality::Shape3D, "unknown_modality", "edits target the sketch or render modality");
  require(spec.weight >= 0.0, "invalid_config", "edit weight must be non-negative");
  const int64_t channels = spec.modality == Modality::Sketch ? 1 : 3;
  require(spec.target.dim() == 3 && spec.target.size(0) == channels && spec.target.size(1) == resolution &&
              spec.target.size(2) == resolution,
          "dim_mismatch", "edit target must be [" + std::to_string(channels) + ", R, R] at the generator resolution");
  require(spec.mask.numel() == resolution * resolution, "dim_mismatch", "edit mask must match the generator resolution");
  require((spec.mask.reshape({-1}) > 0.5).any().item<bool>(), "empty_mask", "edit mask has no constrained pixel");
}

}  // namespace

torch::Tensor edit_data_loss(MMVAD& model, const JointLatentCode& code, std::span<const EditSpec> specs,
                             const OptimizeConfig& config) {
  require(!specs.empty(), "invalid_config", "latent optimisation needs at least one edit spec");
  auto total = torch::zeros({}, code.shape.options());
  for (const auto& spec : specs) {
    validate(spec, model->config().resolution);
    auto output = model->generate(spec.modality, code, spec.view);
    auto target = spec.target.to(output.scalar_type());
    auto on = (spec.mask.reshape({output.size(1), output.size(2)}) > 0.5).to(output.scalar_type());
    auto loss = per_pixel_loss(spec.modality, output, target);
    auto term = (loss * on).sum() / on.sum();
    const double anchor = config.anchor_weight.value_or(spec.modality == Modality::Render ? 0.1 : 0.0);
    auto off = 1.0 - on;
    if (anchor > 0.0 && off.sum().item<double>() > 0.0) {
      term = term + anchor * (loss * off).sum() / off.sum();
    }
    total = total + spec.weight * term;
  }
  return total;
}

torch::Tensor edit_objective(MMVAD& model, const JointLatentCode& code, std::span<const EditSpec> specs,
                             const OptimizeConfig& config) {
  return edit_data_loss(model, code, specs, config) + reg_loss(code, config.gamma, config.beta);
}

OptimizeResult optimize_latent(MMVAD& model, const JointLatentCode& init, std::span<const EditSpec> specs,
                               const OptimizeConfig& config) {
  require(config.steps >= 1, "invalid_config", "optimisation needs at least one step");
  require(!specs.empty(), "invalid_config", "latent optimisation needs at least one edit spec");
  require(init.dims() == model->config().dims, "dim_mismatch", "initial code does not match model dimensions");
  model->eval();

  auto shape = init.shape.detach().clone().to(torch::kFloat32);
  auto color = init.color.detach().clone().to(torch::kFloat32);
  std::vector<torch::Tensor> free;
  if (config.subspace != Subspace::ColorOnly) free.push_back(shape.requires_grad_(true));
  if (config.subspace != Subspace::ShapeOnly) free.push_back(color.requires_grad_(true));
  torch::optim::Adam adam(free, torch::optim::AdamOptions(config.lr));

  OptimizeResult result;
  for (int step = 0; step < config.steps; ++step) {
    JointLatentCode z{shape, color};
    auto data = edit_data_loss(model, z, specs, config);
    if (config.tolerance > 0.0 && data.item<double>() <= config.tolerance) break;
    auto objective = data + reg_loss(z, config.gamma, config.beta);
    const double value = objective.item<double>();
    if (!std::isfinite(value)) fail("non_finite_loss", "edit objective is non-finite at step " + std::to_string(step));
    result.loss_history.push_back(value);
    result.norm_history.push_back(z.full().detach().square().sum().item<double>());
    // Gradients only reach the code; decoder weights are never touched.
    auto grads = torch::autograd::grad({objective}, free);
    for (size_t i = 0; i < free.size(); ++i) free[i].mutable_grad() = grads[i];
    adam.step();
  }

  result.code = {shape.detach().clone(), color.detach().clone()};
  // The frozen half is handed back exactly as it came in.
  if (config.subspace == Subspace::ColorOnly) result.code.shape = init.shape.detach().clone();
  if (config.subspace == Subspace::ShapeOnly) result.code.color = init.color.detach().clone();
  torch::NoGradGuard no_grad;
  result.edit_loss = edit_data_loss(model, result.code, specs, config).item<double>();
  result.reg = reg_loss(result.code, config.gamma, config.beta).item<double>();
  result.total = result.edit_loss + result.reg;
  return result;
}

int select_best(std::span<const Trial> trials) {
  require(!trials.empty(), "invalid_config", "no trials to select from");
  auto best = std::min_element(trials.begin(), trials.end(), [](const Trial& a, const Trial& b) {
    return a.loss < b.loss || (a.loss == b.loss && a.index < b.index);
  });
  return static_cast<int>(best - trials.begin());
}

std::vector<Trial> reconstruct_partial(MMVAD& model, const torch::Tensor& target, const torch::Tensor& mask,
                                       Modality modality, const Viewpoint& view, const OptimizeConfig& config, int k) {
  require(k >= 1, "invalid_config", "need at least one trial");
  EditSpec spec{modality, view, target, mask, 1.0};
  std::vector<Trial> trials;
  OptimizeConfig trial_config = config;
  trial_config.anchor_weight = 0.0;
  for (int t = 0; t < k; ++t) {
    const uint64_t seed = mix_seed(config.seed, static_cast<uint64_t>(t));
    auto init = sample_prior(model->config().dims, seed);
    auto result = optimize_latent(model, init, std::span<const EditSpec>(&spec, 1), trial_config);
    trials.push_back({t, seed, result.edit_loss, result.code});
  }
  return trials;
}

Reconstruction reconstruct_single_view(MMVAD& model, const torch::Tensor& target, Modality modality,
                                       const Viewpoint& view, const OptimizeConfig& config) {
  require(config.trials >= 1, "invalid_config", "need at least one trial");
  const auto r = model->config().resolution;
  auto mask = torch::ones({r, r});
  Reconstruction out;
  out.trials = reconstruct_partial(model, target, mask, modality, view, config, config.trials);
  out.best_trial = select_best(out.trials);
  out.code = out.trials[out.best_trial].code;
  out.loss = out.trials[out.best_trial].loss;
  return out;
}

JointLatentCode transfer_codes(const JointLatentCode& source, const JointLatentCode& reference, TransferKind which) {
  require(source.dims() == reference.dims(), "dim_mismatch", "transfer needs codes of equal dimensions");
  if (which == TransferKind::Shape) return {reference.shape.detach().clone(), source.color.detach().clone()};
  return {source.shape.detach().clone(), reference.color.detach().clone()};
}

}  // namespace shapeforge
