#pragma once

#include <optional>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "shapeforge/geometry.hpp"
#include "shapeforge/latentspace.hpp"
#include "shapeforge/model.hpp"

namespace shapeforge {

enum class Subspace { Full, ShapeOnly, ColorOnly };

Subspace parse_subspace(const std::string& name);
const char* subspace_name(Subspace subspace);

// One 2D constraint on the generator output. `target` is [C, R, R] (sketch
// targets are stroke probabilities in [0, 1]); `mask` is [R, R] or [1, R, R] with
// 1 on constrained pixels.
struct EditSpec {
  Modality modality = Modality::Render;
  Viewpoint view;
  torch::Tensor target;
  torch::Tensor mask;
  double weight = 1.0;
};

struct OptimizeConfig {
  int steps = 300;
  double lr = 1e-2;
  double gamma = 0.02;
  double beta = 0.5;
  int trials = 8;
  Subspace subspace = Subspace::Full;
  uint64_t seed = 0;
  // Weight of the loss on unmasked pixels. Unset: 0.1 for render specs, 0 for sketches.
  std::optional<double> anchor_weight;
  // Stop once the data term is at or below this. 0 runs every step.
  double tolerance = 0.0;

  // Known-initialisation edit: 5 steps, done once within one 8-bit level.
  static OptimizeConfig edit() {
    OptimizeConfig c;
    c.steps = 5;
    c.trials = 1;
    c.tolerance = 1.0 / 255.0;
    return c;
  }
};

struct OptimizeResult {
  JointLatentCode code;
  double edit_loss = 0.0;  // data term at the returned code
  double reg = 0.0;
  double total = 0.0;
  std::vector<double> loss_history;  // objective before each update
  std::vector<double> norm_history;  // |z|^2 before each update
};

// sum_k weight_k * masked loss_k(G(z), target_k): L1 for renders, BCE for sketches,
// each averaged over mask-1 pixels, plus the anchor term on mask-0 pixels.
torch::Tensor edit_data_loss(MMVAD& model, const JointLatentCode& code, std::span<const EditSpec> specs,
                             const OptimizeConfig& config);

// Data term plus gamma * max(|z|^2, beta).
torch::Tensor edit_objective(MMVAD& model, const JointLatentCode& code, std::span<const EditSpec> specs,
                             const OptimizeConfig& config);

// Adam on the code, restricted to `config.subspace`; the other subspace is
// returned bit-identical. Stops early when the data term reaches `config.tolerance`.
OptimizeResult optimize_latent(MMVAD& model, const JointLatentCode& init, std::span<const EditSpec> specs,
                               const OptimizeConfig& config);

struct Trial {
  int index = 0;
  uint64_t seed = 0;
  double loss = 0.0;  // reconstruction (data) loss at the final code
  JointLatentCode code;
};

struct Reconstruction {
  JointLatentCode code;
  int best_trial = 0;
  double loss = 0.0;
  std::vector<Trial> trials;
};

// Independent optimisations from prior samples seeded by (config.seed, trial);
// keeps the lowest reconstruction loss, ties to the lowest trial index.
Reconstruction reconstruct_single_view(MMVAD& model, const torch::Tensor& target, Modality modality,
                                       const Viewpoint& view, const OptimizeConfig& config);

// k optimisations from distinct prior seeds constrained only on mask-1 pixels.
std::vector<Trial> reconstruct_partial(MMVAD& model, const torch::Tensor& target, const torch::Tensor& mask,
                                       Modality modality, const Viewpoint& view, const OptimizeConfig& config, int k);

// Index of the minimum by (loss, index).
int select_best(std::span<const Trial> trials);

enum class TransferKind { Shape, Color };

TransferKind parse_transfer(const std::string& name);

// Shape: (reference.z_s, source.z_c). Color: (source.z_s, reference.z_c).
JointLatentCode transfer_codes(const JointLatentCode& source, const JointLatentCode& reference, TransferKind which);

}  // namespace shapeforge
