#pragma once

#include <span>

#include <torch/torch.h>

#include "shapeforge/implicit3d.hpp"
#include "shapeforge/latentspace.hpp"
#include "shapeforge/viewgen.hpp"

namespace shapeforge {

enum class Modality { Shape3D, Sketch, Render };

Modality parse_modality(const std::string& name);
const char* modality_name(Modality modality);

struct ModelConfig {
  LatentDims dims;
  int64_t shape_width = 128;
  int64_t shape_layers = 8;
  int64_t tap_layer = 6;
  int64_t color_width = 128;
  int64_t color_layers = 3;
  int64_t resolution = 64;
  int64_t image_width = 256;  // channels at the 4x4 stage of both 2D decoders
  int pyramid_levels = 3;

  bool operator==(const ModelConfig&) const = default;
};

// The decoders theta of the multi-modal auto-decoder: the 3D generator G^C and the
// 2D generators G^S and G^R, all conditioned on the same joint code.
class MMVADImpl : public torch::nn::Module {
 public:
  explicit MMVADImpl(const ModelConfig& config = {});

  const ModelConfig& config() const { return config_; }

  // Single code, single view; differentiable. Sketch: [1, R, R] logits.
  torch::Tensor generate_sketch(const torch::Tensor& shape_code, const Viewpoint& view);
  // [3, R, R] in [0, 1].
  torch::Tensor generate_render(const JointLatentCode& code, const Viewpoint& view);
  // Dispatch by modality; sketches are logits, renders RGB.
  torch::Tensor generate(Modality modality, const JointLatentCode& code, const Viewpoint& view);

  ImplicitGenerator implicit{nullptr};
  SketchGenerator sketch{nullptr};
  RenderGenerator render{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(MMVAD);

// Sphere-traced albedo render of the learned 3D field. Marching steps are capped
// at the SDF training clamp because the network is only supervised up to it.
RenderResult render_field(MMVAD& model, const JointLatentCode& code, const Viewpoint& view, int resolution);

}  // namespace shapeforge
