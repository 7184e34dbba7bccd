#pragma once

#include <span>

#include <torch/torch.h>

#include "shapeforge/geometry.hpp"
#include "shapeforge/image.hpp"

namespace shapeforge {

// [B, 4] float tensor of viewpoint encodings.
torch::Tensor encode_views(std::span<const Viewpoint> views, torch::Dtype dtype = torch::kFloat32);

// DCGAN-style decoder: linear projection to base_width x 4 x 4, then
// log2(resolution / 4) stride-2 transposed convolutions that halve the channel
// count, each followed by batch norm and ReLU except the last.
struct DecoderOptions {
  int64_t input_dim = 36;
  int64_t out_channels = 1;
  int64_t resolution = 64;
  int64_t base_width = 256;
};

class ImageDecoderImpl : public torch::nn::Module {
 public:
  explicit ImageDecoderImpl(const DecoderOptions& options);
  torch::Tensor forward(const torch::Tensor& input);
  const DecoderOptions& options() const { return options_; }

 private:
  DecoderOptions options_;
  torch::nn::Linear project_{nullptr};
  torch::nn::BatchNorm2d project_norm_{nullptr};
  torch::nn::ModuleList stages_;
  torch::nn::ModuleList norms_;
};
TORCH_MODULE(ImageDecoder);

// G^S(z_s (+) v): single-channel sketch logits. The colour code is not an input.
class SketchGeneratorImpl : public torch::nn::Module {
 public:
  SketchGeneratorImpl(int64_t shape_dim, int64_t resolution, int64_t base_width);
  // shape_code [B, D_s], views [B, 4] -> logits [B, 1, R, R]
  torch::Tensor forward(const torch::Tensor& shape_code, const torch::Tensor& views);

  ImageDecoder decoder{nullptr};
};
TORCH_MODULE(SketchGenerator);

// G^R(z_s (+) z_c (+) v): RGB in [0, 1].
class RenderGeneratorImpl : public torch::nn::Module {
 public:
  RenderGeneratorImpl(int64_t shape_dim, int64_t color_dim, int64_t resolution, int64_t base_width);
  // -> [B, 3, R, R]
  torch::Tensor forward(const torch::Tensor& shape_code, const torch::Tensor& color_code, const torch::Tensor& views);

  ImageDecoder decoder{nullptr};
};
TORCH_MODULE(RenderGenerator);

// Sketch probabilities thresholded at 0.5, as exchanged in PNG form.
Image sketch_to_binary(const torch::Tensor& logits_chw);

}  // namespace shapeforge
