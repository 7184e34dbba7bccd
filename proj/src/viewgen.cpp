#include "shapeforge/viewgen.hpp"

#include <bit>

#include "shapeforge/error.hpp"

namespace shapeforge {

torch::Tensor encode_views(std::span<const Viewpoint> views, torch::Dtype dtype) {
  auto out = torch::empty({static_cast<int64_t>(views.size()), 4}, torch::kFloat64);
  auto acc = out.accessor<double, 2>();
  for (size_t i = 0; i < views.size(); ++i) {
    const auto e = views[i].encode();
    for (int k = 0; k < 4; ++k) acc[i][k] = e[k];
  }
  return out.to(dtype);
}

ImageDecoderImpl::ImageDecoderImpl(const DecoderOptions& options) : options_(options) {
  require(options.resolution >= 8 && std::has_single_bit(static_cast<uint64_t>(options.resolution)),
          "invalid_config", "decoder resolution must be a power of two >= 8");
  const int stages = std::countr_zero(static_cast<uint64_t>(options.resolution / 4));
  require(options.base_width >> (stages - 1) >= 1, "invalid_config", "base width too small for resolution");

  project_ = register_module("project", torch::nn::Linear(options.input_dim, options.base_width * 16));
  project_norm_ = register_module("project_norm", torch::nn::BatchNorm2d(options.base_width));
  stages_ = register_module("stages", torch::nn::ModuleList());
  norms_ = register_module("norms", torch::nn::ModuleList());
  int64_t channels = options.base_width;
  for (int s = 0; s < stages; ++s) {
    const bool last = s + 1 == stages;
    const int64_t next = last ? options.out_channels : channels / 2;
    stages_->push_back(
        torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(channels, next, 4).stride(2).padding(1)));
    if (!last) norms_->push_back(torch::nn::BatchNorm2d(next));
    channels = next;
  }
}

torch::Tensor ImageDecoderImpl::forward(const torch::Tensor& input) {
  auto x = project_->forward(input).view({input.size(0), options_.base_width, 4, 4});
  x = torch::relu(project_norm_->forward(x));
  const auto n = stages_->size();
  for (size_t s = 0; s < n; ++s) {
    x = stages_[s]->as<torch::nn::ConvTranspose2d>()->forward(x);
    if (s + 1 < n) x = torch::relu(norms_[s]->as<torch::nn::BatchNorm2d>()->forward(x));
  }
  return x;
}

SketchGeneratorImpl::SketchGeneratorImpl(int64_t shape_dim, int64_t resolution, int64_t base_width) {
  decoder = register_module("decoder", ImageDecoder(DecoderOptions{shape_dim + 4, 1, resolution, base_width}));
}

torch::Tensor SketchGeneratorImpl::forward(const torch::Tensor& shape_code, const torch::Tensor& views) {
  return decoder->forward(torch::cat({shape_code, views}, -1));
}

RenderGeneratorImpl::RenderGeneratorImpl(int64_t shape_dim, int64_t color_dim, int64_t resolution,
                                         int64_t base_width) {
  decoder = register_module("decoder",
                            ImageDecoder(DecoderOptions{shape_dim + color_dim + 4, 3, resolution, base_width}));
}

torch::Tensor RenderGeneratorImpl::forward(const torch::Tensor& shape_code, const torch::Tensor& color_code,
                                           const torch::Tensor& views) {
  return torch::sigmoid(decoder->forward(torch::cat({shape_code, color_code, views}, -1)));
}

Image sketch_to_binary(const torch::Tensor& logits_chw) {
  return tensor_to_image((logits_chw.detach() > 0).to(torch::kFloat32));
}

}  // namespace shapeforge
