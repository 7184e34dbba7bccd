#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/types.h>

namespace shapeforge {

// Row-major H x W x C float image. Sketches are single channel, renders RGB.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

  float& at(int row, int col, int ch = 0) { return data[(static_cast<size_t>(row) * width + col) * channels + ch]; }
  float at(int row, int col, int ch = 0) const {
    return data[(static_cast<size_t>(row) * width + col) * channels + ch];
  }
  size_t pixel_count() const { return static_cast<size_t>(height) * width; }
  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }

  bool operator==(const Image&) const = default;
};

// 8-bit PNG codec. Values are clamped to [0,1] and rounded to the nearest level.
// Gray, gray+alpha, RGB and RGBA files decode; the alpha channel is kept.
std::vector<uint8_t> encode_png(const Image& image);
Image decode_png(std::span<const uint8_t> bytes);
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

// Snap every value to the 8-bit grid the PNG codec stores.
Image quantize8(Image image);

// Binary mask: a pixel is set where alpha is nonzero (if present), otherwise where
// any colour channel is nonzero.
Image mask_from_image(const Image& image);

// Drop or synthesize channels: RGB -> gray averages, gray -> RGB replicates, alpha dropped.
Image convert_channels(const Image& image, int channels);

// [C, H, W] float tensor <-> Image.
torch::Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const torch::Tensor& chw);

}  // namespace shapeforge
