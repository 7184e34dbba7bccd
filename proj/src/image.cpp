#include "shapeforge/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <torch/torch.h>

#include "shapeforge/error.hpp"

namespace shapeforge {
namespace {

uint8_t to_byte(float v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

struct ReadCursor {
  std::span<const uint8_t> bytes;
  size_t offset = 0;
};

void read_callback(png_structp png, png_bytep out, png_size_t count) {
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cursor->offset + count > cursor->bytes.size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, cursor->bytes.data() + cursor->offset, count);
  cursor->offset += count;
}

void write_callback(png_structp png, png_bytep in, png_size_t count) {
  auto* out = static_cast<std::vector<uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + count);
}

void flush_callback(png_structp) {}

[[noreturn]] void error_callback(png_structp, png_const_charp message) { throw Error("bad_image", message); }

void warning_callback(png_structp, png_const_charp) {}

}  // namespace

std::vector<uint8_t> encode_png(const Image& image) {
  int color_type = 0;
  switch (image.channels) {
    case 1: color_type = PNG_COLOR_TYPE_GRAY; break;
    case 2: color_type = PNG_COLOR_TYPE_GRAY_ALPHA; break;
    case 3: color_type = PNG_COLOR_TYPE_RGB; break;
    case 4: color_type = PNG_COLOR_TYPE_RGBA; break;
    default: fail("bad_image", "unsupported channel count " + std::to_string(image.channels));
  }
  std::vector<uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_callback, warning_callback);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, write_callback, flush_callback);
    png_set_IHDR(png, info, image.width, image.height, 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    std::vector<uint8_t> row(static_cast<size_t>(image.width) * image.channels);
    for (int r = 0; r < image.height; ++r) {
      const float* src = image.data.data() + static_cast<size_t>(r) * row.size();
      std::transform(src, src + row.size(), row.begin(), to_byte);
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Image decode_png(std::span<const uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) fail("bad_image", "not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_callback, warning_callback);
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{bytes, 0};
  Image image;
  try {
    png_set_read_fn(png, &cursor, read_callback);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_packing(png);
    png_read_update_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    image = Image(height, width, channels);
    std::vector<uint8_t> row(png_get_rowbytes(png, info));
    for (int r = 0; r < height; ++r) {
      png_read_row(png, row.data(), nullptr);
      float* dst = image.data.data() + static_cast<size_t>(r) * width * channels;
      for (size_t i = 0; i < static_cast<size_t>(width) * channels; ++i) dst[i] = row[i] / 255.0f;
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("io_error", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("io_error", "cannot read " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

Image quantize8(Image image) {
  for (float& v : image.data) v = to_byte(v) / 255.0f;
  return image;
}

Image mask_from_image(const Image& image) {
  Image mask(image.height, image.width, 1);
  const bool has_alpha = image.channels == 2 || image.channels == 4;
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      bool on = false;
      if (has_alpha) {
        on = image.at(r, c, image.channels - 1) > 0.0f;
      } else {
        for (int ch = 0; ch < image.channels; ++ch) on = on || image.at(r, c, ch) > 0.0f;
      }
      mask.at(r, c) = on ? 1.0f : 0.0f;
    }
  }
  return mask;
}

Image convert_channels(const Image& image, int channels) {
  const bool has_alpha = image.channels == 2 || image.channels == 4;
  const int colour = has_alpha ? image.channels - 1 : image.channels;
  if (colour == channels && !has_alpha) return image;
  Image out(image.height, image.width, channels);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      if (channels == colour) {
        for (int ch = 0; ch < channels; ++ch) out.at(r, c, ch) = image.at(r, c, ch);
      } else if (channels == 1) {
        float sum = 0.0f;
        for (int ch = 0; ch < colour; ++ch) sum += image.at(r, c, ch);
        out.at(r, c) = sum / colour;
      } else {
        for (int ch = 0; ch < channels; ++ch) out.at(r, c, ch) = image.at(r, c, 0);
      }
    }
  }
  return out;
}

torch::Tensor image_to_tensor(const Image& image) {
  auto hwc = torch::from_blob(const_cast<float*>(image.data.data()), {image.height, image.width, image.channels},
                              torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous().clone();
}

Image tensor_to_image(const torch::Tensor& chw) {
  TORCH_CHECK(chw.dim() == 3, "expected a [C,H,W] tensor");
  auto hwc = chw.detach().to(torch::kCPU, torch::kFloat32).permute({1, 2, 0}).contiguous();
  Image image(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), static_cast<int>(hwc.size(2)));
  std::memcpy(image.data.data(), hwc.data_ptr<float>(), image.data.size() * sizeof(float));
  return image;
}

}  // namespace shapeforge
