#pragma once

#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "shapeforge/geometry.hpp"
#include "shapeforge/image.hpp"
#include "shapeforge/latentspace.hpp"

namespace shapeforge {

// Anything that can report signed distances for a batch of points.
class SdfField {
 public:
  virtual ~SdfField() = default;
  virtual std::vector<double> distance(std::span<const Vec3> points) const = 0;
};

class ColoredField : public SdfField {
 public:
  virtual std::vector<Vec3> color(std::span<const Vec3> points) const = 0;
};

// Closed-form field built from per-point callables.
class AnalyticField : public ColoredField {
 public:
  using DistanceFn = std::function<double(const Vec3&)>;
  using ColorFn = std::function<Vec3(const Vec3&)>;

  explicit AnalyticField(DistanceFn distance, ColorFn color = {});

  std::vector<double> distance(std::span<const Vec3> points) const override;
  std::vector<Vec3> color(std::span<const Vec3> points) const override;

  static AnalyticField sphere(const Vec3& center, double radius, const Vec3& rgb = {1.0, 0.0, 0.0});
  static AnalyticField box(const Vec3& center, const Vec3& half_extent, const Vec3& rgb = {0.0, 0.0, 1.0});

 private:
  DistanceFn distance_;
  ColorFn color_;
};

// F_alpha: (z_s, p) -> signed distance, tapping one hidden layer as the feature
// input of the colour network.
struct ShapeNetOptions {
  int64_t code_dim = 32;
  int64_t width = 128;
  int64_t layers = 8;     // linear layers including the output layer
  int64_t tap_layer = 6;  // 1-based hidden layer whose activations feed the colour net
};

struct ShapeNetOutput {
  torch::Tensor sdf;       // [N]
  torch::Tensor features;  // [N, width]
};

class ShapeNetImpl : public torch::nn::Module {
 public:
  explicit ShapeNetImpl(const ShapeNetOptions& options = {});
  ShapeNetOutput forward(const torch::Tensor& code, const torch::Tensor& points);
  const ShapeNetOptions& options() const { return options_; }

 private:
  ShapeNetOptions options_;
  int64_t skip_layer_;
  torch::nn::ModuleList layers_;
};
TORCH_MODULE(ShapeNet);

// F_beta: (z_c, features) -> RGB in [0, 1].
struct ColorNetOptions {
  int64_t code_dim = 32;
  int64_t feature_dim = 128;
  int64_t width = 128;
  int64_t layers = 3;
};

class ColorNetImpl : public torch::nn::Module {
 public:
  explicit ColorNetImpl(const ColorNetOptions& options = {});
  torch::Tensor forward(const torch::Tensor& code, const torch::Tensor& features);
  const ColorNetOptions& options() const { return options_; }

 private:
  ColorNetOptions options_;
  torch::nn::ModuleList layers_;
};
TORCH_MODULE(ColorNet);

// G^C = {F_alpha(z_s (+) p), F_beta(z_c (+) z_s^k)}. The colour code never
// reaches the shape network, so distances are independent of z_c.
class ImplicitGeneratorImpl : public torch::nn::Module {
 public:
  ImplicitGeneratorImpl(const ShapeNetOptions& shape, const ColorNetOptions& color);

  // z_s is either [D_s] (broadcast over points) or [N, D_s].
  ShapeNetOutput sdf_eval(const torch::Tensor& shape_code, const torch::Tensor& points);

  struct ColoredOutput {
    torch::Tensor sdf;
    torch::Tensor rgb;
  };
  ColoredOutput generate_colored_shape(const JointLatentCode& code, const torch::Tensor& points);

  ShapeNet shape_net{nullptr};
  ColorNet color_net{nullptr};
};
TORCH_MODULE(ImplicitGenerator);

// Learned field for one code, evaluated in chunks without autograd.
class NeuralField : public ColoredField {
 public:
  NeuralField(ImplicitGenerator generator, JointLatentCode code, int64_t chunk = 65536);

  std::vector<double> distance(std::span<const Vec3> points) const override;
  std::vector<Vec3> color(std::span<const Vec3> points) const override;

 private:
  torch::Tensor to_points(std::span<const Vec3> points, int64_t begin, int64_t end) const;

  mutable ImplicitGenerator generator_;
  JointLatentCode code_;
  int64_t chunk_;
};

struct TraceOptions {
  int max_steps = 64;
  double threshold = 1e-3;
  double step_scale = 0.9;
  // Upper bound on a single march step; learned fields overestimate far from the surface.
  double max_step = std::numeric_limits<double>::infinity();
  double bounds = 1.0;  // marching is confined to [-bounds, bounds]^3
  CameraOptions camera;
};

struct TraceResult {
  int resolution = 0;
  std::vector<uint8_t> hit;    // row-major, 1 where the ray converged
  std::vector<double> depth;   // ray parameter at the hit, +inf on misses
  std::vector<Vec3> points;    // hit positions (undefined on misses)
};

TraceResult sphere_trace(const SdfField& field, const Viewpoint& view, int resolution,
                         const TraceOptions& options = {});

struct RenderResult {
  Image rgb;  // unlit albedo, background white
  TraceResult trace;
};

RenderResult sphere_trace_render(const ColoredField& field, const Viewpoint& view, int resolution,
                                 const TraceOptions& options = {});

}  // namespace shapeforge
