#include "shapeforge/implicit3d.hpp"

#include <algorithm>
#include <cmath>

#include "shapeforge/error.hpp"

namespace shapeforge {

AnalyticField::AnalyticField(DistanceFn distance, ColorFn color)
    : distance_(std::move(distance)), color_(std::move(color)) {}

std::vector<double> AnalyticField::distance(std::span<const Vec3> points) const {
  std::vector<double> out(points.size());
  std::transform(points.begin(), points.end(), out.begin(), distance_);
  return out;
}

std::vector<Vec3> AnalyticField::color(std::span<const Vec3> points) const {
  std::vector<Vec3> out(points.size(), Vec3::Ones());
  if (color_) std::transform(points.begin(), points.end(), out.begin(), color_);
  return out;
}

AnalyticField AnalyticField::sphere(const Vec3& center, double radius, const Vec3& rgb) {
  return AnalyticField([=](const Vec3& p) { return (p - center).norm() - radius; },
                       [=](const Vec3&) { return rgb; });
}

AnalyticField AnalyticField::box(const Vec3& center, const Vec3& half_extent, const Vec3& rgb) {
  return AnalyticField(
      [=](const Vec3& p) {
        const Vec3 q = (p - center).cwiseAbs() - half_extent;
        return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
      },
      [=](const Vec3&) { return rgb; });
}

ShapeNetImpl::ShapeNetImpl(const ShapeNetOptions& options) : options_(options), skip_layer_(options.layers / 2) {
  require(options.layers >= 3, "invalid_config", "shape network needs at least three layers");
  require(options.tap_layer >= 1 && options.tap_layer < options.layers, "invalid_config",
          "feature tap must be a hidden layer");
  const int64_t in_dim = options.code_dim + 3;
  layers_ = register_module("layers", torch::nn::ModuleList());
  for (int64_t i = 0; i < options.layers; ++i) {
    int64_t fan_in = i == 0 ? in_dim : options.width;
    if (i == skip_layer_) fan_in += in_dim;
    const int64_t fan_out = i + 1 == options.layers ? 1 : options.width;
    layers_->push_back(torch::nn::Linear(fan_in, fan_out));
  }
}

ShapeNetOutput ShapeNetImpl::forward(const torch::Tensor& code, const torch::Tensor& points) {
  const auto input = torch::cat({code, points}, -1);
  torch::Tensor x = input;
  torch::Tensor features;
  for (int64_t i = 0; i < options_.layers; ++i) {
    if (i == skip_layer_) x = torch::cat({x, input}, -1);
    x = layers_[i]->as<torch::nn::Linear>()->forward(x);
    if (i + 1 < options_.layers) {
      x = torch::relu(x);
      if (i + 1 == options_.tap_layer) features = x;
    }
  }
  return {torch::tanh(x).squeeze(-1), features};
}

ColorNetImpl::ColorNetImpl(const ColorNetOptions& options) : options_(options) {
  require(options.layers >= 1, "invalid_config", "colour network needs at least one layer");
  layers_ = register_module("layers", torch::nn::ModuleList());
  for (int64_t i = 0; i < options.layers; ++i) {
    const int64_t fan_in = i == 0 ? options.code_dim + options.feature_dim : options.width;
    const int64_t fan_out = i + 1 == options.layers ? 3 : options.width;
    layers_->push_back(torch::nn::Linear(fan_in, fan_out));
  }
}

torch::Tensor ColorNetImpl::forward(const torch::Tensor& code, const torch::Tensor& features) {
  torch::Tensor x = torch::cat({code, features}, -1);
  for (int64_t i = 0; i < options_.layers; ++i) {
    x = layers_[i]->as<torch::nn::Linear>()->forward(x);
    if (i + 1 < options_.layers) x = torch::relu(x);
  }
  return torch::sigmoid(x);
}

ImplicitGeneratorImpl::ImplicitGeneratorImpl(const ShapeNetOptions& shape, const ColorNetOptions& color) {
  require(color.feature_dim == shape.width, "invalid_config", "colour net feature width must match shape net");
  shape_net = register_module("shape_net", ShapeNet(shape));
  color_net = register_module("color_net", ColorNet(color));
}

namespace {

torch::Tensor broadcast_code(const torch::Tensor& code, int64_t n) {
  return code.dim() == 1 ? code.unsqueeze(0).expand({n, code.size(0)}) : code;
}

}  // namespace

ShapeNetOutput ImplicitGeneratorImpl::sdf_eval(const torch::Tensor& shape_code, const torch::Tensor& points) {
  require(points.dim() == 2 && points.size(1) == 3, "dim_mismatch", "points must be [N, 3]");
  require(shape_code.size(-1) == shape_net->options().code_dim, "dim_mismatch", "shape code length mismatch");
  {
    torch::NoGradGuard no_grad;
    require(torch::isfinite(points).all().item<bool>() && torch::isfinite(shape_code).all().item<bool>(),
            "non_finite_input", "sdf_eval received non-finite input");
    require(points.numel() == 0 || points.abs().max().item<double>() <= 1.1, "out_of_bounds",
            "sdf_eval points must lie in [-1.1, 1.1]^3");
  }
  return shape_net->forward(broadcast_code(shape_code, points.size(0)), points);
}

ImplicitGeneratorImpl::ColoredOutput ImplicitGeneratorImpl::generate_colored_shape(const JointLatentCode& code,
                                                                                   const torch::Tensor& points) {
  auto shape = sdf_eval(code.shape, points);
  auto rgb = color_net->forward(broadcast_code(code.color, points.size(0)), shape.features);
  return {shape.sdf, rgb};
}

NeuralField::NeuralField(ImplicitGenerator generator, JointLatentCode code, int64_t chunk)
    : generator_(std::move(generator)), code_(code.clone()), chunk_(chunk) {}

torch::Tensor NeuralField::to_points(std::span<const Vec3> points, int64_t begin, int64_t end) const {
  auto dtype = code_.shape.scalar_type();
  auto out = torch::empty({end - begin, 3}, torch::kFloat64);
  auto acc = out.accessor<double, 2>();
  for (int64_t i = begin; i < end; ++i) {
    for (int k = 0; k < 3; ++k) acc[i - begin][k] = points[i][k];
  }
  return out.to(dtype);
}

std::vector<double> NeuralField::distance(std::span<const Vec3> points) const {
  torch::NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(points.size());
  const auto n = static_cast<int64_t>(points.size());
  for (int64_t begin = 0; begin < n; begin += chunk_) {
    const int64_t end = std::min(n, begin + chunk_);
    auto sdf = generator_->sdf_eval(code_.shape, to_points(points, begin, end)).sdf.to(torch::kFloat64).contiguous();
    out.insert(out.end(), sdf.data_ptr<double>(), sdf.data_ptr<double>() + sdf.numel());
  }
  return out;
}

std::vector<Vec3> NeuralField::color(std::span<const Vec3> points) const {
  torch::NoGradGuard no_grad;
  std::vector<Vec3> out;
  out.reserve(points.size());
  const auto n = static_cast<int64_t>(points.size());
  for (int64_t begin = 0; begin < n; begin += chunk_) {
    const int64_t end = std::min(n, begin + chunk_);
    auto rgb = generator_->generate_colored_shape(code_, to_points(points, begin, end)).rgb.to(torch::kFloat64).contiguous();
    auto acc = rgb.accessor<double, 2>();
    for (int64_t i = 0; i < rgb.size(0); ++i) out.emplace_back(acc[i][0], acc[i][1], acc[i][2]);
  }
  return out;
}

TraceResult sphere_trace(const SdfField& field, const Viewpoint& view, int resolution, const TraceOptions& options) {
  require(resolution > 0, "invalid_config", "resolution must be positive");
  const Camera camera(view, options.camera);
  const size_t pixels = static_cast<size_t>(resolution) * resolution;
  TraceResult result;
  result.resolution = resolution;
  result.hit.assign(pixels, 0);
  result.depth.assign(pixels, std::numeric_limits<double>::infinity());
  result.points.assign(pixels, Vec3::Zero());

  struct Ray {
    size_t pixel;
    Vec3 dir;
    double t;
    double t_exit;
  };
  std::vector<Ray> active;
  active.reserve(pixels);
  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) {
      const Vec3 dir = camera.ray(r, c, resolution);
      double t0 = 0.0, t1 = 0.0;
      if (clip_to_cube(camera.eye(), dir, options.bounds, t0, t1)) {
        active.push_back({static_cast<size_t>(r) * resolution + c, dir, t0, t1});
      }
    }
  }

  std::vector<Vec3> positions;
  for (int step = 0; step < options.max_steps && !active.empty(); ++step) {
    positions.resize(active.size());
    for (size_t i = 0; i < active.size(); ++i) positions[i] = camera.eye() + active[i].t * active[i].dir;
    const auto dist = field.distance(positions);
    std::vector<Ray> next;
    next.reserve(active.size());
    for (size_t i = 0; i < active.size(); ++i) {
      Ray ray = active[i];
      if (!std::isfinite(dist[i])) continue;
      if (dist[i] < options.threshold) {
        result.hit[ray.pixel] = 1;
        result.depth[ray.pixel] = ray.t;
        result.points[ray.pixel] = positions[i];
        continue;
      }
      ray.t += options.step_scale * std::min(dist[i], options.max_step);
      if (ray.t <= ray.t_exit) next.push_back(ray);
    }
    active = std::move(next);
  }
  return result;
}

RenderResult sphere_trace_render(const ColoredField& field, const Viewpoint& view, int resolution,
                                 const TraceOptions& options) {
  RenderResult out{Image(resolution, resolution, 3, 1.0f), sphere_trace(field, view, resolution, options)};
  std::vector<Vec3> hits;
  std::vector<size_t> pixels;
  for (size_t p = 0; p < out.trace.hit.size(); ++p) {
    if (out.trace.hit[p]) {
      hits.push_back(out.trace.points[p]);
      pixels.push_back(p);
    }
  }
  const auto colors = field.color(hits);
  for (size_t i = 0; i < pixels.size(); ++i) {
    for (int ch = 0; ch < 3; ++ch) {
      out.rgb.data[pixels[i] * 3 + ch] = static_cast<float>(std::clamp(colors[i][ch], 0.0, 1.0));
    }
  }
  return out;
}

}  // namespace shapeforge
