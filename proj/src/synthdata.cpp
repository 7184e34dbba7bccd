#include "shapeforge/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"
#include "shapeforge/error.hpp"
#include "shapeforge/random.hpp"

namespace shapeforge {

using json = nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

// On-disk sample layout: float32 [x, y, z, sdf, r, g, b] per sample.
std::vector<float> pack_samples(const std::vector<SdfSample>& samples) {
  std::vector<float> flat;
  flat.reserve(samples.size() * 7);
  for (const auto& s : samples) {
    for (double v : {s.point.x(), s.point.y(), s.point.z(), s.sdf, s.rgb.x(), s.rgb.y(), s.rgb.z()}) {
      flat.push_back(static_cast<float>(v));
    }
  }
  return flat;
}

std::vector<SdfSample> unpack_samples(const std::vector<float>& flat) {
  std::vector<SdfSample> samples(flat.size() / 7);
  for (size_t i = 0; i < samples.size(); ++i) {
    const float* f = flat.data() + i * 7;
    samples[i] = {{f[0], f[1], f[2]}, f[3], {f[4], f[5], f[6]}};
  }
  return samples;
}

class Sampler {
 public:
  explicit Sampler(uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return normal_(engine_); }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }
  size_t pick(size_t n) { return std::uniform_int_distribution<size_t>(0, n - 1)(engine_); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

Vec3 hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  Vec3 rgb;
  switch (static_cast<int>(h)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  return rgb + Vec3::Constant(v - c);
}

double family_hue(const std::string& family) {
  if (family == "red") return 0.0;
  if (family == "yellow") return 50.0;
  if (family == "green") return 125.0;
  if (family == "blue") return 220.0;
  fail("unknown_attribute", "unknown colour family '" + family + "'");
}

Eigen::Matrix3d rotation_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }

Part box(const Vec3& c, const Vec3& half, std::string label, const Eigen::Matrix3d& r = Eigen::Matrix3d::Identity()) {
  return {Primitive::Box, c, r, half, std::move(label)};
}
Part cylinder(const Vec3& c, double radius, double half_height, std::string label,
              const Eigen::Matrix3d& r = Eigen::Matrix3d::Identity()) {
  return {Primitive::Cylinder, c, r, {radius, half_height, 0.0}, std::move(label)};
}
Part sphere(const Vec3& c, double radius, std::string label) {
  return {Primitive::Sphere, c, Eigen::Matrix3d::Identity(), {radius, 0.0, 0.0}, std::move(label)};
}

// Draws first, then lets an override win, so the RNG stream is identical either way.
bool flag(Sampler& rng, const Attributes& overrides, Attributes& attributes, const std::string& key, double p) {
  bool value = rng.coin(p);
  if (auto it = overrides.find(key); it != overrides.end()) {
    require(it->second == "true" || it->second == "false", "unknown_attribute",
            "attribute " + key + " must be true or false");
    value = it->second == "true";
  }
  attributes[key] = value ? "true" : "false";
  return value;
}

constexpr double kFloor = -0.55;

void build_chair(Sampler& rng, const Attributes& overrides, ProceduralShape& shape) {
  const double sw = rng.uniform(0.26, 0.36), sd = rng.uniform(0.24, 0.32), st = rng.uniform(0.03, 0.05);
  const double seat_y = rng.uniform(-0.12, 0.0);
  const double leg_r = rng.uniform(0.025, 0.045);
  const double bh = rng.uniform(0.18, 0.27), bt = rng.uniform(0.025, 0.04), tilt = rng.uniform(-0.2, 0.0);
  const double arm_h = rng.uniform(0.1, 0.16), arm_t = rng.uniform(0.02, 0.035);
  const bool arms = flag(rng, overrides, shape.attributes, "has_armrests", 0.5);

  shape.parts.push_back(box({0, seat_y, 0}, {sw, st, sd}, "seat"));
  const double leg_half = 0.5 * (seat_y - st - kFloor);
  for (double sx : {-1.0, 1.0}) {
    for (double sz : {-1.0, 1.0}) {
      shape.parts.push_back(cylinder({sx * (sw - leg_r - 0.01), kFloor + leg_half, sz * (sd - leg_r - 0.01)}, leg_r,
                                     leg_half, "leg"));
    }
  }
  const Eigen::Matrix3d r = rotation_x(tilt);
  const Vec3 hinge(0, seat_y + st, -sd + bt);
  shape.parts.push_back(box(hinge + r * Vec3(0, bh, 0), {sw, bh, bt}, "back", r));
  if (arms) {
    for (double sx : {-1.0, 1.0}) {
      shape.parts.push_back(
          box({sx * (sw - arm_t), seat_y + st + 0.5 * arm_h, 0.05 * sd}, {arm_t, 0.5 * arm_h, 0.8 * sd}, "armrest"));
    }
  }
}

void build_table(Sampler& rng, const Attributes& overrides, ProceduralShape& shape) {
  const double tw = rng.uniform(0.38, 0.52), td = rng.uniform(0.26, 0.4), tt = rng.uniform(0.025, 0.04);
  const double top_y = rng.uniform(0.0, 0.15);
  const double leg_r = rng.uniform(0.025, 0.05);
  const double base_r = rng.uniform(0.18, 0.26);
  const double shelf_y = rng.uniform(0.35, 0.55);
  const bool pedestal = flag(rng, overrides, shape.attributes, "pedestal", 0.35);
  const bool shelf = flag(rng, overrides, shape.attributes, "has_shelf", 0.4) && !pedestal;
  if (pedestal) shape.attributes["has_shelf"] = "false";

  shape.parts.push_back(box({0, top_y, 0}, {tw, tt, td}, "top"));
  const double leg_half = 0.5 * (top_y - tt - kFloor);
  if (pedestal) {
    shape.parts.push_back(cylinder({0, kFloor + leg_half, 0}, 1.6 * leg_r, leg_half, "leg"));
    shape.parts.push_back(cylinder({0, kFloor + 0.02, 0}, base_r, 0.02, "base"));
  } else {
    for (double sx : {-1.0, 1.0}) {
      for (double sz : {-1.0, 1.0}) {
        shape.parts.push_back(cylinder({sx * (tw - leg_r - 0.02), kFloor + leg_half, sz * (td - leg_r - 0.02)}, leg_r,
                                       leg_half, "leg"));
      }
    }
    if (shelf) {
      const double y = kFloor + shelf_y * 2.0 * leg_half;
      shape.parts.push_back(box({0, y, 0}, {tw - 0.02, 0.015, td - 0.02}, "shelf"));
    }
  }
}

void build_plane(Sampler& rng, const Attributes& overrides, ProceduralShape& shape) {
  const double fr = rng.uniform(0.06, 0.09), fl = rng.uniform(0.45, 0.6);
  const double span = rng.uniform(0.5, 0.7), chord = rng.uniform(0.1, 0.16), wing_z = rng.uniform(-0.05, 0.1);
  const double fin_h = rng.uniform(0.1, 0.16);
  const bool engines = flag(rng, overrides, shape.attributes, "has_engines", 0.5);

  const Eigen::Matrix3d along_z = rotation_x(kPi / 2.0);
  shape.parts.push_back(cylinder({0, 0, 0}, fr, fl, "fuselage", along_z));
  shape.parts.push_back(sphere({0, 0, fl}, fr, "nose"));
  shape.parts.push_back(box({0, 0, wing_z}, {span, 0.015, chord}, "wing"));
  shape.parts.push_back(box({0, 0.01, -fl + 0.07}, {0.22, 0.012, 0.06}, "tail"));
  shape.parts.push_back(box({0, fin_h, -fl + 0.07}, {0.012, fin_h, 0.06}, "tail"));
  if (engines) {
    for (double sx : {-1.0, 1.0}) {
      shape.parts.push_back(cylinder({sx * 0.5 * span, -0.06, wing_z + 0.02}, 0.04, 0.12, "engine", along_z));
    }
  }
}

void paint(Sampler& rng, const Attributes& overrides, ProceduralShape& shape) {
  const auto& families = color_families();
  std::string family = families[rng.pick(families.size())];
  if (auto it = overrides.find("color_family"); it != overrides.end()) family = it->second;
  const double base = family_hue(family);
  shape.attributes["color_family"] = family;
  std::map<std::string, Vec3> by_label;
  for (auto& part : shape.parts) {
    auto [it, inserted] = by_label.try_emplace(part.label);
    if (inserted) {
      it->second = hsv_to_rgb(base + rng.uniform(-10.0, 10.0), rng.uniform(0.65, 0.9), rng.uniform(0.65, 0.95));
    }
    part.color = it->second;
  }
}

}  // namespace

double Part::distance(const Vec3& p) const {
  const Vec3 q = rotation.transpose() * (p - center);
  switch (kind) {
    case Primitive::Sphere:
      return q.norm() - size.x();
    case Primitive::Box: {
      const Vec3 d = q.cwiseAbs() - size;
      return d.cwiseMax(0.0).norm() + std::min(d.maxCoeff(), 0.0);
    }
    case Primitive::Cylinder: {
      const double dx = std::hypot(q.x(), q.z()) - size.x();
      const double dy = std::abs(q.y()) - size.y();
      return std::min(std::max(dx, dy), 0.0) + std::hypot(std::max(dx, 0.0), std::max(dy, 0.0));
    }
  }
  return 0.0;
}

double Part::surface_area() const {
  switch (kind) {
    case Primitive::Sphere: return 4.0 * kPi * size.x() * size.x();
    case Primitive::Box: return 8.0 * (size.x() * size.y() + size.y() * size.z() + size.x() * size.z());
    case Primitive::Cylinder: return 2.0 * kPi * size.x() * (2.0 * size.y()) + 2.0 * kPi * size.x() * size.x();
  }
  return 0.0;
}

Vec3 Part::surface_point(double u0, double u1, double u2) const {
  Vec3 q;
  switch (kind) {
    case Primitive::Sphere: {
      const double z = 2.0 * u0 - 1.0, phi = 2.0 * kPi * u1, s = std::sqrt(std::max(0.0, 1.0 - z * z));
      q = size.x() * Vec3(s * std::cos(phi), s * std::sin(phi), z);
      break;
    }
    case Primitive::Box: {
      const double ax = size.y() * size.z(), ay = size.x() * size.z(), az = size.x() * size.y();
      double pick = u0 * (ax + ay + az);
      int axis = pick < ax ? 0 : (pick < ax + ay ? 1 : 2);
      // reuse the fractional remainder of u2 for the face side
      const double side = u2 < 0.5 ? -1.0 : 1.0;
      const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
      q[axis] = side * size[axis];
      q[a1] = (2.0 * u1 - 1.0) * size[a1];
      q[a2] = (2.0 * std::fmod(2.0 * u2, 1.0) - 1.0) * size[a2];
      break;
    }
    case Primitive::Cylinder: {
      const double r = size.x(), h = size.y();
      const double side_area = 2.0 * kPi * r * 2.0 * h, cap_area = 2.0 * kPi * r * r;
      const double phi = 2.0 * kPi * u1;
      if (u0 * (side_area + cap_area) < side_area) {
        q = {r * std::cos(phi), (2.0 * u2 - 1.0) * h, r * std::sin(phi)};
      } else {
        const double rr = r * std::sqrt(std::fmod(2.0 * u2, 1.0));
        q = {rr * std::cos(phi), u2 < 0.5 ? -h : h, rr * std::sin(phi)};
      }
      break;
    }
  }
  return center + rotation * q;
}

double Part::bounding_extent() const {
  const double reach = kind == Primitive::Sphere ? size.x() : size.norm();
  return center.cwiseAbs().maxCoeff() + reach;
}

double ProceduralShape::distance_at(const Vec3& p) const {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& part : parts) d = std::min(d, part.distance(p));
  return d;
}

int ProceduralShape::nearest_part(const Vec3& p) const {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < parts.size(); ++i) {
    const double d = parts[i].distance(p);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

Vec3 ProceduralShape::normal_at(const Vec3& p, double eps) const {
  Vec3 n;
  for (int k = 0; k < 3; ++k) {
    Vec3 dp = Vec3::Zero();
    dp[k] = eps;
    n[k] = distance_at(p + dp) - distance_at(p - dp);
  }
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3::UnitZ();
}

std::vector<double> ProceduralShape::distance(std::span<const Vec3> points) const {
  std::vector<double> out(points.size());
  for (size_t i = 0; i < points.size(); ++i) out[i] = distance_at(points[i]);
  return out;
}

std::vector<Vec3> ProceduralShape::color(std::span<const Vec3> points) const {
  std::vector<Vec3> out(points.size(), kBackgroundColor);
  for (size_t i = 0; i < points.size(); ++i) {
    const int part = nearest_part(points[i]);
    if (part >= 0) out[i] = parts[part].color;
  }
  return out;
}

const std::vector<std::string>& known_categories() {
  static const std::vector<std::string> categories{"toy-chair", "toy-table", "toy-plane"};
  return categories;
}

const std::vector<std::string>& color_families() {
  static const std::vector<std::string> families{"red", "yellow", "green", "blue"};
  return families;
}

ProceduralShape make_procedural_shape(const std::string& category, uint64_t seed, const Attributes& overrides) {
  ProceduralShape shape;
  shape.category = category;
  shape.seed = seed;
  Sampler rng(seed);
  if (category == "toy-chair") build_chair(rng, overrides, shape);
  else if (category == "toy-table") build_table(rng, overrides, shape);
  else if (category == "toy-plane") build_plane(rng, overrides, shape);
  else fail("unknown_category", "unknown category '" + category + "'");
  paint(rng, overrides, shape);
  for (const auto& part : shape.parts) {
    require(part.bounding_extent() <= 0.9, "invalid_shape", "procedural part exceeds [-0.9, 0.9]^3");
  }
  return shape;
}

std::vector<SdfSample> sample_sdf_points(const ProceduralShape& shape, int n_near, int n_uniform, double noise_std,
                                         double far_threshold, uint64_t seed) {
  require(n_near >= 0 && n_uniform >= 0 && n_near + n_uniform > 0, "invalid_config", "sample counts must be positive");
  Sampler rng(seed);
  std::vector<SdfSample> samples;
  samples.reserve(static_cast<size_t>(n_near) + n_uniform);
  auto finish = [&](const Vec3& p) {
    SdfSample s;
    s.point = p;
    s.sdf = shape.distance_at(p);
    s.rgb = std::abs(s.sdf) <= far_threshold ? shape.parts[shape.nearest_part(p)].color : kBackgroundColor;
    samples.push_back(s);
  };

  if (n_near > 0) {
    require(!shape.parts.empty(), "invalid_shape", "cannot sample the surface of an empty shape");
    std::vector<double> areas;
    for (const auto& part : shape.parts) areas.push_back(part.surface_area());
    std::discrete_distribution<size_t> choose(areas.begin(), areas.end());
    std::mt19937_64 pick_engine(mix_seed(seed, 1));
    int produced = 0;
    while (produced < n_near) {
      const auto& part = shape.parts[choose(pick_engine)];
      const Vec3 on_part = part.surface_point(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1));
      // Surface points buried inside another part are not on the union's surface.
      if (shape.distance_at(on_part) < -1e-9) continue;
      const Vec3 jitter(rng.normal(), rng.normal(), rng.normal());
      finish(on_part + noise_std * jitter);
      ++produced;
    }
  }
  for (int i = 0; i < n_uniform; ++i) {
    finish({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
  }
  return samples;
}

Image synthesize_sketch(const ProceduralShape& shape, const Viewpoint& view, int resolution,
                        const SketchOptions& options) {
  Image sketch(resolution, resolution, 1, 0.0f);
  if (shape.parts.empty()) return sketch;
  const auto trace = sphere_trace(shape, view, resolution, options.trace);
  const size_t n = trace.hit.size();
  std::vector<Vec3> normals(n, Vec3::Zero());
  for (size_t p = 0; p < n; ++p) {
    if (trace.hit[p]) normals[p] = shape.normal_at(trace.points[p]);
  }
  const double cos_crease = std::cos(deg_to_rad(options.crease_degrees));
  auto at = [resolution](int r, int c) { return static_cast<size_t>(r) * resolution + c; };
  constexpr int dr[4] = {-1, 1, 0, 0};
  constexpr int dc[4] = {0, 0, -1, 1};

  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) {
      const size_t i = at(r, c);
      if (!trace.hit[i]) continue;
      bool edge = false;
      for (int k = 0; k < 4 && !edge; ++k) {
        const int rr = r + dr[k], cc = c + dc[k];
        if (rr < 0 || rr >= resolution || cc < 0 || cc >= resolution) continue;
        const size_t j = at(rr, cc);
        if (!trace.hit[j]) {
          edge = true;  // silhouette
          continue;
        }
        // Occluding edge: the neighbour lies behind and off this pixel's tangent plane.
        const double gap = std::abs(normals[i].dot(trace.points[j] - trace.points[i]));
        if (trace.depth[j] > trace.depth[i] && gap > options.depth_threshold) edge = true;
        // Crease: marked on one side only (the pixel whose neighbour is right or below).
        if ((k == 1 || k == 3) && normals[i].dot(normals[j]) < cos_crease) edge = true;
      }
      if (edge) sketch.at(r, c) = 1.0f;
    }
  }
  return sketch;
}

GroundTruthRender render_ground_truth(const ProceduralShape& shape, const Viewpoint& view, int resolution,
                                      const TraceOptions& options) {
  GroundTruthRender out{Image(resolution, resolution, 3, 1.0f), std::vector<int>(static_cast<size_t>(resolution) * resolution, -1)};
  if (shape.parts.empty()) return out;
  const auto trace = sphere_trace(shape, view, resolution, options);
  for (size_t p = 0; p < trace.hit.size(); ++p) {
    if (!trace.hit[p]) continue;
    const int part = shape.nearest_part(trace.points[p]);
    out.part_labels[p] = part;
    for (int ch = 0; ch < 3; ++ch) out.rgb.data[p * 3 + ch] = static_cast<float>(shape.parts[part].color[ch]);
  }
  return out;
}

ProceduralShape shape_of(const ShapeRecord& record) {
  return make_procedural_shape(record.category, record.seed, record.attributes);
}

ShapeRecord make_record(int64_t id, const ProceduralShape& shape, const DatasetConfig& config,
                        const std::vector<Viewpoint>& views) {
  ShapeRecord record;
  record.id = id;
  record.category = shape.category;
  record.seed = shape.seed;
  record.attributes = shape.attributes;
  record.samples = unpack_samples(pack_samples(sample_sdf_points(shape, config.n_near, config.n_uniform, config.noise_std,
                                                                 config.far_threshold, mix_seed(shape.seed, 0x5d5))));
  for (const auto& view : views) {
    record.sketches.push_back(synthesize_sketch(shape, view, config.resolution));
    record.renders.push_back(quantize8(render_ground_truth(shape, view, config.resolution).rgb));
  }
  return record;
}

Dataset make_dataset(const DatasetConfig& config) {
  require(!config.categories.empty() && config.instances_per_category > 0, "invalid_config",
          "dataset needs at least one category and instance");
  require(config.views > 0 && config.resolution >= 8, "invalid_config", "dataset needs views and resolution >= 8");
  Dataset dataset;
  dataset.config = config;
  dataset.views = view_ring(config.views, config.elevation);
  int64_t id = 0;
  int chair_slot = 0;
  for (int i = 0; i < config.instances_per_category; ++i) {
    for (size_t c = 0; c < config.categories.size(); ++c) {
      const std::string& category = config.categories[c];
      uint64_t seed = mix_seed(config.seed, static_cast<uint64_t>(id));
      Attributes overrides;
      if (category == "toy-chair" && chair_slot < 2 * config.ambiguous_pairs) {
        // both members of a pair share the first member's seed
        seed = mix_seed(config.seed, 0xa0000 + static_cast<uint64_t>(chair_slot / 2));
        overrides["has_armrests"] = chair_slot % 2 == 0 ? "true" : "false";
      }
      if (category == "toy-chair") ++chair_slot;
      dataset.records.push_back(make_record(id, make_procedural_shape(category, seed, overrides), config, dataset.views));
      ++id;
    }
  }
  return dataset;
}

namespace {

void atomic_write(const std::filesystem::path& path, const void* data, size_t size) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("io_error", "cannot write " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) fail("io_error", "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string points_file(int64_t id) { return std::to_string(id) + "_points.bin"; }
std::string image_file(int64_t id, int view, const char* kind) {
  return std::to_string(id) + "_" + std::to_string(view) + "_" + kind + ".png";
}

json config_to_json(const DatasetConfig& c) {
  return {{"categories", c.categories}, {"instances_per_category", c.instances_per_category},
          {"n_near", c.n_near},         {"n_uniform", c.n_uniform},
          {"noise_std", c.noise_std},   {"far_threshold", c.far_threshold},
          {"views", c.views},           {"elevation", c.elevation},
          {"resolution", c.resolution}, {"seed", c.seed},
          {"ambiguous_pairs", c.ambiguous_pairs}};
}

DatasetConfig config_from_json(const json& j) {
  DatasetConfig c;
  c.categories = j.at("categories").get<std::vector<std::string>>();
  c.instances_per_category = j.at("instances_per_category");
  c.n_near = j.at("n_near");
  c.n_uniform = j.at("n_uniform");
  c.noise_std = j.at("noise_std");
  c.far_threshold = j.at("far_threshold");
  c.views = j.at("views");
  c.elevation = j.at("elevation");
  c.resolution = j.at("resolution");
  c.seed = j.at("seed");
  c.ambiguous_pairs = j.value("ambiguous_pairs", 0);
  return c;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  static_assert(std::endian::native == std::endian::little, "dataset writer assumes a little-endian host");
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["schema_version"] = kDatasetSchemaVersion;
  manifest["format"] = "shapeforge-dataset";
  manifest["config"] = config_to_json(dataset.config);
  manifest["instance_count"] = dataset.records.size();
  manifest["record_layout"] = "float32 little-endian [x, y, z, sdf, r, g, b]";
  json views = json::array();
  for (const auto& v : dataset.views) views.push_back({{"azimuth", v.azimuth}, {"elevation", v.elevation}});
  manifest["views"] = views;
  json instances = json::array();
  for (const auto& r : dataset.records) {
    const auto flat = pack_samples(r.samples);
    atomic_write(dir / points_file(r.id), flat.data(), flat.size() * sizeof(float));
    for (size_t v = 0; v < r.sketches.size(); ++v) {
      const auto sketch = encode_png(r.sketches[v]);
      const auto render = encode_png(r.renders[v]);
      atomic_write(dir / image_file(r.id, static_cast<int>(v), "sketch"), sketch.data(), sketch.size());
      atomic_write(dir / image_file(r.id, static_cast<int>(v), "render"), render.data(), render.size());
    }
    instances.push_back({{"id", r.id},
                         {"category", r.category},
                         {"seed", r.seed},
                         {"attributes", r.attributes},
                         {"sample_count", r.samples.size()},
                         {"points", points_file(r.id)}});
  }
  manifest["instances"] = instances;
  const std::string text = manifest.dump(2);
  atomic_write(dir / "manifest.json", text.data(), text.size());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail("io_error", "no manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    fail("corrupt_manifest", std::string("manifest.json: ") + e.what());
  }
  try {
    const int version = manifest.at("schema_version");
    if (version != kDatasetSchemaVersion) {
      fail("version_mismatch", "dataset schema version " + std::to_string(version) + ", expected " +
                                   std::to_string(kDatasetSchemaVersion));
    }
    Dataset dataset;
    dataset.config = config_from_json(manifest.at("config"));
    for (const auto& v : manifest.at("views")) dataset.views.push_back({v.at("azimuth"), v.at("elevation")});
    const auto& instances = manifest.at("instances");
    if (instances.size() != manifest.at("instance_count").get<size_t>()) {
      fail("corrupt_manifest", "instance_count disagrees with instance list");
    }
    for (const auto& entry : instances) {
      ShapeRecord r;
      r.id = entry.at("id");
      r.category = entry.at("category");
      r.seed = entry.at("seed");
      r.attributes = entry.at("attributes").get<Attributes>();
      const size_t count = entry.at("sample_count");
      const auto path = dir / entry.at("points").get<std::string>();
      std::ifstream pin(path, std::ios::binary);
      if (!pin) fail("corrupt_data", "instance " + std::to_string(r.id) + ": missing points file");
      std::vector<float> flat(count * 7);
      pin.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(float)));
      if (static_cast<size_t>(pin.gcount()) != flat.size() * sizeof(float) || pin.peek() != EOF) {
        fail("corrupt_data", "instance " + std::to_string(r.id) + ": points file size does not match sample_count");
      }
      r.samples = unpack_samples(flat);
      for (size_t v = 0; v < dataset.views.size(); ++v) {
        r.sketches.push_back(read_png(dir / image_file(r.id, static_cast<int>(v), "sketch")));
        r.renders.push_back(read_png(dir / image_file(r.id, static_cast<int>(v), "render")));
      }
      dataset.records.push_back(std::move(r));
    }
    return dataset;
  } catch (const json::exception& e) {
    fail("corrupt_manifest", std::string("manifest.json: ") + e.what());
  }
}

}  // namespace shapeforge
