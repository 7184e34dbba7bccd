#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shapeforge/geometry.hpp"
#include "shapeforge/image.hpp"
#include "shapeforge/implicit3d.hpp"

namespace shapeforge {

enum class Primitive { Sphere, Box, Cylinder };

// One rigid primitive. `size` is (radius, -, -) for spheres, half extents for
// boxes and (radius, half height, -) for cylinders whose axis is local +y.
struct Part {
  Primitive kind = Primitive::Sphere;
  Vec3 center = Vec3::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // local -> world
  Vec3 size = Vec3::Zero();
  std::string label;
  Vec3 color = Vec3::Ones();

  double distance(const Vec3& p) const;
  double surface_area() const;
  // Uniform point on the primitive's surface from two/three uniforms.
  Vec3 surface_point(double u0, double u1, double u2) const;
  // Loose world-space bound of the part.
  double bounding_extent() const;
};

using Attributes = std::map<std::string, std::string>;

// Union of coloured parts. Distance is the minimum over parts; colour comes from
// the part closest to the query point.
class ProceduralShape : public ColoredField {
 public:
  std::string category;
  uint64_t seed = 0;
  Attributes attributes;
  std::vector<Part> parts;

  double distance_at(const Vec3& p) const;
  int nearest_part(const Vec3& p) const;
  Vec3 normal_at(const Vec3& p, double eps = 1e-5) const;

  std::vector<double> distance(std::span<const Vec3> points) const override;
  std::vector<Vec3> color(std::span<const Vec3> points) const override;
};

const std::vector<std::string>& known_categories();
const std::vector<std::string>& color_families();

// Forced attribute values; keys are attribute names ("has_armrests",
// "color_family", ...). Random draws are consumed either way, so overriding one
// attribute leaves every other parameter of the seed unchanged.
ProceduralShape make_procedural_shape(const std::string& category, uint64_t seed, const Attributes& overrides = {});

struct SdfSample {
  Vec3 point = Vec3::Zero();
  double sdf = 0.0;
  Vec3 rgb = Vec3::Ones();

  bool operator==(const SdfSample&) const = default;
};

inline const Vec3 kBackgroundColor{1.0, 1.0, 1.0};

// n_near jittered surface points followed by n_uniform points in [-1, 1]^3.
// Points farther than far_threshold from the surface carry the background colour.
std::vector<SdfSample> sample_sdf_points(const ProceduralShape& shape, int n_near, int n_uniform, double noise_std,
                                         double far_threshold, uint64_t seed);

struct SketchOptions {
  double depth_threshold = 0.03;   // tangent-plane gap that counts as an occluding edge
  double crease_degrees = 60.0;    // normal change that counts as a crease
  TraceOptions trace;
};

// Binary line drawing: silhouette boundary, occluding depth edges and creases.
Image synthesize_sketch(const ProceduralShape& shape, const Viewpoint& view, int resolution,
                        const SketchOptions& options = {});

struct GroundTruthRender {
  Image rgb;
  std::vector<int> part_labels;  // part index per pixel, -1 for background
};

GroundTruthRender render_ground_truth(const ProceduralShape& shape, const Viewpoint& view, int resolution,
                                      const TraceOptions& options = {});

struct DatasetConfig {
  std::vector<std::string> categories{"toy-chair", "toy-table"};
  int instances_per_category = 64;
  int n_near = 4096;
  int n_uniform = 2048;
  double noise_std = 0.025;
  double far_threshold = 0.1;
  int views = 8;
  double elevation = kRingElevation;
  int resolution = 64;
  uint64_t seed = 0;
  // Leading toy-chair slots generated as pairs that share every parameter except
  // the armrests.
  int ambiguous_pairs = 0;
};

struct ShapeRecord {
  int64_t id = 0;
  std::string category;
  uint64_t seed = 0;
  Attributes attributes;
  std::vector<SdfSample> samples;
  std::vector<Image> sketches;  // one per view
  std::vector<Image> renders;

  bool operator==(const ShapeRecord&) const = default;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Viewpoint> views;
  std::vector<ShapeRecord> records;
};

// Regenerates the analytic shape behind a record.
ProceduralShape shape_of(const ShapeRecord& record);

// Samples stored at float32 precision and images at 8-bit precision, matching
// what the on-disk format can represent exactly.
ShapeRecord make_record(int64_t id, const ProceduralShape& shape, const DatasetConfig& config,
                        const std::vector<Viewpoint>& views);

// Pure function of the config (including its master seed).
Dataset make_dataset(const DatasetConfig& config);

inline constexpr int kDatasetSchemaVersion = 1;

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace shapeforge
