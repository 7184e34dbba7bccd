#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "shapeforge/editor.hpp"
#include "shapeforge/geometry.hpp"
#include "shapeforge/mesh.hpp"
#include "shapeforge/model.hpp"
#include "shapeforge/synthdata.hpp"

namespace shapeforge {

// mean_a min_b |a - b|^2 + mean_b min_a |b - a|^2, by exhaustive search.
double chamfer_brute(std::span<const Vec3> a, std::span<const Vec3> b);
// Same value through a kd-tree.
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b);

// Static 3D kd-tree answering exact nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);
  // Squared distance to the closest point.
  double nearest_sq(const Vec3& query) const;
  size_t size() const { return points_.size(); }

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };
  int build(std::vector<int>& idx, int lo, int hi, int depth);
  void search(int node, const Vec3& q, double& best) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

inline constexpr int kChamferSamples = 3000;

// Area-weighted uniform samples on the triangles.
std::vector<Vec3> sample_surface(const Mesh& mesh, int count, uint64_t seed);

// Chamfer between surface samples of two meshes; fixed sampling seed.
double mesh_chamfer(const Mesh& a, const Mesh& b, int samples = kChamferSamples, uint64_t seed = 0);

inline constexpr double kPsnrCap = 99.0;

// -10 log10(MSE) for images in [0, 1]; identical images give the cap.
double psnr(const torch::Tensor& a, const torch::Tensor& b);

enum class OcclusionKind { Full, HalfHorizontal, ThreeQuarterVertical, HalfVertical, QuarterVertical };

OcclusionKind parse_occlusion(const std::string& name);
const char* occlusion_name(OcclusionKind kind);
std::vector<OcclusionKind> all_occlusions();
// Fraction of visible pixels: 1, 0.5 (left), 0.75 (top), 0.5 (top), 0.25 (top).
double visible_fraction(OcclusionKind kind);

// [R, R] float mask, 1 on visible pixels.
torch::Tensor occlusion_mask(OcclusionKind kind, int64_t resolution);

// Occluded pixels set to `background` (white for renders, 0 for sketch strokes).
std::pair<torch::Tensor, torch::Tensor> apply_occlusion(const torch::Tensor& image_chw, OcclusionKind kind,
                                                        double background = 1.0);

class ClassifierImpl : public torch::nn::Module {
 public:
  explicit ClassifierImpl(int64_t channels = 3, int64_t width = 16);
  torch::Tensor forward(const torch::Tensor& images);  // [B, C, H, W] -> logits [B]

 private:
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Classifier);

struct ClassifierConfig {
  int epochs = 40;
  int batch = 16;
  double lr = 2e-3;
  int64_t width = 16;
  int min_per_side = 32;
  uint64_t seed = 0;
};

// Binary CNN: positives labelled 1, negatives 0.
Classifier train_eval_classifier(const std::vector<torch::Tensor>& positives, const std::vector<torch::Tensor>& negatives,
                                 const ClassifierConfig& config = {});

// Predicted labels (probability > 0.5).
std::vector<int> classify(Classifier& classifier, const std::vector<torch::Tensor>& images);

double classify_error(Classifier& classifier, const std::vector<torch::Tensor>& images, const std::vector<int>& labels);

struct ReportRow {
  std::string occlusion;
  std::string modality;
  double chamfer_x1e3 = 0.0;
  int shapes = 0;
};

// {"rows": [{"occlusion", "modality", "chamfer_x1e3", "shapes"}, ...]}
std::string report_json(const std::vector<ReportRow>& rows);

// Reconstruction protocol: occlude one view of a dataset instance, reconstruct from
// it, extract the mesh and compare against the analytic source shape.
struct ProtocolConfig {
  OptimizeConfig optimize;
  int mesh_resolution = 64;
  int chamfer_samples = kChamferSamples;
  uint64_t chamfer_seed = 0;
};

Mesh code_mesh(MMVAD& model, const JointLatentCode& code, int resolution);
Mesh reference_mesh(const ShapeRecord& record, int resolution);

// Target image of a record view: sketch [1, R, R] or render [3, R, R].
torch::Tensor record_image(const ShapeRecord& record, Modality modality, int view_index);

struct ReconstructionEval {
  std::vector<Trial> trials;
  int best = 0;
  JointLatentCode code;
  Mesh mesh;
  double chamfer = 0.0;  // unscaled
};

// `reference` may be passed in to skip re-extracting the source mesh.
ReconstructionEval evaluate_reconstruction(MMVAD& model, const Dataset& dataset, int64_t instance, Modality modality,
                                           int view_index, OcclusionKind occlusion, const ProtocolConfig& config,
                                           const Mesh* reference = nullptr);

// Mean Chamfer x 10^3 per (occlusion, modality) over the given instances.
std::vector<ReportRow> occlusion_report(MMVAD& model, const Dataset& dataset, const std::vector<int64_t>& instances,
                                        const std::vector<OcclusionKind>& kinds, const std::vector<Modality>& modalities,
                                        int view_index, const ProtocolConfig& config);

}  // namespace shapeforge
