#include "shapeforge/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "json.hpp"

#include "shapeforge/error.hpp"
#include "shapeforge/random.hpp"

namespace shapeforge {

namespace nn = torch::nn;

namespace {

void require_points(std::span<const Vec3> a, std::span<const Vec3> b) {
  require(!a.empty() && !b.empty(), "empty_set", "chamfer needs two non-empty point sets");
}

}  // namespace

double chamfer_brute(std::span<const Vec3> a, std::span<const Vec3> b) {
  require_points(a, b);
  auto directed = [](std::span<const Vec3> from, std::span<const Vec3> to) {
    double sum = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  return directed(a, b) + directed(b, a);
}

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  std::vector<int> idx(points_.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree::build(std::vector<int>& idx, int lo, int hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const int mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](int i, int j) { return points_[i][axis] < points_[j][axis]; });
  const int node = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[mid], axis, -1, -1});
  const int left = build(idx, lo, mid, depth + 1);
  const int right = build(idx, mid + 1, hi, depth + 1);
  nodes_[node].left = left;
  nodes_[node].right = right;
  return node;
}

void KdTree::search(int node, const Vec3& q, double& best) const {
  if (node < 0) return;
  const auto& n = nodes_[node];
  const Vec3& p = points_[n.point];
  best = std::min(best, (p - q).squaredNorm());
  const double diff = q[n.axis] - p[n.axis];
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff < best) search(far, q, best);
}

double KdTree::nearest_sq(const Vec3& query) const {
  require(root_ >= 0, "empty_set", "nearest neighbour query on an empty tree");
  double best = std::numeric_limits<double>::infinity();
  search(root_, query, best);
  return best;
}

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  require_points(a, b);
  auto directed = [](std::span<const Vec3> from, std::span<const Vec3> to) {
    KdTree tree(to);
    double sum = 0.0;
    for (const auto& p : from) sum += tree.nearest_sq(p);
    return sum / static_cast<double>(from.size());
  };
  return directed(a, b) + directed(b, a);
}

std::vector<Vec3> sample_surface(const Mesh& mesh, int count, uint64_t seed) {
  require(!mesh.empty(), "empty_mesh", "cannot sample an empty mesh");
  require(count >= 1, "invalid_config", "sample count must be positive");
  std::vector<double> areas;
  areas.reserve(mesh.triangles.size());
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    areas.push_back(0.5 * (mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a).norm());
  }
  std::mt19937_64 rng(seed);
  std::discrete_distribution<size_t> pick(areas.begin(), areas.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec3> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const auto& t = mesh.triangles[pick(rng)];
    double u = unit(rng);
    double v = unit(rng);
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3& a = mesh.vertices[t[0]];
    out.push_back(a + u * (mesh.vertices[t[1]] - a) + v * (mesh.vertices[t[2]] - a));
  }
  return out;
}

double mesh_chamfer(const Mesh& a, const Mesh& b, int samples, uint64_t seed) {
  auto pa = sample_surface(a, samples, mix_seed(seed, 0));
  auto pb = sample_surface(b, samples, mix_seed(seed, 1));
  return chamfer(pa, pb);
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  require(a.sizes() == b.sizes(), "dim_mismatch", "psnr needs images of equal shape");
  const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).square().mean().item<double>();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

OcclusionKind parse_occlusion(const std::string& name) {
  for (auto kind : all_occlusions()) {
    if (name == occlusion_name(kind)) return kind;
  }
  fail("unknown_occlusion", "unknown occlusion kind '" + name + "'");
}

const char* occlusion_name(OcclusionKind kind) {
  switch (kind) {
    case OcclusionKind::Full: return "full";
    case OcclusionKind::HalfHorizontal: return "half-horizontal";
    case OcclusionKind::ThreeQuarterVertical: return "three-quarter-vertical";
    case OcclusionKind::HalfVertical: return "half-vertical";
    case OcclusionKind::QuarterVertical: return "quarter-vertical";
  }
  return "?";
}

std::vector<OcclusionKind> all_occlusions() {
  return {OcclusionKind::Full, OcclusionKind::HalfHorizontal, OcclusionKind::ThreeQuarterVertical,
          OcclusionKind::HalfVertical, OcclusionKind::QuarterVertical};
}

double visible_fraction(OcclusionKind kind) {
  switch (kind) {
    case OcclusionKind::Full: return 1.0;
    case OcclusionKind::HalfHorizontal: return 0.5;
    case OcclusionKind::ThreeQuarterVertical: return 0.75;
    case OcclusionKind::HalfVertical: return 0.5;
    case OcclusionKind::QuarterVertical: return 0.25;
  }
  return 0.0;
}

torch::Tensor occlusion_mask(OcclusionKind kind, int64_t resolution) {
  require(resolution >= 4 && resolution % 4 == 0, "invalid_config", "occlusion masks need a resolution divisible by 4");
  auto mask = torch::zeros({resolution, resolution});
  const auto visible = static_cast<int64_t>(std::llround(visible_fraction(kind) * resolution));
  if (kind == OcclusionKind::HalfHorizontal) {
    mask.narrow(1, 0, visible).fill_(1.0);
  } else {
    mask.narrow(0, 0, visible).fill_(1.0);
  }
  return mask;
}

std::pair<torch::Tensor, torch::Tensor> apply_occlusion(const torch::Tensor& image_chw, OcclusionKind kind,
                                                        double background) {
  require(image_chw.dim() == 3 && image_chw.size(1) == image_chw.size(2), "dim_mismatch",
          "occlusion expects a square [C, R, R] image");
  auto mask = occlusion_mask(kind, image_chw.size(1)).to(image_chw.scalar_type());
  auto occluded = image_chw * mask + background * (1.0 - mask);
  return {occluded, mask};
}

ClassifierImpl::ClassifierImpl(int64_t channels, int64_t width) {
  auto conv = [](int64_t in, int64_t out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(2).padding(1)); };
  features_ = register_module("features", nn::Sequential(conv(channels, width), nn::ReLU(), conv(width, 2 * width),
                                                         nn::ReLU(), conv(2 * width, 2 * width), nn::ReLU()));
  head_ = register_module("head", nn::Linear(2 * width, 1));
}

torch::Tensor ClassifierImpl::forward(const torch::Tensor& images) {
  auto x = features_->forward(images).mean({2, 3});
  return head_(x).reshape({-1});
}

Classifier train_eval_classifier(const std::vector<torch::Tensor>& positives,
                                 const std::vector<torch::Tensor>& negatives, const ClassifierConfig& config) {
  require(static_cast<int>(positives.size()) >= config.min_per_side &&
              static_cast<int>(negatives.size()) >= config.min_per_side,
          "insufficient_data", "classifier needs at least " + std::to_string(config.min_per_side) + " images per side");
  std::vector<torch::Tensor> all(positives);
  all.insert(all.end(), negatives.begin(), negatives.end());
  auto images = torch::stack(all).to(torch::kFloat32);
  auto labels = torch::cat({torch::ones({static_cast<int64_t>(positives.size())}),
                            torch::zeros({static_cast<int64_t>(negatives.size())})});

  torch::manual_seed(config.seed);
  auto gen = make_generator(mix_seed(config.seed, 7));
  Classifier model(images.size(1), config.width);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(config.lr));
  const int64_t n = images.size(0);
  model->train();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto order = torch::randperm(n, gen);
    for (int64_t start = 0; start < n; start += config.batch) {
      auto idx = order.narrow(0, start, std::min<int64_t>(config.batch, n - start));
      auto loss = torch::binary_cross_entropy_with_logits(model->forward(images.index_select(0, idx)),
                                                          labels.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }
  model->eval();
  return model;
}

std::vector<int> classify(Classifier& classifier, const std::vector<torch::Tensor>& images) {
  if (images.empty()) return {};
  torch::NoGradGuard no_grad;
  classifier->eval();
  auto logits = classifier->forward(torch::stack(images).to(torch::kFloat32));
  std::vector<int> out;
  out.reserve(images.size());
  for (int64_t i = 0; i < logits.size(0); ++i) out.push_back(logits[i].item<double>() > 0.0 ? 1 : 0);
  return out;
}

double classify_error(Classifier& classifier, const std::vector<torch::Tensor>& images, const std::vector<int>& labels) {
  require(images.size() == labels.size() && !images.empty(), "dim_mismatch",
          "classification needs one label per image");
  auto predicted = classify(classifier, images);
  int wrong = 0;
  for (size_t i = 0; i < labels.size(); ++i) wrong += predicted[i] != labels[i];
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

std::string report_json(const std::vector<ReportRow>& rows) {
  nlohmann::json out;
  out["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    out["rows"].push_back(
        {{"occlusion", r.occlusion}, {"modality", r.modality}, {"chamfer_x1e3", r.chamfer_x1e3}, {"shapes", r.shapes}});
  }
  return out.dump(2);
}

Mesh code_mesh(MMVAD& model, const JointLatentCode& code, int resolution) {
  NeuralField field(model->implicit, code);
  return extract_mesh(field, resolution);
}

Mesh reference_mesh(const ShapeRecord& record, int resolution) { return extract_mesh(shape_of(record), resolution); }

torch::Tensor record_image(const ShapeRecord& record, Modality modality, int view_index) {
  require(modality != Modality::Shape3D, "unknown_modality", "record images are sketches or renders");
  const auto& images = modality == Modality::Sketch ? record.sketches : record.renders;
  require(view_index >= 0 && view_index < static_cast<int>(images.size()), "bad_view", "view index out of range");
  return image_to_tensor(images[view_index]);
}

ReconstructionEval evaluate_reconstruction(MMVAD& model, const Dataset& dataset, int64_t instance, Modality modality,
                                           int view_index, OcclusionKind occlusion, const ProtocolConfig& config,
                                           const Mesh* reference) {
  require(instance >= 0 && instance < static_cast<int64_t>(dataset.records.size()), "unknown_instance",
          "instance id out of range");
  const auto& record = dataset.records[instance];
  const double background = modality == Modality::Sketch ? 0.0 : 1.0;
  auto [target, mask] = apply_occlusion(record_image(record, modality, view_index), occlusion, background);
  ReconstructionEval out;
  out.trials = reconstruct_partial(model, target, mask, modality, dataset.views[view_index], config.optimize,
                                   config.optimize.trials);
  out.best = select_best(out.trials);
  out.code = out.trials[out.best].code;
  out.mesh = code_mesh(model, out.code, config.mesh_resolution);
  const Mesh source = reference ? Mesh{} : reference_mesh(record, config.mesh_resolution);
  const Mesh& ref = reference ? *reference : source;
  // An empty reconstruction has no surface to compare; report it as unbounded.
  out.chamfer = out.mesh.empty() ? std::numeric_limits<double>::infinity()
                                 : mesh_chamfer(out.mesh, ref, config.chamfer_samples, config.chamfer_seed);
  return out;
}

std::vector<ReportRow> occlusion_report(MMVAD& model, const Dataset& dataset, const std::vector<int64_t>& instances,
                                        const std::vector<OcclusionKind>& kinds, const std::vector<Modality>& modalities,
                                        int view_index, const ProtocolConfig& config) {
  std::vector<Mesh> references;
  for (auto id : instances) references.push_back(reference_mesh(dataset.records.at(id), config.mesh_resolution));
  std::vector<ReportRow> rows;
  for (auto kind : kinds) {
    for (auto modality : modalities) {
      double sum = 0.0;
      for (size_t i = 0; i < instances.size(); ++i) {
        sum += evaluate_reconstruction(model, dataset, instances[i], modality, view_index, kind, config, &references[i])
                   .chamfer;
      }
      rows.push_back({occlusion_name(kind), modality_name(modality), 1e3 * sum / static_cast<double>(instances.size()),
                      static_cast<int>(instances.size())});
    }
  }
  return rows;
}

}  // namespace shapeforge
