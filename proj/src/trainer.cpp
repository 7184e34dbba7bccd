#include "shapeforge/trainer.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "shapeforge/archive.hpp"
#include "shapeforge/error.hpp"
#include "shapeforge/random.hpp"

namespace shapeforge {

using json = nlohmann::json;

JointLatentCode Checkpoint::code(int64_t id) const {
  return JointLatentCode::split(codebook->entry(id).mu.detach().clone(), config.model.dims.shape);
}

TrainingTensors to_tensors(const Dataset& dataset) {
  require(!dataset.records.empty(), "empty_dataset", "training needs at least one instance");
  const int64_t n = static_cast<int64_t>(dataset.records.size());
  const int64_t s = static_cast<int64_t>(dataset.records.front().samples.size());
  const int64_t v = static_cast<int64_t>(dataset.views.size());
  const int64_t r = dataset.config.resolution;
  TrainingTensors t;
  t.points = torch::empty({n, s, 3});
  t.sdf = torch::empty({n, s});
  t.rgb = torch::empty({n, s, 3});
  t.sketches = torch::empty({n, v, 1, r, r});
  t.renders = torch::empty({n, v, 3, r, r});
  auto points = t.points.accessor<float, 3>();
  auto sdf = t.sdf.accessor<float, 2>();
  auto rgb = t.rgb.accessor<float, 3>();
  for (int64_t i = 0; i < n; ++i) {
    const auto& rec = dataset.records[i];
    require(static_cast<int64_t>(rec.samples.size()) == s, "missing_modality",
            "instance " + std::to_string(rec.id) + " has an unexpected sample count");
    require(static_cast<int64_t>(rec.sketches.size()) == v && static_cast<int64_t>(rec.renders.size()) == v,
            "missing_modality", "instance " + std::to_string(rec.id) + " lacks a view");
    for (int64_t k = 0; k < s; ++k) {
      const auto& smp = rec.samples[k];
      for (int d = 0; d < 3; ++d) {
        points[i][k][d] = static_cast<float>(smp.point[d]);
        rgb[i][k][d] = static_cast<float>(smp.rgb[d]);
      }
      sdf[i][k] = static_cast<float>(smp.sdf);
    }
    for (int64_t j = 0; j < v; ++j) {
      t.sketches[i][j].copy_(image_to_tensor(rec.sketches[j]));
      t.renders[i][j].copy_(image_to_tensor(rec.renders[j]));
    }
  }
  t.views = encode_views(dataset.views);
  return t;
}

Checkpoint initialize(const TrainConfig& config, int64_t instances) {
  require(config.lr_decoder > 0 && config.lr_codes > 0, "invalid_config", "learning rates must be positive");
  require(config.batch_instances > 0 && config.points_per_instance > 0 && config.steps >= 0, "invalid_config",
          "batch sizes must be positive and steps non-negative");
  torch::manual_seed(config.seed);
  Checkpoint ck;
  ck.config = config;
  ck.model = MMVAD(config.model);
  ck.codebook = CodeBook(instances, config.model.dims);
  return ck;
}

namespace {

LossBreakdown forward_batch(Checkpoint& ck, const TrainingTensors& data, const torch::Tensor& ids,
                            const torch::Tensor& noise, const torch::Tensor& view_index,
                            const torch::Tensor& point_index) {
  const auto& dims = ck.config.model.dims;
  const int64_t b = ids.size(0);
  const int64_t p = point_index.size(1);
  const auto params = ck.codebook->gather(ids);
  const auto z = reparameterize(params, noise, dims.shape);

  auto pts = data.points.index_select(0, ids).gather(1, point_index.unsqueeze(-1).expand({b, p, 3}));
  auto true_sdf = data.sdf.index_select(0, ids).gather(1, point_index);
  auto true_rgb = data.rgb.index_select(0, ids).gather(1, point_index.unsqueeze(-1).expand({b, p, 3}));

  auto zs_points = z.shape.unsqueeze(1).expand({b, p, dims.shape}).reshape({b * p, dims.shape});
  auto zc_points = z.color.unsqueeze(1).expand({b, p, dims.color}).reshape({b * p, dims.color});
  auto shape_out = ck.model->implicit->shape_net->forward(zs_points, pts.reshape({b * p, 3}));
  auto pred_rgb = ck.model->implicit->color_net->forward(zc_points, shape_out.features);

  auto views = data.views.index_select(0, view_index);
  auto flat = ids * data.sketches.size(1) + view_index;
  auto sketches = data.sketches.flatten(0, 1).index_select(0, flat);
  auto renders = data.renders.flatten(0, 1).index_select(0, flat);

  ModalityOutputs outputs;
  outputs.sdf = shape_out.sdf;
  outputs.rgb = pred_rgb;
  outputs.sketch_logits = ck.model->sketch->forward(z.shape, views);
  outputs.render = ck.model->render->forward(z.shape, z.color, views);
  ModalityTargets targets;
  targets.sdf = true_sdf.reshape({b * p});
  targets.rgb = true_rgb.reshape({b * p, 3});
  targets.sketch = sketches;
  targets.render = renders;
  return assemble_objective(outputs, targets, kl_to_standard_normal(params), ck.config.weights,
                            ck.config.model.pyramid_levels);
}

void check_finite(const LossBreakdown& loss, int64_t step) {
  const std::pair<const char*, const torch::Tensor*> terms[] = {
      {"l_c", &loss.l_c}, {"l_s", &loss.l_s}, {"l_r", &loss.l_r}, {"kl", &loss.kl}, {"total", &loss.total}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value->item<double>())) {
      fail("non_finite_loss", std::string("loss term ") + name + " is non-finite at step " + std::to_string(step));
    }
  }
}

json history_to_json(const HistoryEntry& h) {
  return {{"step", h.step}, {"l_c", h.l_c}, {"l_s", h.l_s}, {"l_r", h.l_r},
          {"kl", h.kl},     {"total", h.total}, {"smoothed_total", h.smoothed_total}};
}

HistoryEntry history_from_json(const json& j) {
  return {j.at("step"), j.at("l_c"), j.at("l_s"), j.at("l_r"), j.at("kl"), j.at("total"), j.at("smoothed_total")};
}

}  // namespace

void train_steps(Checkpoint& ck, const TrainingTensors& data, int64_t steps, const TrainHooks& hooks) {
  const auto& cfg = ck.config;
  require(data.points.size(0) == ck.codebook->size(), "dim_mismatch", "codebook size differs from dataset size");
  if (cfg.deterministic) torch::set_num_threads(1);
  ck.model->train();
  torch::optim::Adam decoder_opt(ck.model->parameters(), torch::optim::AdamOptions(cfg.lr_decoder));
  torch::optim::Adam code_opt(ck.codebook->parameters(), torch::optim::AdamOptions(cfg.lr_codes));
  auto gen = make_generator(mix_seed(cfg.seed, 0x7a1 + static_cast<uint64_t>(ck.iteration)));

  const int64_t n = ck.codebook->size();
  const int64_t b = std::min(cfg.batch_instances, n);
  const int64_t s = data.points.size(1);
  const int64_t v = data.views.size(0);
  double smoothed = ck.history.empty() ? std::nan("") : ck.history.back().smoothed_total;

  for (int64_t step = 0; step < steps; ++step) {
    auto ids = torch::randperm(n, gen, torch::kLong).narrow(0, 0, b);
    auto noise = torch::randn({b, cfg.model.dims.total()}, gen, torch::kFloat32);
    auto view_index = torch::randint(v, {b}, gen, torch::kLong);
    auto point_index = torch::randint(s, {b, cfg.points_per_instance}, gen, torch::kLong);

    auto loss = forward_batch(ck, data, ids, noise, view_index, point_index);
    check_finite(loss, ck.iteration);
    decoder_opt.zero_grad();
    code_opt.zero_grad();
    loss.total.backward();
    decoder_opt.step();
    code_opt.step();
    ++ck.iteration;

    const double total = loss.total.item<double>();
    smoothed = std::isnan(smoothed) ? total : cfg.smoothing * smoothed + (1.0 - cfg.smoothing) * total;
    if (ck.iteration % cfg.log_every == 0 || step + 1 == steps) {
      HistoryEntry h{ck.iteration, loss.l_c.item<double>(), loss.l_s.item<double>(), loss.l_r.item<double>(),
                     loss.kl.item<double>(), total, smoothed};
      ck.history.push_back(h);
      if (hooks.jsonl) {
        json line = history_to_json(h);
        line.erase("smoothed_total");
        *hooks.jsonl << line.dump() << '\n';
      }
      if (hooks.on_log) hooks.on_log(h);
    }
    if (cfg.checkpoint_every > 0 && !hooks.checkpoint_dir.empty() && ck.iteration % cfg.checkpoint_every == 0) {
      ck.model->eval();
      save_checkpoint(ck, hooks.checkpoint_dir);
      ck.model->train();
    }
  }
  ck.model->eval();
}

Checkpoint train(const Dataset& dataset, const TrainConfig& config, const TrainHooks& hooks) {
  const auto data = to_tensors(dataset);
  require(data.sketches.size(-1) == config.model.resolution, "invalid_config",
          "dataset image resolution differs from model resolution");
  Checkpoint ck = initialize(config, data.points.size(0));
  train_steps(ck, data, config.steps, hooks);
  return ck;
}

LossBreakdown instance_objective(Checkpoint& ck, const TrainingTensors& data, int64_t id, const torch::Tensor& noise,
                                 int64_t view_index, const torch::Tensor& point_index) {
  auto ids = torch::tensor({id}, torch::kLong);
  return forward_batch(ck, data, ids, noise.reshape({1, -1}), torch::tensor({view_index}, torch::kLong),
                       point_index.reshape({1, -1}));
}

namespace {

json model_config_to_json(const ModelConfig& m) {
  return {{"shape_dim", m.dims.shape},   {"color_dim", m.dims.color},       {"shape_width", m.shape_width},
          {"shape_layers", m.shape_layers}, {"tap_layer", m.tap_layer},     {"color_width", m.color_width},
          {"color_layers", m.color_layers}, {"resolution", m.resolution},   {"image_width", m.image_width},
          {"pyramid_levels", m.pyramid_levels}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  m.dims = {j.at("shape_dim"), j.at("color_dim")};
  m.shape_width = j.at("shape_width");
  m.shape_layers = j.at("shape_layers");
  m.tap_layer = j.at("tap_layer");
  m.color_width = j.at("color_width");
  m.color_layers = j.at("color_layers");
  m.resolution = j.at("resolution");
  m.image_width = j.at("image_width");
  m.pyramid_levels = j.at("pyramid_levels");
  return m;
}

json train_config_to_json(const TrainConfig& c) {
  return {{"lr_decoder", c.lr_decoder},
          {"lr_codes", c.lr_codes},
          {"steps", c.steps},
          {"batch_instances", c.batch_instances},
          {"points_per_instance", c.points_per_instance},
          {"weights", {{"c", c.weights.c}, {"s", c.weights.s}, {"r", c.weights.r}, {"kl", c.weights.kl}}},
          {"seed", c.seed},
          {"log_every", c.log_every},
          {"checkpoint_every", c.checkpoint_every},
          {"smoothing", c.smoothing},
          {"deterministic", c.deterministic}};
}

TrainConfig train_config_from_json(const json& j, const ModelConfig& model) {
  TrainConfig c;
  c.model = model;
  c.lr_decoder = j.at("lr_decoder");
  c.lr_codes = j.at("lr_codes");
  c.steps = j.at("steps");
  c.batch_instances = j.at("batch_instances");
  c.points_per_instance = j.at("points_per_instance");
  const auto& w = j.at("weights");
  c.weights = {w.at("c"), w.at("s"), w.at("r"), w.at("kl")};
  c.seed = j.at("seed");
  c.log_every = j.at("log_every");
  c.checkpoint_every = j.at("checkpoint_every");
  c.smoothing = j.at("smoothing");
  c.deterministic = j.at("deterministic");
  return c;
}

struct BlobSpec {
  const char* name;
  const char* file;
};
constexpr BlobSpec kBlobs[] = {{"shape_net", "shape_net.bin"},
                               {"color_net", "color_net.bin"},
                               {"sketch_generator", "sketch_generator.bin"},
                               {"render_generator", "render_generator.bin"},
                               {"codebook", "codebook.bin"}};

torch::nn::Module& blob_module(const Checkpoint& ck, const std::string& name) {
  if (name == "shape_net") return *ck.model.ptr()->implicit->shape_net;
  if (name == "color_net") return *ck.model.ptr()->implicit->color_net;
  if (name == "sketch_generator") return *ck.model.ptr()->sketch;
  if (name == "render_generator") return *ck.model.ptr()->render;
  return *ck.codebook.ptr();
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "shapeforge-checkpoint";
  manifest["schema_version"] = kCheckpointSchemaVersion;
  manifest["iteration"] = ck.iteration;
  manifest["instances"] = ck.codebook->size();
  manifest["model_config"] = model_config_to_json(ck.config.model);
  manifest["train_config"] = train_config_to_json(ck.config);
  manifest["decoder_hash"] = state_hash(*ck.model);
  json blobs = json::object();
  for (const auto& blob : kBlobs) {
    write_tensor_blob(dir / blob.file, module_state(blob_module(ck, blob.name)));
    blobs[blob.name] = blob.file;
  }
  manifest["blobs"] = blobs;
  json history = json::array();
  for (const auto& h : ck.history) history.push_back(history_to_json(h));
  manifest["history"] = history;
  atomic_write_text(dir / "manifest.json", manifest.dump(1));
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail("io_error", "no checkpoint manifest in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    fail("corrupt_manifest", std::string("checkpoint manifest: ") + e.what());
  }
  try {
    if (manifest.value("format", "") != "shapeforge-checkpoint") fail("schema_mismatch", "not a shapeforge checkpoint");
    const int version = manifest.at("schema_version");
    if (version != kCheckpointSchemaVersion) {
      fail("schema_mismatch", "checkpoint schema version " + std::to_string(version) + ", expected " +
                                  std::to_string(kCheckpointSchemaVersion));
    }
    const auto model_config = model_config_from_json(manifest.at("model_config"));
    Checkpoint ck;
    ck.config = train_config_from_json(manifest.at("train_config"), model_config);
    ck.model = MMVAD(model_config);
    ck.codebook = CodeBook(manifest.at("instances").get<int64_t>(), model_config.dims);
    ck.iteration = manifest.at("iteration");
    for (const auto& h : manifest.at("history")) ck.history.push_back(history_from_json(h));
    const auto& blobs = manifest.at("blobs");
    for (const auto& blob : kBlobs) {
      load_module_state(blob_module(ck, blob.name), read_tensor_blob(dir / blobs.at(blob.name).get<std::string>()),
                        blob.name);
    }
    ck.model->eval();
    return ck;
  } catch (const json::exception& e) {
    fail("corrupt_manifest", std::string("checkpoint manifest: ") + e.what());
  }
}

}  // namespace shapeforge
