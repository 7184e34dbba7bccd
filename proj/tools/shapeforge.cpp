#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "shapeforge/config.hpp"
#include "shapeforge/error.hpp"
#include "shapeforge/evalkit.hpp"
#include "shapeforge/fewshot.hpp"
#include "shapeforge/mesh.hpp"
#include "shapeforge/random.hpp"
#include "shapeforge/service.hpp"
#include "shapeforge/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace shapeforge;

namespace {

struct Common {
  std::string config;
  std::string checkpoint;
  std::string dataset;
  std::string out;
  uint64_t seed = 0;
  bool seed_set = false;
  bool json = false;
};

Settings load_settings(const Common& c) {
  Settings s;
  if (!c.config.empty()) apply_config(read_config(c.config), s);
  if (c.seed_set) {
    s.data.seed = c.seed;
    s.train.seed = c.seed;
    s.optimize.seed = c.seed;
    s.adapt.seed = c.seed;
    s.classifier.seed = c.seed;
  }
  return s;
}

std::string checkpoint_path(const Common& c) {
  if (!c.checkpoint.empty()) return c.checkpoint;
  if (const char* env = std::getenv("SHAPEFORGE_CHECKPOINT")) return env;
  fail("missing_checkpoint", "pass --checkpoint or set SHAPEFORGE_CHECKPOINT");
}

std::string need(const std::string& value, const char* flag) {
  if (value.empty()) fail("missing_argument", std::string("missing required ") + flag);
  return value;
}

json code_json(const JointLatentCode& code) {
  auto vec = [](const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat32).contiguous();
    return std::vector<float>(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
  };
  return {{"shape", vec(code.shape)}, {"color", vec(code.color)}};
}

JointLatentCode read_code(const std::string& path, const LatentDims& dims) {
  std::ifstream in(path);
  if (!in) fail("io_error", "cannot read code file " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) fail("bad_json", path + " is not valid JSON");
  auto shape = j.at("shape").get<std::vector<float>>();
  auto color = j.at("color").get<std::vector<float>>();
  require(static_cast<int64_t>(shape.size()) == dims.shape && static_cast<int64_t>(color.size()) == dims.color,
          "dim_mismatch", "code file does not match the model dimensions");
  return {torch::tensor(shape), torch::tensor(color)};
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(2) << "\n";
}

Viewpoint view_arg(int index, double azimuth_deg, double elevation_deg, int ring) {
  if (index >= 0) {
    require(index < ring, "bad_view", "view index out of range");
    return view_ring(ring)[index];
  }
  Viewpoint v{deg_to_rad(azimuth_deg), deg_to_rad(elevation_deg)};
  require(v.legal(), "bad_view", "view elevation outside the legal range");
  return v;
}

torch::Tensor load_image(const std::string& path, Modality modality) {
  auto image = read_png(path);
  return image_to_tensor(convert_channels(image, modality == Modality::Sketch ? 1 : 3));
}

torch::Tensor load_mask(const std::string& path, int64_t resolution) {
  if (path.empty()) return torch::ones({resolution, resolution});
  return image_to_tensor(mask_from_image(read_png(path))).select(0, 0);
}

void emit(const Common& c, const json& result, const std::string& human) {
  if (c.json) {
    std::cout << result.dump() << std::endl;
  } else {
    std::cerr << human << std::endl;
  }
}

HttpServer* running_server = nullptr;

void on_signal(int) {
  if (running_server) running_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shapeforge: multi-modal latent shape modelling"};
  app.require_subcommand(1);
  Common c;
  auto common = [&c](CLI::App* sub, bool checkpoint, bool dataset) {
    sub->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
    if (checkpoint) sub->add_option("--checkpoint", c.checkpoint, "checkpoint directory (or SHAPEFORGE_CHECKPOINT)");
    if (dataset) sub->add_option("--dataset", c.dataset, "dataset directory");
    sub->add_option("--out", c.out, "output path");
    sub->add_option_function<uint64_t>("--seed", [&c](uint64_t s) { c.seed = s; c.seed_set = true; }, "random seed");
    sub->add_flag("--json", c.json, "print a JSON result on stdout");
  };

  int instances = -1;
  auto* make_data = app.add_subcommand("make-data", "generate the procedural corpus");
  common(make_data, false, false);
  make_data->add_option("--instances", instances, "instances per category");

  int64_t steps = -1;
  auto* train_cmd = app.add_subcommand("train", "fit decoders and codes to a dataset");
  common(train_cmd, false, true);
  train_cmd->add_option("--steps", steps, "optimisation steps");

  int count = 1;
  int view_index = 0;
  double azimuth = 0.0, elevation = 20.0;
  auto* sample = app.add_subcommand("sample", "decode prior samples");
  common(sample, true, false);
  sample->add_option("--count", count, "number of samples");

  std::string image, modality_name_arg = "sketch", occlusion = "full", mask;
  int64_t instance = -1;
  int trials = -1;
  int opt_steps = -1;
  auto* reconstruct = app.add_subcommand("reconstruct", "single-view reconstruction");
  common(reconstruct, true, true);
  reconstruct->add_option("--image", image, "target PNG (or use --dataset with --instance)");
  reconstruct->add_option("--instance", instance, "dataset instance to reconstruct");
  reconstruct->add_option("--modality", modality_name_arg, "sketch or render");
  reconstruct->add_option("--view", view_index, "ring view index");
  reconstruct->add_option("--trials", trials, "independent trials");
  reconstruct->add_option("--steps", opt_steps, "optimisation steps per trial");
  reconstruct->add_option("--occlusion", occlusion, "full, half-horizontal, three-quarter-vertical, half-vertical, quarter-vertical");

  std::string code_path, target, subspace;
  auto* edit = app.add_subcommand("edit", "latent edit from a target image and mask");
  common(edit, true, false);
  edit->add_option("--code", code_path, "starting code JSON")->required();
  edit->add_option("--target", target, "target PNG")->required();
  edit->add_option("--mask", mask, "mask PNG (nonzero alpha or gray = constrained)");
  edit->add_option("--modality", modality_name_arg, "sketch or render");
  edit->add_option("--view", view_index, "ring view index (-1: use --azimuth/--elevation)");
  edit->add_option("--azimuth", azimuth, "degrees");
  edit->add_option("--elevation", elevation, "degrees");
  edit->add_option("--subspace", subspace, "full, shape-only or color-only");
  edit->add_option("--steps", opt_steps, "optimisation steps");

  std::string reference_path, which = "color";
  auto* transfer = app.add_subcommand("transfer", "swap shape or color codes");
  common(transfer, false, false);
  transfer->add_option("--source", code_path, "source code JSON")->required();
  transfer->add_option("--reference", reference_path, "reference code JSON")->required();
  transfer->add_option("--which", which, "shape or color");

  std::string family = "red";
  int examples = 10;
  auto* adapt_cmd = app.add_subcommand("adapt", "few-shot adaptation of the latent prior");
  common(adapt_cmd, true, true);
  adapt_cmd->add_option("--color-family", family, "target colour family in the dataset");
  adapt_cmd->add_option("--examples", examples, "number of target renders");
  adapt_cmd->add_option("--steps", opt_steps, "mapping updates");

  std::vector<std::string> files;
  std::string metric = "chamfer";
  int shapes = 10;
  auto* eval = app.add_subcommand("eval", "metrics and evaluation tables");
  common(eval, true, true);
  eval->add_option("metric", metric, "chamfer | psnr | occlusion");
  eval->add_option("files", files, "two OBJ (chamfer) or PNG (psnr) files");
  eval->add_option("--shapes", shapes, "instances in the occlusion table");
  eval->add_option("--trials", trials, "trials per reconstruction");
  eval->add_option("--steps", opt_steps, "optimisation steps per trial");

  int mesh_res = -1;
  auto* export_mesh = app.add_subcommand("export-mesh", "extract an OBJ from a code");
  common(export_mesh, true, false);
  export_mesh->add_option("--code", code_path, "code JSON");
  export_mesh->add_option("--instance", instance, "training instance id");
  export_mesh->add_option("--resolution", mesh_res, "grid cells per axis");

  int port = 8080;
  std::string host = "127.0.0.1", persist;
  auto* serve = app.add_subcommand("serve", "run the HTTP session service");
  common(serve, true, false);
  serve->add_option("--port", port, "listen port");
  serve->add_option("--host", host, "listen address");
  serve->add_option("--persist", persist, "session persistence directory");

  CLI11_PARSE(app, argc, argv);

  try {
    Settings s = load_settings(c);
    if (trials > 0) s.optimize.trials = trials;
    if (opt_steps > 0) s.optimize.steps = opt_steps;
    if (mesh_res > 0) s.mesh_resolution = mesh_res;
    if (s.train.deterministic) torch::set_num_threads(1);

    if (*make_data) {
      if (instances >= 0) s.data.instances_per_category = instances;
      const auto out = need(c.out, "--out");
      auto dataset = make_dataset(s.data);
      write_dataset(dataset, out);
      emit(c, {{"dataset", out}, {"instances", dataset.records.size()}, {"seed", s.data.seed}},
           "wrote " + std::to_string(dataset.records.size()) + " instances to " + out);
    } else if (*train_cmd) {
      if (steps >= 0) s.train.steps = steps;
      const auto out = need(c.out, "--out");
      auto dataset = read_dataset(need(c.dataset, "--dataset"));
      s.train.model.resolution = dataset.config.resolution;
      fs::create_directories(out);
      std::ofstream log(fs::path(out) / "train_log.jsonl");
      TrainHooks hooks;
      hooks.jsonl = &log;
      hooks.on_log = [](const HistoryEntry& h) {
        std::cerr << "step " << h.step << " total " << h.total << " (c " << h.l_c << ", s " << h.l_s << ", r " << h.l_r
                  << ", kl " << h.kl << ")\n";
      };
      if (s.train.checkpoint_every > 0) hooks.checkpoint_dir = out;
      auto ck = train(dataset, s.train, hooks);
      save_checkpoint(ck, out);
      json result = {{"checkpoint", out}, {"iteration", ck.iteration}};
      if (!ck.history.empty()) result["final_total"] = ck.history.back().total;
      emit(c, result, "checkpoint written to " + out);
    } else if (*sample) {
      auto ck = load_checkpoint(checkpoint_path(c));
      json codes = json::array();
      for (int i = 0; i < count; ++i) {
        auto code = sample_prior(ck.config.model.dims, mix_seed(s.optimize.seed, i));
        codes.push_back(code_json(code));
        if (!c.out.empty()) {
          torch::NoGradGuard no_grad;
          const fs::path dir = c.out;
          fs::create_directories(dir);
          const auto view = view_ring()[0];
          write_json(dir / ("sample_" + std::to_string(i) + ".json"), codes.back());
          write_png(dir / ("sample_" + std::to_string(i) + "_sketch.png"),
                    sketch_to_binary(ck.model->generate_sketch(code.shape, view)));
          write_png(dir / ("sample_" + std::to_string(i) + "_render.png"),
                    tensor_to_image(ck.model->generate_render(code, view)));
        }
      }
      emit(c, {{"codes", codes}}, "decoded " + std::to_string(count) + " samples");
    } else if (*reconstruct) {
      auto ck = load_checkpoint(checkpoint_path(c));
      const auto modality = parse_modality(modality_name_arg);
      const auto kind = parse_occlusion(occlusion);
      ProtocolConfig protocol;
      protocol.optimize = s.optimize;
      protocol.mesh_resolution = s.mesh_resolution;
      json result = {{"modality", modality_name_arg}, {"occlusion", occlusion}, {"trials", s.optimize.trials}};
      JointLatentCode code;
      Mesh mesh;
      if (instance >= 0) {
        auto dataset = read_dataset(need(c.dataset, "--dataset"));
        auto ref = reference_mesh(dataset.records.at(instance), protocol.mesh_resolution);
        auto eval_result = evaluate_reconstruction(ck.model, dataset, instance, modality, view_index, kind, protocol, &ref);
        code = eval_result.code;
        mesh = eval_result.mesh;
        result["instance"] = instance;
        result["chamfer_x1e3"] = 1e3 * eval_result.chamfer;
        result["best_trial"] = eval_result.best;
        json losses = json::array();
        for (const auto& t : eval_result.trials) losses.push_back(t.loss);
        result["trial_losses"] = losses;
        if (!c.out.empty()) write_obj(fs::path(c.out) / "reference.obj", ref);
      } else {
        auto img = load_image(need(image, "--image or --instance"), modality);
        const double background = modality == Modality::Sketch ? 0.0 : 1.0;
        auto [occluded, vis] = apply_occlusion(img, kind, background);
        auto trials_out = reconstruct_partial(ck.model, occluded, vis, modality, view_ring()[view_index], s.optimize,
                                              s.optimize.trials);
        const int best = select_best(trials_out);
        code = trials_out[best].code;
        mesh = code_mesh(ck.model, code, protocol.mesh_resolution);
        result["best_trial"] = best;
        result["loss"] = trials_out[best].loss;
      }
      result["code"] = code_json(code);
      if (!c.out.empty()) {
        write_json(fs::path(c.out) / "code.json", code_json(code));
        write_obj(fs::path(c.out) / "reconstruction.obj", mesh);
      }
      std::ostringstream human;
      human << "reconstruction: best trial " << result["best_trial"];
      if (result.contains("chamfer_x1e3")) human << ", chamfer x1e3 " << result["chamfer_x1e3"];
      emit(c, result, human.str());
    } else if (*edit) {
      auto ck = load_checkpoint(checkpoint_path(c));
      const auto modality = parse_modality(modality_name_arg);
      EditSpec spec;
      spec.modality = modality;
      spec.view = view_arg(view_index, azimuth, elevation, 8);
      spec.target = load_image(target, modality);
      spec.mask = load_mask(mask, ck.config.model.resolution);
      OptimizeConfig config = OptimizeConfig::edit();
      if (opt_steps > 0) config.steps = opt_steps;
      config.seed = s.optimize.seed;
      config.subspace = !subspace.empty() ? parse_subspace(subspace)
                                          : (modality == Modality::Render ? Subspace::ColorOnly : Subspace::ShapeOnly);
      auto result = optimize_latent(ck.model, read_code(code_path, ck.config.model.dims),
                                    std::span<const EditSpec>(&spec, 1), config);
      if (!c.out.empty()) write_json(c.out, code_json(result.code));
      emit(c, {{"code", code_json(result.code)}, {"edit_loss", result.edit_loss}, {"total", result.total}},
           "edit loss " + std::to_string(result.edit_loss));
    } else if (*transfer) {
      std::ifstream probe(code_path);
      json j = json::parse(probe, nullptr, false);
      if (j.is_discarded()) fail("bad_json", code_path + " is not valid JSON");
      LatentDims dims{static_cast<int64_t>(j.at("shape").size()), static_cast<int64_t>(j.at("color").size())};
      auto result = transfer_codes(read_code(code_path, dims), read_code(reference_path, dims), parse_transfer(which));
      if (!c.out.empty()) write_json(c.out, code_json(result));
      emit(c, {{"code", code_json(result)}}, "transferred " + which);
    } else if (*adapt_cmd) {
      auto ck = load_checkpoint(checkpoint_path(c));
      auto dataset = read_dataset(need(c.dataset, "--dataset"));
      if (opt_steps > 0) s.adapt.steps = opt_steps;
      std::vector<torch::Tensor> targets;
      for (const auto& r : dataset.records) {
        if (static_cast<int>(targets.size()) >= examples) break;
        auto it = r.attributes.find("color_family");
        if (it != r.attributes.end() && it->second == family) {
          targets.push_back(image_to_tensor(r.renders[targets.size() % r.renders.size()]));
        }
      }
      auto result = adapt(ck.model, targets, Modality::Render, dataset.views, s.adapt);
      const auto out = need(c.out, "--out");
      save_adaptation(result, out);
      emit(c, {{"mapping", out}, {"examples", targets.size()}, {"base_hash", result.base_hash}},
           "adapted on " + std::to_string(targets.size()) + " examples");
    } else if (*eval) {
      if (metric == "chamfer") {
        require(files.size() == 2, "missing_argument", "eval chamfer needs two OBJ files");
        auto read = [](const std::string& p) {
          std::ifstream in(p);
          if (!in) fail("io_error", "cannot read " + p);
          std::stringstream b;
          b << in.rdbuf();
          return parse_obj(b.str());
        };
        const double value = mesh_chamfer(read(files[0]), read(files[1]));
        emit(c, {{"chamfer_x1e3", 1e3 * value}}, "chamfer x1e3 " + std::to_string(1e3 * value));
      } else if (metric == "psnr") {
        require(files.size() == 2, "missing_argument", "eval psnr needs two PNG files");
        const double value = psnr(image_to_tensor(read_png(files[0])), image_to_tensor(read_png(files[1])));
        emit(c, {{"psnr", value}}, "psnr " + std::to_string(value) + " dB");
      } else if (metric == "occlusion") {
        auto ck = load_checkpoint(checkpoint_path(c));
        auto dataset = read_dataset(need(c.dataset, "--dataset"));
        ProtocolConfig protocol;
        protocol.optimize = s.optimize;
        protocol.mesh_resolution = s.mesh_resolution;
        std::vector<int64_t> ids;
        for (int64_t i = 0; i < std::min<int64_t>(shapes, dataset.records.size()); ++i) ids.push_back(i);
        auto rows = occlusion_report(ck.model, dataset, ids, all_occlusions(), {Modality::Sketch, Modality::Render},
                                     0, protocol);
        const auto report = report_json(rows);
        if (!c.out.empty()) std::ofstream(c.out) << report << "\n";
        std::ostringstream table;
        for (const auto& r : rows) table << r.occlusion << "\t" << r.modality << "\t" << r.chamfer_x1e3 << "\n";
        emit(c, json::parse(report), table.str());
      } else {
        fail("unknown_metric", "metric must be chamfer, psnr or occlusion");
      }
    } else if (*export_mesh) {
      auto ck = load_checkpoint(checkpoint_path(c));
      JointLatentCode code;
      if (!code_path.empty()) {
        code = read_code(code_path, ck.config.model.dims);
      } else {
        require(instance >= 0, "missing_argument", "pass --code or --instance");
        code = ck.code(instance);
      }
      auto mesh = code_mesh(ck.model, code, s.mesh_resolution);
      const auto out = need(c.out, "--out");
      write_obj(out, mesh);
      emit(c, {{"mesh", out}, {"vertices", mesh.vertices.size()}, {"triangles", mesh.triangles.size()}},
           "wrote " + std::to_string(mesh.triangles.size()) + " triangles to " + out);
    } else if (*serve) {
      ServiceOptions options;
      options.mesh_resolution = s.mesh_resolution;
      options.persist_dir = persist;
      Service service(options);
      service.load_model(checkpoint_path(c));
      HttpServer server(service);
      const int bound = server.bind(host, port);
      running_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on http://" << host << ":" << bound << std::endl;
      server.listen();
    }
  } catch (const Error& e) {
    if (c.json) std::cout << json{{"error", e.code()}, {"message", e.what()}}.dump() << std::endl;
    std::cerr << "error: " << e.code() << ": " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    if (c.json) std::cout << json{{"error", "internal"}, {"message", e.what()}}.dump() << std::endl;
    std::cerr << "error: internal: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
