#include "shapeforge/service.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <regex>
#include <shared_mutex>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "shapeforge/archive.hpp"
#include "shapeforge/error.hpp"
#include "shapeforge/image.hpp"
#include "shapeforge/mesh.hpp"
#include "shapeforge/trainer.hpp"

namespace shapeforge {

using json = nlohmann::json;

std::string base64_encode(const std::vector<uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(n);
  return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  }
  // Accept data URLs as sent by browsers.
  if (auto comma = clean.find(','); clean.rfind("data:", 0) == 0 && comma != std::string::npos) clean.erase(0, comma + 1);
  require(clean.size() % 4 == 0, "bad_image", "base64 payload length is not a multiple of 4");
  std::vector<uint8_t> out(3 * clean.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
  require(n >= 0, "bad_image", "payload is not valid base64");
  size_t padding = 0;
  if (!clean.empty() && clean.back() == '=') ++padding;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++padding;
  out.resize(static_cast<size_t>(n) - padding);
  return out;
}

namespace {

struct HttpError : Error {
  HttpError(int status, const std::string& code, const std::string& message) : Error(code, message), status(status) {}
  int status;
};

[[noreturn]] void not_found(const std::string& what) { throw HttpError(404, "not_found", what); }

int status_for(const std::string& code) {
  if (code == "not_found" || code == "unknown_instance") return 404;
  if (code == "empty_mask") return 422;
  if (code == "model_not_loaded") return 503;
  if (code == "non_finite_loss") return 500;
  return 400;
}

HttpResult json_result(const json& body, int status = 200) { return {status, body.dump(), "application/json"}; }

HttpResult error_result(int status, const std::string& code, const std::string& message) {
  return json_result({{"error", code}, {"message", message}}, status);
}

json code_to_json(const JointLatentCode& code) {
  auto vec = [](const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat32).contiguous();
    return std::vector<float>(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
  };
  return {{"shape", vec(code.shape)}, {"color", vec(code.color)}};
}

JointLatentCode code_from_json(const json& j, const LatentDims& dims) {
  auto tensor = [](const json& arr, int64_t n) {
    auto values = arr.get<std::vector<float>>();
    require(static_cast<int64_t>(values.size()) == n, "dim_mismatch", "stored code has the wrong dimension");
    return torch::tensor(values, torch::kFloat32);
  };
  return {tensor(j.at("shape"), dims.shape), tensor(j.at("color"), dims.color)};
}

const json& field(const json& body, const char* name) {
  if (!body.contains(name)) fail("missing_field", std::string("request is missing '") + name + "'");
  return body.at(name);
}

Viewpoint parse_view(const json& v, int ring_size) {
  Viewpoint view;
  if (v.is_number_integer()) {
    const int index = v.get<int>();
    require(index >= 0 && index < ring_size, "bad_view", "view index out of range");
    return view_ring(ring_size)[index];
  }
  if (v.is_object()) {
    view.azimuth = deg_to_rad(v.value("azimuth_deg", 0.0));
    view.elevation = deg_to_rad(v.value("elevation_deg", 20.0));
  } else {
    fail("bad_view", "view must be a ring index or {azimuth_deg, elevation_deg}");
  }
  require(std::isfinite(view.azimuth) && view.legal(), "bad_view", "view elevation outside the legal range");
  return view;
}

// "3" or "azimuth_deg,elevation_deg".
Viewpoint parse_view_query(const std::string& text, int ring_size) {
  try {
    if (auto comma = text.find(','); comma != std::string::npos) {
      return parse_view(json{{"azimuth_deg", std::stod(text.substr(0, comma))},
                             {"elevation_deg", std::stod(text.substr(comma + 1))}},
                        ring_size);
    }
    size_t used = 0;
    const int index = std::stoi(text, &used);
    require(used == text.size(), "bad_view", "malformed view '" + text + "'");
    return parse_view(json(index), ring_size);
  } catch (const std::logic_error&) {
    fail("bad_view", "malformed view '" + text + "'");
  }
}

torch::Tensor image_field(const json& body, const char* name, int channels, int64_t resolution) {
  const auto& value = field(body, name);
  require(value.is_string(), "bad_image", std::string(name) + " must be a base64 PNG string");
  Image image;
  try {
    image = decode_png(base64_decode(value.get<std::string>()));
  } catch (const Error& e) {
    throw Error("bad_image", std::string(name) + ": " + e.what());
  }
  require(image.height == resolution && image.width == resolution, "dim_mismatch",
          std::string(name) + " must be " + std::to_string(resolution) + "x" + std::to_string(resolution));
  if (channels == 0) return image_to_tensor(mask_from_image(image)).select(0, 0);
  return image_to_tensor(convert_channels(image, channels));
}

Modality parse_2d_modality(const json& body) {
  const auto m = parse_modality(body.value("modality", std::string("sketch")));
  require(m != Modality::Shape3D, "unknown_modality", "expected modality sketch or render");
  return m;
}

std::string png_base64(const Image& image) { return base64_encode(encode_png(image)); }

std::string new_session_id() {
  static std::mutex mutex;
  static std::mt19937_64 rng(std::random_device{}());
  std::lock_guard lock(mutex);
  std::ostringstream out;
  out << std::hex << rng();
  return out.str();
}

}  // namespace

struct Service::Session {
  std::string id;
  json origin;
  JointLatentCode initial;
  JointLatentCode current;
  json history = json::array();  // {kind, request, code}
  std::mutex mutex;
};

struct Service::Impl {
  ServiceOptions options;
  // Forward passes only; the holder is mutable because module calls are non-const.
  mutable MMVAD model{nullptr};
  torch::Tensor instance_codes;  // [N, D] posterior means, may be undefined
  mutable std::shared_mutex sessions_mutex;
  std::map<std::string, std::shared_ptr<Session>> sessions;

  const LatentDims& dims() const { return model->config().dims; }
  int64_t resolution() const { return model->config().resolution; }

  void require_model() const {
    if (!model) throw HttpError(503, "model_not_loaded", "no model loaded; set SHAPEFORGE_CHECKPOINT");
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex);
    auto it = sessions.find(id);
    if (it == sessions.end()) not_found("no session '" + id + "'");
    return it->second;
  }

  json previews(const JointLatentCode& code) const {
    torch::NoGradGuard no_grad;
    json out = json::array();
    const auto views = view_ring(options.preview_views);
    for (size_t i = 0; i < views.size(); ++i) {
      auto sketch = sketch_to_binary(model->generate_sketch(code.shape, views[i]));
      auto render = tensor_to_image(model->generate_render(code, views[i]));
      out.push_back({{"view", i},
                     {"azimuth_deg", views[i].azimuth * 180.0 / std::numbers::pi},
                     {"elevation_deg", views[i].elevation * 180.0 / std::numbers::pi},
                     {"sketch", png_base64(sketch)},
                     {"render", png_base64(render)}});
    }
    return out;
  }

  // Deterministic given the request and the starting code; used both live and on replay.
  std::pair<JointLatentCode, json> apply_edit(const JointLatentCode& from, const json& request) const {
    const auto modality = parse_2d_modality(request);
    EditSpec spec;
    spec.modality = modality;
    spec.view = parse_view(field(request, "view"), options.preview_views);
    spec.target = image_field(request, "target", modality == Modality::Sketch ? 1 : 3, resolution());
    spec.mask = image_field(request, "mask", 0, resolution());
    spec.weight = request.value("weight", 1.0);
    OptimizeConfig config = OptimizeConfig::edit();
    config.steps = request.value("steps", options.edit_steps);
    config.lr = request.value("lr", config.lr);
    config.subspace = request.contains("subspace")
                          ? parse_subspace(request.at("subspace").get<std::string>())
                          : (modality == Modality::Render ? Subspace::ColorOnly : Subspace::ShapeOnly);
    if (request.contains("anchor_weight")) config.anchor_weight = request.at("anchor_weight").get<double>();
    auto result = optimize_latent(model, from, std::span<const EditSpec>(&spec, 1), config);
    json losses = {{"edit", result.edit_loss}, {"reg", result.reg}, {"total", result.total},
                   {"history", result.loss_history}, {"subspace", subspace_name(config.subspace)}};
    return {result.code, losses};
  }

  JointLatentCode apply_transfer(const JointLatentCode& from, const json& entry) const {
    const auto which = parse_transfer(entry.at("request").at("which").get<std::string>());
    return transfer_codes(from, code_from_json(entry.at("reference_code"), dims()), which);
  }

  JointLatentCode replay(const Session& s) const {
    JointLatentCode code = s.initial.clone();
    for (const auto& entry : s.history) {
      if (entry.at("kind") == "edit") {
        code = apply_edit(code, entry.at("request")).first;
      } else {
        code = apply_transfer(code, entry);
      }
    }
    return code;
  }

  JointLatentCode create_code(const json& body) const {
    const auto source = body.value("source", std::string("sample"));
    if (source == "sample") return sample_prior(dims(), body.value("seed", uint64_t{0}));
    if (source == "instance") {
      require(instance_codes.defined(), "unknown_instance", "model has no training codes");
      const auto id = body.value("instance", int64_t{-1});
      require(id >= 0 && id < instance_codes.size(0), "unknown_instance", "instance id out of range");
      return JointLatentCode::split(instance_codes[id].clone(), dims().shape);
    }
    if (source == "code") return code_from_json(field(body, "code"), dims());
    if (source != "reconstruct") fail("unknown_source", "source must be sample, instance, code or reconstruct");
    const auto modality = parse_2d_modality(body);
    const auto view = parse_view(body.value("view", json(0)), options.preview_views);
    auto target = image_field(body, "image", modality == Modality::Sketch ? 1 : 3, resolution());
    auto mask = body.contains("mask") ? image_field(body, "mask", 0, resolution()) : torch::ones({resolution(), resolution()});
    OptimizeConfig config;
    config.steps = body.value("steps", options.reconstruct_steps);
    config.trials = body.value("trials", options.reconstruct_trials);
    config.seed = body.value("seed", uint64_t{0});
    auto trials = reconstruct_partial(model, target, mask, modality, view, config, config.trials);
    return trials[select_best(trials)].code;
  }

  void persist(const Session& s) const {
    if (options.persist_dir.empty()) return;
    std::filesystem::create_directories(options.persist_dir);
    json doc = {{"session_id", s.id},
                {"origin", s.origin},
                {"history", s.history}};
    write_tensor_blob(options.persist_dir / (s.id + "_code.bin"),
                      {{"initial", s.initial.full()}, {"current", s.current.full()}});
    atomic_write_text(options.persist_dir / (s.id + ".json"), doc.dump());
  }

  void restore() {
    if (options.persist_dir.empty() || !std::filesystem::exists(options.persist_dir)) return;
    for (const auto& entry : std::filesystem::directory_iterator(options.persist_dir)) {
      if (entry.path().extension() != ".json") continue;
      std::ifstream in(entry.path());
      auto doc = json::parse(in, nullptr, false);
      if (doc.is_discarded()) continue;
      auto s = std::make_shared<Session>();
      s->id = doc.at("session_id");
      s->origin = doc.at("origin");
      s->history = doc.at("history");
      auto blob = read_tensor_blob(options.persist_dir / (s->id + "_code.bin"));
      for (const auto& [name, t] : blob) {
        auto code = JointLatentCode::split(t, dims().shape);
        (name == "initial" ? s->initial : s->current) = code;
      }
      sessions[s->id] = s;
    }
  }

  json describe(const Session& s) const {
    json history = json::array();
    for (const auto& entry : s.history) {
      json item = {{"kind", entry.at("kind")}, {"code", entry.at("code")}};
      const auto& request = entry.at("request");
      for (const char* key : {"modality", "view", "subspace", "steps", "which", "reference_session"}) {
        if (request.contains(key)) item[key] = request.at(key);
      }
      history.push_back(item);
    }
    return {{"session_id", s.id}, {"origin", s.origin}, {"initial_code", code_to_json(s.initial)},
            {"code", code_to_json(s.current)}, {"history", history}};
  }

  HttpResult route(const std::string& method, const std::string& path, const std::string& body_text,
                   const std::map<std::string, std::string>& query) {
    static const std::regex session_path(R"(^/sessions/([A-Za-z0-9_-]+)(/[a-z]+)?/?$)");
    if (method == "GET" && path == "/healthz") {
      json out = {{"status", "ok"}, {"model_loaded", static_cast<bool>(model)}};
      std::shared_lock lock(sessions_mutex);
      out["sessions"] = sessions.size();
      return json_result(out);
    }
    json body = json::object();
    if (method == "POST" && !body_text.empty()) {
      body = json::parse(body_text, nullptr, false);
      if (body.is_discarded() || !body.is_object()) fail("bad_json", "request body is not a JSON object");
    }
    if (path == "/sessions" || path == "/sessions/") {
      if (method != "POST") throw HttpError(405, "method_not_allowed", "use POST /sessions");
      require_model();
      auto s = std::make_shared<Session>();
      s->id = new_session_id();
      s->initial = create_code(body);
      s->current = s->initial.clone();
      s->origin = body;
      for (const char* heavy : {"image", "mask"}) s->origin.erase(heavy);
      auto out = json{{"session_id", s->id}, {"previews", previews(s->current)}, {"code", code_to_json(s->current)}};
      {
        std::unique_lock lock(sessions_mutex);
        sessions[s->id] = s;
      }
      persist(*s);
      return json_result(out, 201);
    }
    std::smatch match;
    if (!std::regex_match(path, match, session_path)) not_found("no route for " + path);
    require_model();
    const std::string id = match[1];
    const std::string action = match[2].matched ? match[2].str().substr(1) : "";
    auto s = find(id);

    if (method == "GET" && action.empty()) {
      std::lock_guard lock(s->mutex);
      return json_result(describe(*s));
    }
    if (method == "GET" && action == "render") {
      auto it = query.find("view");
      const auto view = parse_view_query(it == query.end() ? "0" : it->second, options.preview_views);
      int res = static_cast<int>(resolution());
      if (auto r = query.find("resolution"); r != query.end()) {
        try {
          res = std::stoi(r->second);
        } catch (const std::logic_error&) {
          fail("invalid_config", "resolution must be an integer");
        }
        require(res >= 8 && res <= 1024, "invalid_config", "resolution must be within [8, 1024]");
      }
      JointLatentCode code;
      {
        std::lock_guard lock(s->mutex);
        code = s->current.clone();
      }
      auto png = encode_png(render_field(model, code, view, res).rgb);
      return {200, std::string(png.begin(), png.end()), "image/png"};
    }
    if (method == "GET" && action == "mesh") {
      JointLatentCode code;
      {
        std::lock_guard lock(s->mutex);
        code = s->current.clone();
      }
      NeuralField field(model->implicit, code);
      return {200, to_obj(extract_mesh(field, options.mesh_resolution)), "text/plain"};
    }
    if (method == "POST" && action == "edits") {
      std::lock_guard lock(s->mutex);
      auto [code, losses] = apply_edit(s->current, body);
      s->current = code;
      s->history.push_back({{"kind", "edit"}, {"request", body}, {"code", code_to_json(code)}});
      persist(*s);
      return json_result({{"session_id", s->id}, {"previews", previews(s->current)}, {"losses", losses},
                          {"code", code_to_json(s->current)}, {"history_length", s->history.size()}});
    }
    if (method == "POST" && action == "transfer") {
      const auto ref_id = field(body, "reference_session").get<std::string>();
      const auto which = parse_transfer(field(body, "which").get<std::string>());
      JointLatentCode reference;
      if (ref_id == id) {
        std::lock_guard lock(s->mutex);
        reference = s->current.clone();
      } else {
        auto r = find(ref_id);
        std::lock_guard lock(r->mutex);
        reference = r->current.clone();
      }
      std::lock_guard lock(s->mutex);
      s->current = transfer_codes(s->current, reference, which);
      s->history.push_back({{"kind", "transfer"},
                            {"request", body},
                            {"reference_code", code_to_json(reference)},
                            {"code", code_to_json(s->current)}});
      persist(*s);
      return json_result({{"session_id", s->id}, {"previews", previews(s->current)},
                          {"code", code_to_json(s->current)}, {"history_length", s->history.size()}});
    }
    if (method == "POST" && action == "replay") {
      std::lock_guard lock(s->mutex);
      auto code = replay(*s);
      const bool same = torch::equal(code.full(), s->current.full());
      return json_result({{"session_id", s->id}, {"previews", previews(code)}, {"code", code_to_json(code)},
                          {"matches_current", same}, {"history_length", s->history.size()}});
    }
    not_found("no route for " + method + " " + path);
  }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>()) { impl_->options = std::move(options); }

Service::~Service() = default;

void Service::load_model(const std::filesystem::path& checkpoint_dir) {
  auto ck = load_checkpoint(checkpoint_dir);
  set_model(ck.model, ck.codebook->mu.detach().clone());
}

void Service::set_model(MMVAD model, torch::Tensor instance_codes) {
  model->eval();
  impl_->model = model;
  impl_->instance_codes = instance_codes;
  impl_->restore();
}

bool Service::ready() const { return static_cast<bool>(impl_->model); }

size_t Service::session_count() const {
  std::shared_lock lock(impl_->sessions_mutex);
  return impl_->sessions.size();
}

HttpResult Service::handle(const std::string& method, const std::string& path, const std::string& body,
                           const std::map<std::string, std::string>& query) {
  try {
    return impl_->route(method, path, body, query);
  } catch (const HttpError& e) {
    return error_result(e.status, e.code(), e.what());
  } catch (const Error& e) {
    return error_result(status_for(e.code()), e.code(), e.what());
  } catch (const json::exception& e) {
    return error_result(400, "bad_json", e.what());
  } catch (const std::exception& e) {
    return error_result(500, "internal", e.what());
  }
}

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  std::thread thread;
  explicit Impl(Service& s) : service(s) {}
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& server = impl_->server;
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    auto out = impl_->service.handle(req.method, req.path, req.body, query);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  server.Get(".*", forward);
  server.Post(".*", forward);
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    require(bound > 0, "io_error", "cannot bind " + host);
    return bound;
  }
  require(impl_->server.bind_to_port(host, port), "io_error", "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::start() {
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace shapeforge
