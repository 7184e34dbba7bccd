#include "support/doctest_torch.hpp"

#include <filesystem>
#include <thread>

#include "json.hpp"

#include "shapeforge/image.hpp"
#include "shapeforge/mesh.hpp"
#include "shapeforge/service.hpp"
#include "support/oracles.hpp"

using namespace shapeforge;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

MMVAD tiny_model() {
  torch::manual_seed(6);
  MMVAD model(oracle::tiny_config());
  model->eval();
  return model;
}

std::unique_ptr<Service> make_service(ServiceOptions options = {}) {
  options.mesh_resolution = 16;
  auto service = std::make_unique<Service>(options);
  auto model = tiny_model();
  service->set_model(model, torch::randn({3, model->config().dims.total()}) * 0.1);
  return service;
}

std::string png64(const Image& image) { return base64_encode(encode_png(image)); }

Image solid(int r, int channels, float value) {
  Image img(r, r, channels);
  std::fill(img.data.begin(), img.data.end(), value);
  return img;
}

json post(Service& s, const std::string& path, const json& body, int expected) {
  auto out = s.handle("POST", path, body.dump());
  INFO(out.body);
  CHECK(out.status == expected);
  return json::parse(out.body);
}

std::string session(Service& s, uint64_t seed) {
  return post(s, "/sessions", {{"source", "sample"}, {"seed", seed}}, 201).at("session_id");
}

Image decode_preview(const json& previews, size_t view, const char* kind) {
  auto bytes = base64_decode(previews.at(view).at(kind).get<std::string>());
  return decode_png(bytes);
}

double mean_abs(const Image& a, const Image& b) {
  double sum = 0;
  for (size_t i = 0; i < a.data.size(); ++i) sum += std::abs(a.data[i] - b.data[i]);
  return sum / a.data.size();
}

}  // namespace

TEST_CASE("base64 round trip") {
  CHECK(base64_encode({'f', 'o', 'o', 'b'}) == "Zm9vYg==");
  oracle::Rng rng(2);
  for (int n = 0; n < 40; ++n) {
    std::vector<uint8_t> bytes(n);
    for (auto& b : bytes) b = static_cast<uint8_t>(rng.integer(0, 255));
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
  }
  CHECK((base64_decode("data:image/png;base64,Zm9v") == std::vector<uint8_t>{'f', 'o', 'o'}));
}

TEST_CASE("service without a model") {
  Service s;
  auto health = s.handle("GET", "/healthz", "");
  CHECK(health.status == 200);
  CHECK(json::parse(health.body)["model_loaded"] == false);
  auto created = s.handle("POST", "/sessions", R"({"source":"sample"})");
  CHECK(created.status == 503);
  CHECK(json::parse(created.body)["error"] == "model_not_loaded");
}

TEST_CASE("sessions, previews and errors") {
  auto s = make_service();
  auto a = post(*s, "/sessions", {{"source", "sample"}, {"seed", 4}}, 201);
  auto b = post(*s, "/sessions", {{"source", "sample"}, {"seed", 4}}, 201);
  CHECK(a["session_id"] != b["session_id"]);
  CHECK(a["previews"] == b["previews"]);
  CHECK(a["previews"].size() == 8);
  CHECK(s->session_count() == 2);

  auto inst = post(*s, "/sessions", {{"source", "instance"}, {"instance", 1}}, 201);
  CHECK(post(*s, "/sessions", {{"source", "instance"}, {"instance", 9}}, 404)["error"] == "unknown_instance");
  auto bad_mod = post(*s, "/sessions", {{"source", "reconstruct"}, {"modality", "voxels"}, {"image", png64(solid(16, 1, 0))}}, 400);
  CHECK(bad_mod["error"] == "unknown_modality");
  CHECK(post(*s, "/sessions", {{"source", "reconstruct"}, {"modality", "sketch"}, {"image", "!!"}}, 400)["error"] ==
        "bad_image");
  CHECK(s->handle("POST", "/sessions", "{not json").status == 400);

  const std::string id = a["session_id"];
  auto missing = s->handle("GET", "/sessions/nope", "");
  CHECK(missing.status == 404);
  CHECK(json::parse(missing.body)["error"] == "not_found");
  CHECK(s->handle("GET", "/sessions/" + id, "").status == 200);

  auto r1 = s->handle("GET", "/sessions/" + id + "/render", "", {{"view", "2"}});
  auto r2 = s->handle("GET", "/sessions/" + id + "/render", "", {{"view", "2"}});
  CHECK(r1.status == 200);
  CHECK(r1.content_type == "image/png");
  CHECK(r1.body == r2.body);
  CHECK(s->handle("GET", "/sessions/" + id + "/render", "", {{"view", "30,40"}}).status == 200);
  CHECK(s->handle("GET", "/sessions/" + id + "/render", "", {{"view", "0,89"}}).status == 400);
  CHECK(s->handle("GET", "/sessions/" + id + "/render", "", {{"view", "12"}}).status == 400);

  auto mesh = s->handle("GET", "/sessions/" + id + "/mesh", "");
  CHECK(mesh.status == 200);
  CHECK_NOTHROW(parse_obj(mesh.body));

  json edit = {{"modality", "render"}, {"view", 0}, {"target", png64(solid(16, 3, 0.5f))}, {"mask", png64(solid(16, 1, 0))}};
  CHECK(post(*s, "/sessions/" + id + "/edits", edit, 422)["error"] == "empty_mask");
  CHECK(post(*s, "/sessions/nope/edits", edit, 404)["error"] == "not_found");
  CHECK(post(*s, "/sessions/" + id + "/transfer", {{"reference_session", "nope"}, {"which", "color"}}, 404)["error"] ==
        "not_found");
  (void)inst;
}

TEST_CASE("edits, transfer and replay") {
  auto s = make_service();
  const std::string id = session(*s, 1);
  const std::string ref = session(*s, 2);
  auto before = json::parse(s->handle("GET", "/sessions/" + id, "").body);
  auto start = post(*s, "/sessions", {{"source", "sample"}, {"seed", 1}}, 201);

  SUBCASE("identity edit") {
    const auto& p = start["previews"];
    json edit = {{"modality", "render"},
                 {"view", 0},
                 {"target", p[0]["render"]},
                 {"mask", png64(solid(16, 1, 1))},
                 {"subspace", "full"}};
    auto out = post(*s, "/sessions/" + id + "/edits", edit, 200);
    for (size_t v = 0; v < 8; ++v) {
      CHECK(mean_abs(decode_preview(out["previews"], v, "render"), decode_preview(p, v, "render")) <= 1e-3);
    }
  }
  SUBCASE("color scribble keeps the sketch") {
    Image mask = solid(16, 1, 0);
    for (int y = 4; y < 10; ++y) {
      for (int x = 4; x < 10; ++x) mask.at(y, x, 0) = 1;
    }
    json edit = {{"modality", "render"}, {"view", 1}, {"target", png64(solid(16, 3, 0.9f))}, {"mask", png64(mask)},
                 {"steps", 5}};
    auto out = post(*s, "/sessions/" + id + "/edits", edit, 200);
    CHECK(out["losses"]["subspace"] == "color-only");
    for (size_t v = 0; v < 8; ++v) CHECK(out["previews"][v]["sketch"] == start["previews"][v]["sketch"]);
    CHECK(out["code"]["shape"] == before["code"]["shape"]);
    CHECK(out["code"]["color"] != before["code"]["color"]);

    json sketch_edit = {{"modality", "sketch"}, {"view", 3}, {"target", png64(solid(16, 1, 0))}, {"mask", png64(mask)}};
    auto out2 = post(*s, "/sessions/" + id + "/edits", sketch_edit, 200);
    CHECK(out2["code"]["color"] == out["code"]["color"]);
    CHECK(out2["history_length"] == 2);

    auto replayed = post(*s, "/sessions/" + id + "/replay", json::object(), 200);
    CHECK(replayed["matches_current"] == true);
    CHECK(replayed["previews"] == out2["previews"]);
  }
  SUBCASE("transfer") {
    auto mesh_before = s->handle("GET", "/sessions/" + id + "/mesh", "").body;
    auto colored = post(*s, "/sessions/" + id + "/transfer", {{"reference_session", ref}, {"which", "color"}}, 200);
    CHECK(s->handle("GET", "/sessions/" + id + "/mesh", "").body == mesh_before);
    auto shaped = post(*s, "/sessions/" + id + "/transfer", {{"reference_session", ref}, {"which", "shape"}}, 200);
    auto ref_state = json::parse(s->handle("GET", "/sessions/" + ref, "").body);
    CHECK(shaped["code"] == ref_state["code"]);
    auto ref_previews = post(*s, "/sessions", {{"source", "sample"}, {"seed", 2}}, 201)["previews"];
    CHECK(shaped["previews"] == ref_previews);
    CHECK(post(*s, "/sessions/" + id + "/replay", json::object(), 200)["matches_current"] == true);
    (void)colored;
  }
}

TEST_CASE("sessions are isolated under concurrent edits") {
  auto s = make_service();
  Image mask = solid(16, 1, 0);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 16; ++x) mask.at(y, x, 0) = 1;
  }
  auto edit_for = [&](int k) {
    return json{{"modality", "render"}, {"view", k % 8}, {"target", png64(solid(16, 3, 0.1f * k))}, {"mask", png64(mask)}};
  };
  // Sequential reference.
  std::vector<std::string> ids, seq_codes;
  for (int k = 0; k < 3; ++k) {
    const auto id = session(*s, 100 + k);
    post(*s, "/sessions/" + id + "/edits", edit_for(k), 200);
    post(*s, "/sessions/" + id + "/edits", edit_for(k + 3), 200);
    seq_codes.push_back(json::parse(s->handle("GET", "/sessions/" + id, "").body)["code"].dump());
  }
  for (int k = 0; k < 3; ++k) ids.push_back(session(*s, 100 + k));
  std::vector<std::thread> threads;
  for (int k = 0; k < 3; ++k) {
    threads.emplace_back([&, k] {
      s->handle("POST", "/sessions/" + ids[k] + "/edits", edit_for(k).dump());
      s->handle("POST", "/sessions/" + ids[k] + "/edits", edit_for(k + 3).dump());
    });
  }
  for (auto& t : threads) t.join();
  for (int k = 0; k < 3; ++k) {
    CHECK(json::parse(s->handle("GET", "/sessions/" + ids[k], "").body)["code"].dump() == seq_codes[k]);
  }
}

TEST_CASE("sessions persist to a directory") {
  const fs::path dir = fs::temp_directory_path() / "shapeforge_sessions_test";
  fs::remove_all(dir);
  ServiceOptions options;
  options.persist_dir = dir;
  std::string id;
  json state;
  {
    auto s = make_service(options);
    id = session(*s, 8);
    post(*s, "/sessions/" + id + "/transfer", {{"reference_session", id}, {"which", "color"}}, 200);
    state = json::parse(s->handle("GET", "/sessions/" + id, "").body);
  }
  auto restored = make_service(options);
  CHECK(restored->session_count() == 1);
  CHECK(json::parse(restored->handle("GET", "/sessions/" + id, "").body) == state);
  fs::remove_all(dir);
}
