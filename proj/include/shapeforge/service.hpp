#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "shapeforge/editor.hpp"
#include "shapeforge/latentspace.hpp"
#include "shapeforge/model.hpp"

namespace shapeforge {

std::string base64_encode(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> base64_decode(const std::string& text);

struct ServiceOptions {
  int mesh_resolution = 64;
  int edit_steps = 5;
  int reconstruct_steps = 300;
  int reconstruct_trials = 8;
  int preview_views = 8;
  std::filesystem::path persist_dir;  // empty: in-memory only
};

struct HttpResult {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// REST session service, independent of the transport. Endpoints:
//   GET  /healthz
//   POST /sessions                      {source: sample|reconstruct|instance, ...}
//   GET  /sessions/{id}
//   POST /sessions/{id}/edits           {modality, view, target, mask, subspace?, steps?}
//   POST /sessions/{id}/transfer        {reference_session, which: shape|color}
//   POST /sessions/{id}/replay
//   GET  /sessions/{id}/render?view=    PNG
//   GET  /sessions/{id}/mesh            OBJ
class Service {
 public:
  explicit Service(ServiceOptions options = {});
  ~Service();

  void load_model(const std::filesystem::path& checkpoint_dir);
  // Takes the decoders and the training codes of an in-memory checkpoint.
  void set_model(MMVAD model, torch::Tensor instance_codes = {});
  bool ready() const;

  HttpResult handle(const std::string& method, const std::string& path, const std::string& body,
                    const std::map<std::string, std::string>& query = {});

  size_t session_count() const;

 private:
  struct Session;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Serves a Service over HTTP with CORS headers on every response.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  // Port 0 picks a free port; returns the bound port.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void start();   // listen() on a background thread
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace shapeforge
