#include "shapeforge/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "shapeforge/error.hpp"

namespace shapeforge {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& raw, const std::string& key) {
  auto v = trim(raw);
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  if (v.find('"') != std::string::npos) fail("invalid_config", key + ": unbalanced quotes");
  return v;
}

template <typename T>
T number(const std::string& raw, const std::string& key) {
  const auto v = unquote(raw, key);
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) fail("invalid_config", key + ": '" + v + "' is not a number");
  return out;
}

bool boolean(const std::string& raw, const std::string& key) {
  const auto v = unquote(raw, key);
  if (v == "true") return true;
  if (v == "false") return false;
  fail("invalid_config", key + ": expected true or false");
}

std::vector<std::string> string_list(const std::string& raw, const std::string& key) {
  auto v = trim(raw);
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') fail("invalid_config", key + ": expected a [..] list");
  std::vector<std::string> out;
  std::stringstream items(v.substr(1, v.size() - 2));
  std::string item;
  while (std::getline(items, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(unquote(item, key));
  }
  return out;
}

using Setter = std::function<void(Settings&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"data.categories", [](Settings& s, auto& v, auto& k) { s.data.categories = string_list(v, k); }},
      {"data.instances_per_category",
       [](Settings& s, auto& v, auto& k) { s.data.instances_per_category = number<int>(v, k); }},
      {"data.n_near", [](Settings& s, auto& v, auto& k) { s.data.n_near = number<int>(v, k); }},
      {"data.n_uniform", [](Settings& s, auto& v, auto& k) { s.data.n_uniform = number<int>(v, k); }},
      {"data.noise_std", [](Settings& s, auto& v, auto& k) { s.data.noise_std = number<double>(v, k); }},
      {"data.far_threshold", [](Settings& s, auto& v, auto& k) { s.data.far_threshold = number<double>(v, k); }},
      {"data.views", [](Settings& s, auto& v, auto& k) { s.data.views = number<int>(v, k); }},
      {"data.elevation_deg",
       [](Settings& s, auto& v, auto& k) { s.data.elevation = deg_to_rad(number<double>(v, k)); }},
      {"data.resolution", [](Settings& s, auto& v, auto& k) { s.data.resolution = number<int>(v, k); }},
      {"data.seed", [](Settings& s, auto& v, auto& k) { s.data.seed = number<uint64_t>(v, k); }},
      {"data.ambiguous_pairs", [](Settings& s, auto& v, auto& k) { s.data.ambiguous_pairs = number<int>(v, k); }},

      {"model.shape_dim", [](Settings& s, auto& v, auto& k) { s.train.model.dims.shape = number<int64_t>(v, k); }},
      {"model.color_dim", [](Settings& s, auto& v, auto& k) { s.train.model.dims.color = number<int64_t>(v, k); }},
      {"model.shape_width", [](Settings& s, auto& v, auto& k) { s.train.model.shape_width = number<int64_t>(v, k); }},
      {"model.shape_layers", [](Settings& s, auto& v, auto& k) { s.train.model.shape_layers = number<int64_t>(v, k); }},
      {"model.tap_layer", [](Settings& s, auto& v, auto& k) { s.train.model.tap_layer = number<int64_t>(v, k); }},
      {"model.color_width", [](Settings& s, auto& v, auto& k) { s.train.model.color_width = number<int64_t>(v, k); }},
      {"model.color_layers", [](Settings& s, auto& v, auto& k) { s.train.model.color_layers = number<int64_t>(v, k); }},
      {"model.resolution", [](Settings& s, auto& v, auto& k) { s.train.model.resolution = number<int64_t>(v, k); }},
      {"model.image_width", [](Settings& s, auto& v, auto& k) { s.train.model.image_width = number<int64_t>(v, k); }},
      {"model.pyramid_levels", [](Settings& s, auto& v, auto& k) { s.train.model.pyramid_levels = number<int>(v, k); }},

      {"train.lr_decoder", [](Settings& s, auto& v, auto& k) { s.train.lr_decoder = number<double>(v, k); }},
      {"train.lr_codes", [](Settings& s, auto& v, auto& k) { s.train.lr_codes = number<double>(v, k); }},
      {"train.steps", [](Settings& s, auto& v, auto& k) { s.train.steps = number<int64_t>(v, k); }},
      {"train.batch_instances", [](Settings& s, auto& v, auto& k) { s.train.batch_instances = number<int64_t>(v, k); }},
      {"train.points_per_instance",
       [](Settings& s, auto& v, auto& k) { s.train.points_per_instance = number<int64_t>(v, k); }},
      {"train.weight_c", [](Settings& s, auto& v, auto& k) { s.train.weights.c = number<double>(v, k); }},
      {"train.weight_s", [](Settings& s, auto& v, auto& k) { s.train.weights.s = number<double>(v, k); }},
      {"train.weight_r", [](Settings& s, auto& v, auto& k) { s.train.weights.r = number<double>(v, k); }},
      {"train.weight_kl", [](Settings& s, auto& v, auto& k) { s.train.weights.kl = number<double>(v, k); }},
      {"train.seed", [](Settings& s, auto& v, auto& k) { s.train.seed = number<uint64_t>(v, k); }},
      {"train.log_every", [](Settings& s, auto& v, auto& k) { s.train.log_every = number<int64_t>(v, k); }},
      {"train.checkpoint_every", [](Settings& s, auto& v, auto& k) { s.train.checkpoint_every = number<int64_t>(v, k); }},
      {"train.smoothing", [](Settings& s, auto& v, auto& k) { s.train.smoothing = number<double>(v, k); }},
      {"train.deterministic", [](Settings& s, auto& v, auto& k) { s.train.deterministic = boolean(v, k); }},

      {"optimize.steps", [](Settings& s, auto& v, auto& k) { s.optimize.steps = number<int>(v, k); }},
      {"optimize.lr", [](Settings& s, auto& v, auto& k) { s.optimize.lr = number<double>(v, k); }},
      {"optimize.gamma", [](Settings& s, auto& v, auto& k) { s.optimize.gamma = number<double>(v, k); }},
      {"optimize.beta", [](Settings& s, auto& v, auto& k) { s.optimize.beta = number<double>(v, k); }},
      {"optimize.trials", [](Settings& s, auto& v, auto& k) { s.optimize.trials = number<int>(v, k); }},
      {"optimize.subspace", [](Settings& s, auto& v, auto& k) { s.optimize.subspace = parse_subspace(unquote(v, k)); }},
      {"optimize.seed", [](Settings& s, auto& v, auto& k) { s.optimize.seed = number<uint64_t>(v, k); }},
      {"optimize.anchor_weight", [](Settings& s, auto& v, auto& k) { s.optimize.anchor_weight = number<double>(v, k); }},
      {"optimize.tolerance", [](Settings& s, auto& v, auto& k) { s.optimize.tolerance = number<double>(v, k); }},

      {"adapt.steps", [](Settings& s, auto& v, auto& k) { s.adapt.steps = number<int>(v, k); }},
      {"adapt.critic_steps", [](Settings& s, auto& v, auto& k) { s.adapt.critic_steps = number<int>(v, k); }},
      {"adapt.lambda_gp", [](Settings& s, auto& v, auto& k) { s.adapt.lambda_gp = number<double>(v, k); }},
      {"adapt.lr_mapping", [](Settings& s, auto& v, auto& k) { s.adapt.lr_mapping = number<double>(v, k); }},
      {"adapt.lr_critic", [](Settings& s, auto& v, auto& k) { s.adapt.lr_critic = number<double>(v, k); }},
      {"adapt.batch", [](Settings& s, auto& v, auto& k) { s.adapt.batch = number<int>(v, k); }},
      {"adapt.critic_width", [](Settings& s, auto& v, auto& k) { s.adapt.critic_width = number<int64_t>(v, k); }},
      {"adapt.seed", [](Settings& s, auto& v, auto& k) { s.adapt.seed = number<uint64_t>(v, k); }},

      {"eval.classifier_epochs", [](Settings& s, auto& v, auto& k) { s.classifier.epochs = number<int>(v, k); }},
      {"eval.classifier_seed", [](Settings& s, auto& v, auto& k) { s.classifier.seed = number<uint64_t>(v, k); }},
      {"eval.mesh_resolution", [](Settings& s, auto& v, auto& k) { s.mesh_resolution = number<int>(v, k); }},
  };
  return table;
}

}  // namespace

ConfigFile parse_config(const std::string& text) {
  ConfigFile out;
  std::stringstream in(text);
  std::string line;
  std::string section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const auto where = "line " + std::to_string(number);
    if (line.front() == '[' && line.back() == ']' && line.find('=') == std::string::npos) {
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail("invalid_config", where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("invalid_config", where + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) fail("invalid_config", where + ": missing key");
    const auto full = section.empty() ? key : section + "." + key;
    if (out.values.count(full)) fail("invalid_config", where + ": duplicate key " + full);
    out.values[full] = trim(line.substr(eq + 1));
  }
  return out;
}

ConfigFile read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("io_error", "cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

void apply_config(const ConfigFile& file, Settings& settings) {
  const auto& table = setters();
  for (const auto& [key, value] : file.values) {
    auto it = table.find(key);
    if (it == table.end()) fail("unknown_key", "unknown config key '" + key + "'");
    it->second(settings, value, key);
  }
  // One image resolution for data and model; either key sets both.
  const bool data_res = file.values.count("data.resolution") > 0;
  const bool model_res = file.values.count("model.resolution") > 0;
  if (data_res && model_res && settings.data.resolution != settings.train.model.resolution) {
    fail("invalid_config", "data.resolution and model.resolution disagree");
  }
  if (data_res) {
    settings.train.model.resolution = settings.data.resolution;
  } else {
    settings.data.resolution = static_cast<int>(settings.train.model.resolution);
  }
}

std::vector<std::string> known_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, _] : setters()) keys.push_back(key);
  return keys;
}

}  // namespace shapeforge
