#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "shapeforge/editor.hpp"
#include "shapeforge/evalkit.hpp"
#include "shapeforge/fewshot.hpp"
#include "shapeforge/synthdata.hpp"
#include "shapeforge/trainer.hpp"

namespace shapeforge {

// Flat "section.key" -> raw value. Parsed from a TOML-like subset:
//   # comment
//   [train]
//   steps = 2000
//   categories = ["toy-chair", "toy-table"]
struct ConfigFile {
  std::map<std::string, std::string> values;
};

ConfigFile parse_config(const std::string& text);
ConfigFile read_config(const std::filesystem::path& path);

struct Settings {
  DatasetConfig data;
  TrainConfig train;
  OptimizeConfig optimize;
  AdaptConfig adapt;
  ClassifierConfig classifier;
  int mesh_resolution = 64;
};

// Copies recognised keys into `settings`; unknown keys fail with unknown_key naming
// the key, malformed values with invalid_config.
void apply_config(const ConfigFile& file, Settings& settings);

std::vector<std::string> known_config_keys();

}  // namespace shapeforge
