#include "support/doctest_torch.hpp"

#include "shapeforge/config.hpp"
#include "shapeforge/error.hpp"

using namespace shapeforge;

TEST_CASE("config files map onto settings") {
  const std::string text = R"(# desk run
[data]
categories = ["toy-chair", "toy-table"]
instances_per_category = 8   # small
resolution = 32

[train]
steps = 1500
weight_kl = 0.5
deterministic = false

[optimize]
subspace = "color-only"
anchor_weight = 0.25

[adapt]
lambda_gp = 5
)";
  Settings s;
  apply_config(parse_config(text), s);
  CHECK(s.data.instances_per_category == 8);
  CHECK((s.data.categories == std::vector<std::string>{"toy-chair", "toy-table"}));
  CHECK(s.data.resolution == 32);
  CHECK(s.train.model.resolution == 32);
  CHECK(s.train.steps == 1500);
  CHECK(s.train.weights.kl == 0.5);
  CHECK(!s.train.deterministic);
  CHECK(s.optimize.subspace == Subspace::ColorOnly);
  CHECK(s.optimize.anchor_weight.value() == 0.25);
  CHECK(s.adapt.lambda_gp == 5.0);
  CHECK(s.train.lr_codes == TrainConfig{}.lr_codes);
}

TEST_CASE("unknown keys are named") {
  Settings s;
  try {
    apply_config(parse_config("[train]\nsteps = 3\nlearning_rate = 0.1\n"), s);
    FAIL("expected unknown_key");
  } catch (const Error& e) {
    CHECK(e.code() == "unknown_key");
    CHECK(std::string(e.what()).find("train.learning_rate") != std::string::npos);
  }
  for (const auto& key : known_config_keys()) {
    CHECK(key.find('.') != std::string::npos);
  }
}

TEST_CASE("malformed config values") {
  auto code_of = [](const std::string& text) {
    try {
      Settings s;
      apply_config(parse_config(text), s);
    } catch (const Error& e) {
      return e.code();
    }
    return std::string("ok");
  };
  CHECK(code_of("[train]\nsteps = many\n") == "invalid_config");
  CHECK(code_of("[train]\nsteps\n") == "invalid_config");
  CHECK(code_of("[train]\nsteps = 1\nsteps = 2\n") == "invalid_config");
  CHECK(code_of("[train]\ndeterministic = yes\n") == "invalid_config");
  CHECK(code_of("[data]\nresolution = 32\n[model]\nresolution = 64\n") == "invalid_config");
  CHECK(code_of("[data]\ncategories = toy-chair\n") == "invalid_config");
  CHECK(code_of("[optimize]\nsubspace = \"diagonal\"\n") == "unknown_subspace");
  CHECK(code_of("") == "ok");
}
