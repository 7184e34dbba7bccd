#include "support/doctest_torch.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "shapeforge/archive.hpp"
#include "shapeforge/error.hpp"
#include "shapeforge/trainer.hpp"
#include "support/oracles.hpp"

using namespace shapeforge;
namespace fs = std::filesystem;

namespace {

Dataset small_dataset(int per_category, int resolution) {
  DatasetConfig c;
  c.instances_per_category = per_category;
  c.n_near = 256;
  c.n_uniform = 128;
  c.views = 4;
  c.resolution = resolution;
  c.seed = 3;
  return make_dataset(c);
}

TrainConfig tiny_train(int64_t steps) {
  TrainConfig t;
  t.model = oracle::tiny_config();
  t.steps = steps;
  t.batch_instances = 4;
  t.points_per_instance = 64;
  t.log_every = 1;
  t.seed = 9;
  return t;
}

const Dataset& tiny_data() {
  static const Dataset d = small_dataset(2, 16);
  return d;
}

}  // namespace

TEST_CASE("training is deterministic and logs every term") {
  std::ostringstream log;
  TrainHooks hooks;
  hooks.jsonl = &log;
  auto a = train(tiny_data(), tiny_train(30), hooks);
  auto b = train(tiny_data(), tiny_train(30));
  REQUIRE(a.history.size() == 30);
  REQUIRE(b.history.size() == 30);
  for (size_t i = 0; i < a.history.size(); ++i) {
    CHECK(std::abs(a.history[i].total - b.history[i].total) <= 1e-6);
    CHECK(a.history[i].l_c >= 0);
    CHECK(a.history[i].l_s >= 0);
    CHECK(a.history[i].l_r >= 0);
    CHECK(a.history[i].kl >= 0);
  }
  CHECK(a.iteration == 30);
  CHECK(state_hash(*a.model) == state_hash(*b.model));

  std::istringstream lines(log.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    ++count;
    for (const char* key : {"\"step\"", "\"l_c\"", "\"l_s\"", "\"l_r\"", "\"kl\"", "\"total\""}) {
      CHECK(line.find(key) != std::string::npos);
    }
  }
  CHECK(count == 30);
}

TEST_CASE("KL-only training pulls the codes toward the prior") {
  auto config = tiny_train(60);
  config.weights = {0.0, 0.0, 0.0, 1.0};
  config.batch_instances = 4;  // every instance in every batch
  auto ck = train(tiny_data(), config);
  for (size_t i = 1; i < ck.history.size(); ++i) CHECK(ck.history[i].kl < ck.history[i - 1].kl);
  CHECK(ck.history.back().kl < ck.history.front().kl);
}

TEST_CASE("single code steps descend and codes do not leak") {
  auto ck = train(tiny_data(), tiny_train(20));
  const auto data = to_tensors(tiny_data());
  ck.model->eval();
  for (int64_t probe = 0; probe < 3; ++probe) {
    const int64_t id = probe % 4;
    auto noise = torch::randn({ck.config.model.dims.total()});
    auto points = torch::randint(data.points.size(1), {64}, torch::kLong);
    auto before = instance_objective(ck, data, id, noise, probe, points);
    ck.codebook->zero_grad();
    before.total.backward();
    {
      torch::NoGradGuard no_grad;
      auto saved_mu = ck.codebook->mu.clone();
      auto saved_lv = ck.codebook->log_var.clone();
      ck.codebook->mu.sub_(1e-3 * ck.codebook->mu.grad());
      ck.codebook->log_var.sub_(1e-3 * ck.codebook->log_var.grad());
      auto after = instance_objective(ck, data, id, noise, probe, points);
      CHECK(after.total.item<double>() < before.total.item<double>());

      // Permuting the other rows leaves this instance untouched.
      ck.codebook->mu.copy_(saved_mu);
      ck.codebook->log_var.copy_(saved_lv);
      auto reference = instance_objective(ck, data, id, noise, probe, points).total.item<double>();
      std::vector<int64_t> order{0, 1, 2, 3};
      std::vector<int64_t> others;
      for (auto o : order) {
        if (o != id) others.push_back(o);
      }
      auto rotated = others;
      std::rotate(rotated.begin(), rotated.begin() + 1, rotated.end());
      for (size_t k = 0; k < others.size(); ++k) {
        ck.codebook->mu[others[k]].copy_(saved_mu[rotated[k]]);
        ck.codebook->log_var[others[k]].copy_(saved_lv[rotated[k]]);
      }
      CHECK(instance_objective(ck, data, id, noise, probe, points).total.item<double>() == reference);
      ck.codebook->mu.copy_(saved_mu);
      ck.codebook->log_var.copy_(saved_lv);
    }
  }
}

TEST_CASE("non-finite losses abort naming the term") {
  auto ck = initialize(tiny_train(5), 4);
  auto data = to_tensors(tiny_data());
  data.sdf.fill_(std::numeric_limits<float>::quiet_NaN());
  try {
    train_steps(ck, data, 5);
    FAIL("expected non_finite_loss");
  } catch (const Error& e) {
    CHECK(e.code() == "non_finite_loss");
    CHECK(std::string(e.what()).find("l_c") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip") {
  auto ck = train(tiny_data(), tiny_train(12));
  const fs::path dir = fs::temp_directory_path() / "shapeforge_ckpt_test";
  fs::remove_all(dir);
  save_checkpoint(ck, dir);
  auto back = load_checkpoint(dir);
  CHECK(back.iteration == 12);
  CHECK(back.history.size() == ck.history.size());
  CHECK(back.config.model == ck.config.model);
  CHECK(torch::equal(back.codebook->mu, ck.codebook->mu));

  ck.model->eval();
  torch::NoGradGuard no_grad;
  const auto view = view_ring()[1];
  auto code = ck.code(2);
  CHECK(torch::equal(back.code(2).full(), code.full()));
  CHECK((back.model->generate_render(code, view) - ck.model->generate_render(code, view)).abs().max().item<double>() <= 1e-6);
  CHECK((back.model->generate_sketch(code.shape, view) - ck.model->generate_sketch(code.shape, view)).abs().max().item<double>() <= 1e-6);
  auto pts = torch::rand({50, 3}) * 2 - 1;
  CHECK(torch::equal(back.model->implicit->sdf_eval(code.shape, pts).sdf, ck.model->implicit->sdf_eval(code.shape, pts).sdf));

  SUBCASE("zero steps gives iteration 0") {
    auto zero = train(tiny_data(), tiny_train(0));
    CHECK(zero.iteration == 0);
    save_checkpoint(zero, dir / "zero");
    CHECK(load_checkpoint(dir / "zero").iteration == 0);
  }
  SUBCASE("schema mismatch") {
    std::ifstream in(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    in.close();
    const auto pos = text.find("\"schema_version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 19, "\"schema_version\": 2");
    std::ofstream(dir / "manifest.json") << text;
    try {
      load_checkpoint(dir);
      FAIL("expected schema_mismatch");
    } catch (const Error& e) {
      CHECK(e.code() == "schema_mismatch");
    }
  }
  SUBCASE("truncated blob") {
    fs::resize_file(dir / "render_generator.bin", fs::file_size(dir / "render_generator.bin") / 2);
    try {
      load_checkpoint(dir);
      FAIL("expected truncated_blob");
    } catch (const Error& e) {
      CHECK(e.code() == "truncated_blob");
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("overfitting an eight-instance corpus") {
  auto data = small_dataset(4, 64);
  TrainConfig config;
  config.steps = 2000;
  config.log_every = 50;
  config.seed = 1;
  auto ck = train(data, config);
  REQUIRE(!ck.history.empty());
  const double initial = ck.history.front().total;
  const double final_smoothed = ck.history.back().smoothed_total;
  MESSAGE("initial total " << initial << ", final smoothed " << final_smoothed);
  CHECK(final_smoothed < 0.25 * initial);
}
