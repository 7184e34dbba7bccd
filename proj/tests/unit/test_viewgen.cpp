#include "support/doctest_torch.hpp"

#include <cmath>
#include <numbers>

#include "shapeforge/geometry.hpp"
#include "shapeforge/model.hpp"
#include "shapeforge/viewgen.hpp"
#include "support/oracles.hpp"

using namespace shapeforge;

TEST_CASE("viewpoint encoding") {
  auto near = [](const std::array<double, 4>& a, const std::array<double, 4>& b) {
    for (int i = 0; i < 4; ++i) {
      if (std::abs(a[i] - b[i]) > 1e-12) return false;
    }
    return true;
  };
  CHECK(near(Viewpoint{0, 0}.encode(), {1, 0, 1, 0}));
  CHECK(near(Viewpoint{std::numbers::pi / 2, 0}.encode(), {0, 1, 1, 0}));
  oracle::Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    Viewpoint v{rng.uniform(0, 2 * std::numbers::pi), rng.uniform(-1.4, 1.4)};
    auto e = v.encode();
    CHECK(near(e, Viewpoint{v.azimuth + 2 * std::numbers::pi, v.elevation}.encode()));
    CHECK(std::abs(e[0] * e[0] + e[1] * e[1] - 1.0) < 1e-12);
    CHECK(std::abs(e[2] * e[2] + e[3] * e[3] - 1.0) < 1e-12);
  }
  auto ring = view_ring(8);
  REQUIRE(ring.size() == 8);
  CHECK(ring[2].azimuth == doctest::Approx(std::numbers::pi / 2));
  CHECK(ring[0].elevation == doctest::Approx(deg_to_rad(20.0)));
  CHECK((!Viewpoint{0, deg_to_rad(86)}.legal()));
  CHECK((Viewpoint{0, deg_to_rad(-85)}.legal()));
}

TEST_CASE("camera geometry") {
  Camera cam(Viewpoint{0, 0});
  CHECK((cam.eye() - Vec3(0, 0, 2)).norm() < 1e-12);
  oracle::Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const int r = rng.integer(0, 63), c = rng.integer(0, 63);
    const Vec3 p = cam.eye() + 1.7 * cam.ray(r, c, 64);
    auto rc = cam.project(p, 64);
    CHECK(std::abs(rc[0] - (r + 0.5)) < 1e-9);
    CHECK(std::abs(rc[1] - (c + 0.5)) < 1e-9);
  }
  // Row 0 looks up, column 0 looks left.
  CHECK(cam.ray(0, 32, 64).y() > 0);
  CHECK(cam.ray(32, 0, 64).x() < 0);
}

TEST_CASE("generators are pure and correctly shaped") {
  torch::manual_seed(3);
  auto config = oracle::tiny_config();
  MMVAD model(config);
  model->eval();
  JointLatentCode z{torch::randn({4}), torch::randn({4})};
  const Viewpoint view{0.3, 0.2};
  auto s1 = model->generate_sketch(z.shape, view);
  auto s2 = model->generate_sketch(z.shape, view);
  CHECK((s1.sizes() == std::vector<int64_t>{1, 16, 16}));
  CHECK(torch::equal(s1, s2));
  auto r = model->generate_render(z, view);
  CHECK((r.sizes() == std::vector<int64_t>{3, 16, 16}));
  CHECK(r.min().item<double>() >= 0.0);
  CHECK(r.max().item<double>() <= 1.0);
  CHECK(torch::equal(r, model->generate_render(z, view)));

  SUBCASE("the sketch ignores the colour code") {
    for (int i = 0; i < 20; ++i) {
      JointLatentCode other{z.shape, torch::randn({4}) * 3};
      CHECK(torch::equal(model->generate(Modality::Sketch, other, view), s1));
    }
  }
  SUBCASE("the render responds to the colour code") {
    JointLatentCode other{z.shape, torch::randn({4}) * 3};
    CHECK((model->generate_render(other, view) - r).abs().sum().item<double>() > 0.0);
  }
  SUBCASE("binary sketches threshold logits at zero") {
    auto img = sketch_to_binary(s1);
    for (int i = 0; i < 16; ++i) {
      for (int j = 0; j < 16; ++j) CHECK(img.at(i, j) == (s1[0][i][j].item<float>() > 0 ? 1.0f : 0.0f));
    }
  }
}

TEST_CASE("generator gradients w.r.t. the code") {
  torch::manual_seed(5);
  MMVAD model(oracle::tiny_config());
  model->eval();
  model->to(torch::kFloat64);
  const Viewpoint view{0.7, 0.35};
  auto zs = torch::randn({4}, torch::kFloat64);
  auto zc = torch::randn({4}, torch::kFloat64);
  auto weights = torch::randn({3, 16, 16}, torch::kFloat64);

  SUBCASE("sketch") {
    auto z = zs.clone().requires_grad_(true);
    (model->generate_sketch(z, view) * weights[0]).sum().backward();
    auto fd = oracle::finite_difference(
        [&](const torch::Tensor& x) { return (model->generate_sketch(x, view) * weights[0]).sum().item<double>(); }, zs);
    CHECK(oracle::relative_error(z.grad(), fd) < 1e-3);
  }
  SUBCASE("render") {
    auto full = torch::cat({zs, zc}).requires_grad_(true);
    (model->generate_render(JointLatentCode::split(full, 4), view) * weights).sum().backward();
    auto fd = oracle::finite_difference(
        [&](const torch::Tensor& x) {
          return (model->generate_render(JointLatentCode::split(x, 4), view) * weights).sum().item<double>();
        },
        torch::cat({zs, zc}));
    CHECK(oracle::relative_error(full.grad(), fd) < 1e-3);
  }
}
