#include "support/doctest_torch.hpp"

#include <filesystem>

#include "shapeforge/archive.hpp"
#include "shapeforge/error.hpp"
#include "shapeforge/fewshot.hpp"
#include "shapeforge/random.hpp"
#include "support/oracles.hpp"

using namespace shapeforge;
namespace fs = std::filesystem;

TEST_CASE("gradient penalty closed forms") {
  torch::manual_seed(0);
  auto real = torch::rand({6, 3, 8, 8});
  auto fake = torch::rand({6, 3, 8, 8});

  // Linear critic with a unit weight vector: |grad| = 1 everywhere.
  auto w = torch::randn({3 * 8 * 8});
  w = w / w.norm();
  auto linear = [&](const torch::Tensor& x) { return x.reshape({x.size(0), -1}).matmul(w); };
  CHECK(gradient_penalty(linear, real, fake).item<double>() < 1e-6);
  CHECK(interpolate_grad_norm(linear, real, fake) == doctest::Approx(1.0).epsilon(1e-5));

  // Scaled weight c: penalty = lambda (c - 1)^2.
  for (double c : {0.0, 0.5, 3.0}) {
    auto scaled = [&](const torch::Tensor& x) { return x.reshape({x.size(0), -1}).matmul(w * c); };
    CHECK(gradient_penalty(scaled, real, fake, 10.0).item<double>() == doctest::Approx(10.0 * (c - 1) * (c - 1)).epsilon(1e-4));
  }
  auto constant = [](const torch::Tensor& x) { return torch::zeros({x.size(0)}); };
  CHECK(gradient_penalty(constant, real, fake, 10.0).item<double>() == doctest::Approx(10.0));

  // Quadratic critic: D(x) = 0.5 |x|^2 has grad x; oracle over the same interpolates.
  auto gen = make_generator(42);
  auto gen_copy = make_generator(42);
  auto quad = [](const torch::Tensor& x) { return 0.5 * x.reshape({x.size(0), -1}).square().sum(1); };
  auto u = torch::rand({6, 1, 1, 1}, gen_copy);
  auto x = u * real + (1 - u) * fake;
  auto expected = (x.reshape({6, -1}).norm(2, 1) - 1).square().mean().item<double>() * 10.0;
  CHECK(gradient_penalty(quad, real, fake, 10.0, gen).item<double>() == doctest::Approx(expected).epsilon(1e-5));

  CHECK_THROWS_AS(gradient_penalty(linear, real, fake.narrow(0, 0, 3)), Error);
}

TEST_CASE("gradient penalty is differentiable in the critic") {
  torch::manual_seed(1);
  Critic critic(1, 16, 8);
  auto real = torch::rand({4, 1, 16, 16});
  auto fake = torch::rand({4, 1, 16, 16});
  auto fn = [&](const torch::Tensor& x) { return critic->forward(x); };
  auto penalty = gradient_penalty(fn, real, fake);
  penalty.backward();
  double total = 0;
  for (const auto& p : critic->parameters()) {
    if (p.grad().defined()) total += p.grad().abs().sum().item<double>();
  }
  CHECK(total > 0);
  CHECK(critic->forward(real).sizes() == torch::IntArrayRef{4});
}

TEST_CASE("mapping network") {
  MappingNet h(8);
  h->set_identity();
  h->eval();
  torch::NoGradGuard no_grad;
  auto z = torch::randn({5, 8});
  CHECK(torch::equal(h->forward(z), z));

  const LatentDims dims{3, 5};
  for (int64_t n : {0, 1, 7}) CHECK(sample_adapted(h, n, 3, dims).size() == static_cast<size_t>(n));
  auto codes = sample_adapted(h, 6, 11, dims);
  auto prior = torch::randn({6, 8}, make_generator(11));
  for (int64_t i = 0; i < 6; ++i) CHECK(torch::equal(codes[i].full(), prior[i]));
  auto again = sample_adapted(h, 6, 11, dims);
  for (int64_t i = 0; i < 6; ++i) CHECK(torch::equal(again[i].full(), codes[i].full()));
  CHECK_THROWS_AS(sample_adapted(h, 2, 0, LatentDims{4, 5}), Error);

  MappingNet fresh(8);
  fresh->eval();
  CHECK((fresh->forward(z) - z).abs().max().item<double>() < 0.1);
}

TEST_CASE("adaptation leaves the generators frozen and is deterministic") {
  torch::manual_seed(2);
  MMVAD model(oracle::tiny_config());
  std::vector<torch::Tensor> examples;
  for (int i = 0; i < 4; ++i) {
    auto img = torch::zeros({3, 16, 16});
    img[0].fill_(0.9);
    examples.push_back(img);
  }
  AdaptConfig config;
  config.steps = 4;
  config.critic_steps = 2;
  config.batch = 4;
  config.critic_width = 8;
  config.log_every = 1;
  config.seed = 5;
  const auto hash = state_hash(*model);
  auto a = adapt(model, examples, Modality::Render, view_ring(), config);
  auto b = adapt(model, examples, Modality::Render, view_ring(), config);
  CHECK(state_hash(*model) == hash);
  CHECK(a.base_hash == hash);
  CHECK(state_hash(*a.mapping) == state_hash(*b.mapping));
  CHECK(a.history.size() == 4);
  CHECK(state_hash(*a.mapping) != state_hash(*MappingNet(8)));

  for (const auto& code : sample_adapted(a.mapping, 4, 0, model->config().dims)) {
    torch::NoGradGuard no_grad;
    CHECK(torch::isfinite(model->generate_render(code, view_ring()[0])).all().item<bool>());
  }

  const fs::path dir = fs::temp_directory_path() / "shapeforge_mapping_test";
  fs::remove_all(dir);
  save_adaptation(a, dir);
  auto loaded = load_adaptation(dir, hash);
  CHECK(state_hash(*loaded.mapping) == state_hash(*a.mapping));
  CHECK(loaded.history.size() == a.history.size());
  try {
    load_adaptation(dir, std::string(64, '0'));
    FAIL("expected base_mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == "base_mismatch");
  }
  fs::remove_all(dir);

  CHECK_THROWS_AS(adapt(model, {}, Modality::Render, view_ring(), config), Error);
  CHECK_THROWS_AS(adapt(model, examples, Modality::Shape3D, view_ring(), config), Error);
  CHECK_THROWS_AS(adapt(model, {torch::zeros({1, 16, 16})}, Modality::Render, view_ring(), config), Error);
}
