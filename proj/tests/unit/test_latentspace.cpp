#include "support/doctest_torch.hpp"

#include <cmath>

#include "shapeforge/error.hpp"
#include "shapeforge/latentspace.hpp"
#include "shapeforge/random.hpp"
#include "support/oracles.hpp"

using namespace shapeforge;

TEST_CASE("split inverts concatenation exactly") {
  oracle::Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const int64_t ds = rng.integer(1, 40);
    const int64_t dc = rng.integer(1, 40);
    auto a = torch::randn({ds});
    auto b = torch::randn({dc});
    auto z = JointLatentCode::split(torch::cat({a, b}), ds);
    CHECK(torch::equal(z.shape, a));
    CHECK(torch::equal(z.color, b));
    CHECK(z.full().numel() == ds + dc);
  }
}

TEST_CASE("reparameterize") {
  PosteriorParams p{torch::tensor({0.5, -1.0, 2.0, 0.25}, torch::kFloat64),
                    torch::tensor({-1.0, 0.0, 0.5, 1.0}, torch::kFloat64)};

  SUBCASE("zero noise returns the mean") {
    auto z = reparameterize(p, torch::zeros({4}, torch::kFloat64), 2);
    CHECK(torch::equal(z.full(), p.mu));
  }
  SUBCASE("standard posterior passes noise through") {
    auto eps = torch::randn({4}, torch::kFloat64);
    auto z = reparameterize({torch::zeros({4}, torch::kFloat64), torch::zeros({4}, torch::kFloat64)}, eps, 2);
    CHECK(torch::allclose(z.full(), eps, 0, 0));
  }
  SUBCASE("sample mean converges to mu") {
    PosteriorParams q{torch::tensor({1.0, 2.0}, torch::kFloat64).expand({100000, 2}),
                      torch::zeros({100000, 2}, torch::kFloat64)};
    auto eps = torch::randn({100000, 2}, make_generator(3), torch::kFloat64);
    auto mean = reparameterize(q, eps, 1).full().mean(0);
    CHECK(std::abs(mean[0].item<double>() - 1.0) < 0.02);
    CHECK(std::abs(mean[1].item<double>() - 2.0) < 0.02);
  }
  SUBCASE("affine in the noise") {
    oracle::Rng rng(5);
    for (int i = 0; i < 20; ++i) {
      const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
      auto e1 = torch::randn({4}, torch::kFloat64);
      auto e2 = torch::randn({4}, torch::kFloat64);
      auto lhs = reparameterize(p, a * e1 + b * e2, 2).full();
      auto rhs = a * reparameterize(p, e1, 2).full() + b * reparameterize(p, e2, 2).full() - (a + b - 1) * p.mu;
      CHECK(torch::allclose(lhs, rhs, 1e-12, 1e-12));
    }
  }
  SUBCASE("length mismatch is rejected") {
    CHECK_THROWS_AS(reparameterize(p, torch::zeros({3}, torch::kFloat64), 2), Error);
  }
}

TEST_CASE("KL to the standard normal") {
  auto kl = [](std::vector<double> mu, std::vector<double> lv) {
    return kl_to_standard_normal({torch::tensor(mu, torch::kFloat64), torch::tensor(lv, torch::kFloat64)}).item<double>();
  };
  CHECK(kl({0.0, 0.0}, {0.0, 0.0}) == 0.0);
  CHECK(kl({1.0}, {0.0}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(kl({0.0}, {std::log(4.0)}) == doctest::Approx(0.5 * (4.0 - std::log(4.0) - 1.0)).epsilon(1e-12));
  CHECK(kl({0.0}, {std::log(4.0)}) == doctest::Approx(0.8069).epsilon(1e-4));

  SUBCASE("closed forms agree with Monte Carlo") {
    CHECK(std::abs(oracle::monte_carlo_kl({1.0}, {0.0}, 100000, 1) - 0.5) < 0.01);
    CHECK(std::abs(oracle::monte_carlo_kl({0.0}, {std::log(4.0)}, 100000, 2) - 0.8069) < 0.01);
  }
  SUBCASE("random params match Monte Carlo and are non-negative") {
    oracle::Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> mu(4), lv(4);
      for (int d = 0; d < 4; ++d) {
        mu[d] = rng.uniform(-2, 2);
        lv[d] = rng.uniform(-2, 2);
      }
      const double analytic = kl(mu, lv);
      CHECK(analytic >= 0.0);
      CHECK(std::abs(analytic - oracle::monte_carlo_kl(mu, lv, 100000, 100 + trial)) < 0.01);
    }
  }
  SUBCASE("zero only at the prior") {
    oracle::Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      const double m = rng.uniform(-1, 1), v = rng.uniform(-1, 1);
      CHECK(kl({m}, {v}) > 0.0);
    }
  }
}

TEST_CASE("reg_loss table") {
  auto with_norm = [](double sq) { return torch::full({4}, std::sqrt(sq / 4.0), torch::kFloat64); };
  CHECK(reg_loss(torch::zeros({8}, torch::kFloat64)).item<double>() == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(reg_loss(with_norm(0.25)).item<double>() == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(reg_loss(with_norm(4.0)).item<double>() == doctest::Approx(0.08).epsilon(1e-12));

  SUBCASE("monotone in the squared norm") {
    double previous = -1.0;
    for (double sq = 0.0; sq < 5.0; sq += 0.05) {
      const double value = reg_loss(with_norm(sq)).item<double>();
      CHECK(value >= previous);
      previous = value;
    }
  }
  SUBCASE("gradient follows the norm branch at the clamp point") {
    auto z = torch::tensor({0.5, 0.5, 0.0, 0.0}, torch::kFloat64).requires_grad_(true);
    reg_loss(z).backward();
    CHECK(torch::allclose(z.grad(), 2.0 * 0.02 * z.detach(), 1e-12, 1e-12));
  }
}

TEST_CASE("sample_prior") {
  const LatentDims dims{3, 5};
  auto a = sample_prior(dims, 42);
  auto b = sample_prior(dims, 42);
  CHECK(torch::equal(a.full(), b.full()));
  CHECK(!torch::equal(a.full(), sample_prior(dims, 43).full()));
  CHECK(a.dims() == dims);

  std::vector<torch::Tensor> draws;
  draws.reserve(100000);
  for (int i = 0; i < 100000; ++i) draws.push_back(sample_prior({2, 2}, static_cast<uint64_t>(i), torch::kFloat64).full());
  auto all = torch::stack(draws);
  auto mean = all.mean(0);
  auto var = all.var(0);
  for (int d = 0; d < 4; ++d) {
    CHECK(std::abs(mean[d].item<double>()) < 0.02);
    CHECK(std::abs(var[d].item<double>() - 1.0) < 0.05);
  }
}

TEST_CASE("latent gradients match finite differences") {
  auto mu = torch::tensor({0.3, -0.7, 1.1, 0.2}, torch::kFloat64);
  auto lv = torch::tensor({-0.5, 0.4, 0.1, -1.2}, torch::kFloat64);
  auto noise = torch::tensor({0.9, -0.3, 0.5, -1.4}, torch::kFloat64);
  auto weights = torch::tensor({0.3, -1.0, 0.7, 0.2}, torch::kFloat64);

  SUBCASE("reparameterize w.r.t. mu and log_var") {
    auto m = mu.clone().requires_grad_(true);
    auto v = lv.clone().requires_grad_(true);
    (reparameterize({m, v}, noise, 2).full() * weights).sum().backward();
    auto fd_mu = oracle::finite_difference(
        [&](const torch::Tensor& x) { return (reparameterize({x, lv}, noise, 2).full() * weights).sum().item<double>(); }, mu);
    auto fd_lv = oracle::finite_difference(
        [&](const torch::Tensor& x) { return (reparameterize({mu, x}, noise, 2).full() * weights).sum().item<double>(); }, lv);
    CHECK(oracle::relative_error(m.grad(), fd_mu) < 1e-3);
    CHECK(oracle::relative_error(v.grad(), fd_lv) < 1e-3);
  }
  SUBCASE("KL") {
    auto m = mu.clone().requires_grad_(true);
    auto v = lv.clone().requires_grad_(true);
    kl_to_standard_normal({m, v}).backward();
    auto fd_mu = oracle::finite_difference(
        [&](const torch::Tensor& x) { return kl_to_standard_normal({x, lv}).item<double>(); }, mu);
    auto fd_lv = oracle::finite_difference(
        [&](const torch::Tensor& x) { return kl_to_standard_normal({mu, x}).item<double>(); }, lv);
    CHECK(oracle::relative_error(m.grad(), fd_mu) < 1e-3);
    CHECK(oracle::relative_error(v.grad(), fd_lv) < 1e-3);
  }
  SUBCASE("reg_loss above the clamp") {
    auto z = mu.clone().requires_grad_(true);
    reg_loss(z).backward();
    auto fd = oracle::finite_difference([](const torch::Tensor& x) { return reg_loss(x).item<double>(); }, mu);
    CHECK(oracle::relative_error(z.grad(), fd) < 1e-3);
  }
}

TEST_CASE("codebook") {
  torch::manual_seed(0);
  CodeBook book(5, LatentDims{3, 2});
  CHECK(book->size() == 5);
  CHECK(torch::all(book->log_var == -6.0).item<bool>());
  CHECK(book->mu.abs().max().item<double>() < 0.1);
  CHECK(torch::equal(book->entry(2).mu, book->mu[2]));
  CHECK_THROWS_AS(book->entry(5), Error);
  CHECK_THROWS_AS(book->entry(-1), Error);
}
