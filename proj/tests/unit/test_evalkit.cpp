#include "support/doctest_torch.hpp"

#include <cmath>

#include "json.hpp"

#include "shapeforge/error.hpp"
#include "shapeforge/evalkit.hpp"
#include "support/oracles.hpp"

using namespace shapeforge;

namespace {

std::vector<Vec3> random_cloud(oracle::Rng& rng, int n) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.push_back(rng.point(1.0));
  return pts;
}

// Nearest neighbour by direct search, written independently of the library.
double oracle_chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  auto one_side = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sum = 0;
    for (const auto& p : from) {
      double best = INFINITY;
      for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
      sum += best;
    }
    return sum / from.size();
  };
  return one_side(a, b) + one_side(b, a);
}

}  // namespace

TEST_CASE("chamfer examples") {
  std::vector<Vec3> a{{0, 0, 0}};
  std::vector<Vec3> b{{1, 0, 0}};
  CHECK(chamfer(a, b) == doctest::Approx(2.0));
  CHECK(chamfer_brute(a, b) == doctest::Approx(2.0));
  CHECK(chamfer(a, a) == 0.0);

  oracle::Rng rng(1);
  auto p = random_cloud(rng, 40);
  auto q = random_cloud(rng, 30);
  auto dup = p;
  dup.push_back(p[3]);
  CHECK(chamfer(dup, q) == doctest::Approx(oracle_chamfer(dup, q)).epsilon(1e-12));
  auto doubled = p;
  doubled.insert(doubled.end(), p.begin(), p.end());
  CHECK(chamfer(doubled, q) == doctest::Approx(chamfer(p, q)).epsilon(1e-12));
  CHECK(chamfer(p, q) == doctest::Approx(chamfer(q, p)).epsilon(1e-12));
  CHECK_THROWS_AS(chamfer({}, q), Error);
}

TEST_CASE("kd-tree chamfer matches exhaustive search") {
  oracle::Rng rng(7);
  for (int pair = 0; pair < 50; ++pair) {
    auto a = random_cloud(rng, rng.integer(1, 500));
    auto b = random_cloud(rng, rng.integer(1, 500));
    const double fast = chamfer(a, b);
    CHECK(std::abs(fast - chamfer_brute(a, b)) <= 1e-9);
    CHECK(std::abs(fast - oracle_chamfer(a, b)) <= 1e-9);
    CHECK(fast >= 0.0);
  }
}

TEST_CASE("surface sampling") {
  Mesh square;
  square.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {5, 5, 5}, {5.1, 5, 5}, {5, 5.1, 5}};
  square.triangles = {{0, 1, 2}, {0, 2, 3}, {4, 5, 6}};
  auto pts = sample_surface(square, 4000, 3);
  REQUIRE(pts.size() == 4000);
  int on_square = 0;
  for (const auto& p : pts) {
    if (p.z() == doctest::Approx(0.0)) {
      ++on_square;
      CHECK(p.x() >= -1e-12);
      CHECK(p.x() <= 1 + 1e-12);
    }
  }
  // The small triangle has area 0.005 out of 1.005.
  CHECK(on_square > 3950);
  CHECK(sample_surface(square, 100, 3) == sample_surface(square, 100, 3));
  CHECK(mesh_chamfer(square, square, 500, 1) < 1e-2);
}

TEST_CASE("psnr examples") {
  auto a = torch::rand({3, 8, 8});
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(psnr(torch::ones({3, 4, 4}), torch::zeros({3, 4, 4})) == doctest::Approx(0.0));
  CHECK(psnr(torch::full({1, 10, 10}, 0.1), torch::zeros({1, 10, 10})) == doctest::Approx(20.0));
  auto b = torch::rand({3, 8, 8});
  CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)));
  double last = INFINITY;
  for (double e : {0.01, 0.05, 0.1, 0.3}) {
    const double v = psnr(torch::full({2, 2}, e), torch::zeros({2, 2}));
    CHECK(v < last);
    last = v;
  }
}

TEST_CASE("occlusion masks") {
  for (auto kind : all_occlusions()) {
    for (int64_t r : {16, 64}) {
      auto mask = occlusion_mask(kind, r);
      CHECK(mask.sum().item<double>() / (r * r) == visible_fraction(kind));
    }
    CHECK(parse_occlusion(occlusion_name(kind)) == kind);
  }
  auto img = torch::rand({3, 64, 64}) * 0.5;
  auto [full, full_mask] = apply_occlusion(img, OcclusionKind::Full);
  CHECK(torch::equal(full, img));
  CHECK(full_mask.min().item<double>() == 1.0);

  auto [half, half_mask] = apply_occlusion(img, OcclusionKind::HalfHorizontal);
  CHECK(half.narrow(2, 32, 32).min().item<double>() == 1.0);
  CHECK(torch::equal(half.narrow(2, 0, 32), img.narrow(2, 0, 32)));
  CHECK(half_mask.narrow(1, 0, 32).min().item<double>() == 1.0);

  auto [quarter, qmask] = apply_occlusion(img, OcclusionKind::QuarterVertical, 0.0);
  CHECK(torch::equal(quarter.narrow(1, 0, 16), img.narrow(1, 0, 16)));
  CHECK(quarter.narrow(1, 16, 48).max().item<double>() == 0.0);
  CHECK(qmask.sum().item<double>() == 16 * 64);
  CHECK_THROWS_AS(parse_occlusion("diagonal"), Error);
}

TEST_CASE("classifier sanity") {
  torch::manual_seed(0);
  std::vector<torch::Tensor> reds, blues, all;
  std::vector<int> labels;
  for (int i = 0; i < 32; ++i) {
    auto noise = torch::rand({3, 16, 16}) * 0.3;
    auto red = noise.clone();
    red[0] += 0.7;
    auto blue = noise.clone();
    blue[2] += 0.7;
    reds.push_back(red);
    blues.push_back(blue);
  }
  ClassifierConfig config;
  config.epochs = 20;
  auto clf = train_eval_classifier(reds, blues, config);
  for (const auto& r : reds) {
    all.push_back(r);
    labels.push_back(1);
  }
  for (const auto& b : blues) {
    all.push_back(b);
    labels.push_back(0);
  }
  const double error = classify_error(clf, all, labels);
  CHECK(error < 0.05);
  std::vector<int> flipped;
  for (int l : labels) flipped.push_back(1 - l);
  CHECK(classify_error(clf, all, flipped) == doctest::Approx(1.0 - error));

  torch::manual_seed(9);
  Classifier untrained(3, 16);
  const double chance = classify_error(untrained, all, labels);
  CHECK(chance >= 0.4);
  CHECK(chance <= 0.6);

  std::vector<torch::Tensor> few(reds.begin(), reds.begin() + 10);
  try {
    train_eval_classifier(few, blues, config);
    FAIL("expected insufficient_data");
  } catch (const Error& e) {
    CHECK(e.code() == "insufficient_data");
  }
}

TEST_CASE("report json") {
  std::vector<ReportRow> rows{{"full", "sketch", 1.5, 4}, {"half-horizontal", "render", 2.25, 4}};
  auto j = nlohmann::json::parse(report_json(rows));
  REQUIRE(j.at("rows").size() == 2);
  CHECK(j["rows"][1]["occlusion"] == "half-horizontal");
  CHECK(j["rows"][0]["chamfer_x1e3"].get<double>() == 1.5);
  CHECK(j["rows"][0]["shapes"].get<int>() == 4);
}
