#include "shapeforge/fewshot.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "shapeforge/archive.hpp"
#include "shapeforge/error.hpp"
#include "shapeforge/random.hpp"

namespace shapeforge {

using json = nlohmann::json;
namespace nn = torch::nn;
namespace F = torch::nn::functional;

MappingNetImpl::MappingNetImpl(int64_t dim, int64_t hidden) : dim_(dim), hidden_(hidden > 0 ? hidden : dim) {
  fc1_ = register_module("fc1", nn::Linear(dim_, hidden_));
  bn_ = register_module("bn", nn::BatchNorm1d(hidden_));
  fc2_ = register_module("fc2", nn::Linear(hidden_, dim_));
  torch::NoGradGuard no_grad;
  fc2_->weight.mul_(1e-2);
  fc2_->bias.zero_();
}

torch::Tensor MappingNetImpl::forward(const torch::Tensor& z) {
  require(z.dim() == 2 && z.size(1) == dim_, "dim_mismatch", "mapping input must be [B, " + std::to_string(dim_) + "]");
  return z + fc2_(torch::relu(bn_(fc1_(z))));
}

void MappingNetImpl::set_identity() {
  torch::NoGradGuard no_grad;
  fc2_->weight.zero_();
  fc2_->bias.zero_();
}

CriticImpl::CriticImpl(int64_t channels, int64_t resolution, int64_t base_width) {
  require(resolution >= 8 && (resolution & (resolution - 1)) == 0, "invalid_config",
          "critic resolution must be a power of two >= 8");
  int64_t in = channels;
  int64_t out = base_width;
  for (int64_t r = resolution; r > 4; r /= 2) {
    convs_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
    in = out;
    out *= 2;
  }
  register_module("convs", convs_);
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(in, 1, 4)));
}

torch::Tensor CriticImpl::forward(const torch::Tensor& images) {
  auto x = images;
  for (const auto& conv : *convs_) x = F::leaky_relu(conv->as<nn::Conv2d>()->forward(x), F::LeakyReLUFuncOptions().negative_slope(0.2));
  return head_(x).reshape({-1});
}

namespace {

torch::Tensor interpolate(const torch::Tensor& real, const torch::Tensor& fake, std::optional<at::Generator> generator) {
  require(real.sizes() == fake.sizes(), "dim_mismatch", "real and fake batches differ in shape");
  require(real.dim() >= 2 && real.size(0) >= 1, "dim_mismatch", "gradient penalty needs a batch");
  std::vector<int64_t> shape(real.dim(), 1);
  shape[0] = real.size(0);
  auto u = torch::rand(shape, generator, real.options());
  return (u * real.detach() + (1.0 - u) * fake.detach()).requires_grad_(true);
}

torch::Tensor grad_norms(const CriticFn& critic, const torch::Tensor& x, bool create_graph) {
  auto out = critic(x);
  if (!out.requires_grad()) return torch::zeros({x.size(0)}, x.options());
  auto grads = torch::autograd::grad({out.sum()}, {x}, {}, /*retain_graph=*/true, create_graph, /*allow_unused=*/true);
  // A critic that ignores its input has no graph to x: the gradient is zero.
  auto g = grads[0].defined() ? grads[0] : torch::zeros_like(x);
  return g.reshape({x.size(0), -1}).norm(2, 1);
}

}  // namespace

torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& real, const torch::Tensor& fake,
                               double lambda, std::optional<at::Generator> generator) {
  auto x = interpolate(real, fake, generator);
  auto norms = grad_norms(critic, x, true);
  return lambda * (norms - 1.0).square().mean();
}

double interpolate_grad_norm(const CriticFn& critic, const torch::Tensor& real, const torch::Tensor& fake) {
  auto x = interpolate(real, fake, std::nullopt);
  return grad_norms(critic, x, false).mean().item<double>();
}

namespace {

torch::Tensor generate_batch(MMVAD& model, Modality modality, const torch::Tensor& codes, const torch::Tensor& views,
                             int64_t shape_dim) {
  auto z = JointLatentCode::split(codes, shape_dim);
  if (modality == Modality::Sketch) return torch::sigmoid(model->sketch->forward(z.shape, views));
  return model->render->forward(z.shape, z.color, views);
}

}  // namespace

Adaptation adapt(MMVAD& model, const std::vector<torch::Tensor>& examples, Modality modality,
                 const std::vector<Viewpoint>& views, const AdaptConfig& config) {
  require(!examples.empty(), "empty_examples", "few-shot adaptation needs at least one example image");
  require(modality != Modality::Shape3D, "unknown_modality", "adaptation needs a 2D generator modality");
  require(!views.empty(), "invalid_config", "adaptation needs at least one view");
  require(config.steps >= 0 && config.critic_steps >= 1 && config.batch >= 2, "invalid_config",
          "adaptation needs critic_steps >= 1 and batch >= 2");
  const auto& mc = model->config();
  const int64_t channels = modality == Modality::Sketch ? 1 : 3;
  for (const auto& e : examples) {
    require(e.dim() == 3 && e.size(0) == channels && e.size(1) == mc.resolution && e.size(2) == mc.resolution,
            "dim_mismatch", "example images must match the generator output shape");
  }
  auto real_all = torch::stack(examples).to(torch::kFloat32);
  auto view_table = encode_views(views);

  model->eval();
  const std::string before = state_hash(*model);

  torch::manual_seed(config.seed);
  auto gen = make_generator(mix_seed(config.seed, 1));
  Adaptation out;
  out.modality = modality;
  out.config = config;
  out.base_hash = before;
  out.mapping = MappingNet(mc.dims.total(), config.hidden);
  out.critic = Critic(channels, mc.resolution, config.critic_width);
  const auto betas = std::make_tuple(0.5, 0.9);
  torch::optim::Adam opt_h(out.mapping->parameters(), torch::optim::AdamOptions(config.lr_mapping).betas(betas));
  torch::optim::Adam opt_d(out.critic->parameters(), torch::optim::AdamOptions(config.lr_critic).betas(betas));
  auto critic_fn = [&](const torch::Tensor& x) { return out.critic->forward(x); };

  const int64_t b = config.batch;
  auto fake_batch = [&](bool with_graph) {
    auto z = torch::randn({b, mc.dims.total()}, gen);
    auto v = view_table.index_select(0, torch::randint(static_cast<int64_t>(views.size()), {b}, gen));
    if (!with_graph) {
      torch::NoGradGuard no_grad;
      return generate_batch(model, modality, out.mapping->forward(z), v, mc.dims.shape);
    }
    return generate_batch(model, modality, out.mapping->forward(z), v, mc.dims.shape);
  };
  auto real_batch = [&]() {
    return real_all.index_select(0, torch::randint(real_all.size(0), {b}, gen));
  };

  out.mapping->train();
  for (int step = 0; step < config.steps; ++step) {
    AdaptLog log;
    log.step = step;
    for (int k = 0; k < config.critic_steps; ++k) {
      auto real = real_batch();
      auto fake = fake_batch(false).detach();
      auto penalty = gradient_penalty(critic_fn, real, fake, config.lambda_gp, gen);
      auto loss = out.critic->forward(fake).mean() - out.critic->forward(real).mean() + penalty;
      opt_d.zero_grad();
      loss.backward();
      opt_d.step();
      log.critic_loss = loss.item<double>();
      log.penalty = penalty.item<double>();
    }
    auto fake = fake_batch(true);
    auto loss = -out.critic->forward(fake).mean();
    if (!std::isfinite(loss.item<double>())) fail("non_finite_loss", "mapping loss is non-finite at step " + std::to_string(step));
    // Only the mapping parameters receive gradients; generators and critic are untouched.
    auto params = out.mapping->parameters();
    auto grads = torch::autograd::grad({loss}, params, {}, false, false, true);
    for (size_t i = 0; i < params.size(); ++i) {
      params[i].mutable_grad() = grads[i].defined() ? grads[i] : torch::zeros_like(params[i]);
    }
    opt_h.step();
    log.mapping_loss = loss.item<double>();
    if (config.log_every > 0 && (step % config.log_every == 0 || step + 1 == config.steps)) {
      log.grad_norm = interpolate_grad_norm(critic_fn, real_batch(), fake_batch(false));
      out.history.push_back(log);
    }
  }
  out.mapping->eval();
  out.critic->eval();
  require(state_hash(*model) == before, "generator_modified", "generator parameters changed during adaptation");
  return out;
}

std::vector<JointLatentCode> sample_adapted(MappingNet& mapping, int64_t n, uint64_t seed, const LatentDims& dims) {
  require(n >= 0, "invalid_config", "sample count must be non-negative");
  require(dims.total() == mapping->dim(), "dim_mismatch", "mapping dimension differs from latent dimension");
  std::vector<JointLatentCode> codes;
  if (n == 0) return codes;
  torch::NoGradGuard no_grad;
  mapping->eval();
  auto gen = make_generator(seed);
  auto z = torch::randn({n, dims.total()}, gen);
  auto mapped = mapping->forward(z);
  for (int64_t i = 0; i < n; ++i) codes.push_back(JointLatentCode::split(mapped[i].clone(), dims.shape));
  return codes;
}

void save_adaptation(const Adaptation& a, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_tensor_blob(dir / "mapping.bin", module_state(*a.mapping));
  json manifest;
  manifest["format"] = "shapeforge-mapping";
  manifest["schema_version"] = kMappingSchemaVersion;
  manifest["base_hash"] = a.base_hash;
  manifest["modality"] = modality_name(a.modality);
  manifest["dim"] = a.mapping->dim();
  manifest["hidden"] = a.mapping->hidden();
  manifest["config"] = {{"steps", a.config.steps},         {"critic_steps", a.config.critic_steps},
                        {"lambda_gp", a.config.lambda_gp}, {"lr_mapping", a.config.lr_mapping},
                        {"lr_critic", a.config.lr_critic}, {"batch", a.config.batch},
                        {"critic_width", a.config.critic_width}, {"seed", a.config.seed}};
  json history = json::array();
  for (const auto& h : a.history) {
    history.push_back({{"step", h.step},
                       {"critic_loss", h.critic_loss},
                       {"mapping_loss", h.mapping_loss},
                       {"penalty", h.penalty},
                       {"grad_norm", h.grad_norm}});
  }
  manifest["history"] = history;
  atomic_write_text(dir / "manifest.json", manifest.dump(1));
}

Adaptation load_adaptation(const std::filesystem::path& dir, const std::string& expected_base_hash) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail("io_error", "no mapping manifest in " + dir.string());
  Adaptation a;
  try {
    auto manifest = json::parse(in);
    if (manifest.at("format") != "shapeforge-mapping" || manifest.at("schema_version") != kMappingSchemaVersion) {
      fail("schema_mismatch", "unsupported mapping archive in " + dir.string());
    }
    a.base_hash = manifest.at("base_hash");
    a.modality = parse_modality(manifest.at("modality"));
    a.mapping = MappingNet(manifest.at("dim").get<int64_t>(), manifest.at("hidden").get<int64_t>());
    const auto& c = manifest.at("config");
    a.config.steps = c.at("steps");
    a.config.critic_steps = c.at("critic_steps");
    a.config.lambda_gp = c.at("lambda_gp");
    a.config.lr_mapping = c.at("lr_mapping");
    a.config.lr_critic = c.at("lr_critic");
    a.config.batch = c.at("batch");
    a.config.critic_width = c.at("critic_width");
    a.config.seed = c.at("seed");
    for (const auto& h : manifest.at("history")) {
      a.history.push_back({h.at("step"), h.at("critic_loss"), h.at("mapping_loss"), h.at("penalty"), h.at("grad_norm")});
    }
  } catch (const json::exception& e) {
    fail("corrupt_manifest", std::string("mapping manifest: ") + e.what());
  }
  if (!expected_base_hash.empty() && a.base_hash != expected_base_hash) {
    fail("base_mismatch", "mapping was trained against a different model");
  }
  load_module_state(*a.mapping, read_tensor_blob(dir / "mapping.bin"), "mapping");
  a.mapping->eval();
  return a;
}

}  // namespace shapeforge
