#include "coverpose/cycaug.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "coverpose/errors.hpp"
#include "coverpose/tensor_util.hpp"

namespace coverpose {

namespace nn = torch::nn;

std::string_view to_string(TranslationDirection d) {
  return d == TranslationDirection::kUncoverToCover ? "uncover_to_cover" : "cover_to_uncover";
}

std::string_view to_string(CoverType c) { return c == CoverType::kThin ? "thin" : "thick"; }

std::string_view to_string(AdversarialMode m) { return m == AdversarialMode::kLog ? "log" : "least_squares"; }

CoverType cover_type_from_string(std::string_view s) {
  if (s == "thin") return CoverType::kThin;
  if (s == "thick") return CoverType::kThick;
  throw std::invalid_argument("unknown cover type: " + std::string(s));
}

AdversarialMode adversarial_mode_from_string(std::string_view s) {
  if (s == "log") return AdversarialMode::kLog;
  if (s == "least_squares") return AdversarialMode::kLeastSquares;
  throw std::invalid_argument("unknown adversarial mode: " + std::string(s));
}

namespace {

void init_weights(nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& child : module.modules(/*include_self=*/false)) {
    if (auto* conv = child->as<nn::Conv2d>()) {
      nn::init::normal_(conv->weight, 0.0, 0.02);
      if (conv->bias.defined()) nn::init::zeros_(conv->bias);
    } else if (auto* deconv = child->as<nn::ConvTranspose2d>()) {
      nn::init::normal_(deconv->weight, 0.0, 0.02);
      if (deconv->bias.defined()) nn::init::zeros_(deconv->bias);
    }
  }
}

nn::Conv2d conv(int in, int out, int kernel, int stride = 1, int padding = 0) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

class ResnetBlockImpl : public nn::Module {
 public:
  explicit ResnetBlockImpl(int channels) {
    body_ = register_module("body", nn::Sequential(nn::ReflectionPad2d(1), conv(channels, channels, 3),
                                                   nn::InstanceNorm2d(channels), nn::ReLU(),
                                                   nn::ReflectionPad2d(1), conv(channels, channels, 3),
                                                   nn::InstanceNorm2d(channels)));
  }

  torch::Tensor forward(torch::Tensor x) { return x + body_->forward(x); }

 private:
  nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResnetBlock);

}  // namespace

GeneratorNetImpl::GeneratorNetImpl(GeneratorConfig cfg, TranslationDirection direction, CoverType target,
                                   Dims train_dims)
    : cfg_(cfg), direction_(direction), target_(target), train_dims_(train_dims) {
  if (cfg.base_channels < 1 || cfg.residual_blocks < 0) {
    throw std::invalid_argument("GeneratorConfig: channels must be >= 1 and blocks >= 0");
  }
  if (!train_dims.positive() || train_dims.height % 4 != 0 || train_dims.width % 4 != 0) {
    throw std::invalid_argument("generator: image dims must be positive multiples of 4");
  }
  const int c = cfg.base_channels;
  nn::Sequential seq;
  seq->push_back(nn::ReflectionPad2d(3));
  seq->push_back(conv(1, c, 7));
  seq->push_back(nn::InstanceNorm2d(c));
  seq->push_back(nn::ReLU());
  seq->push_back(conv(c, 2 * c, 3, 2, 1));
  seq->push_back(nn::InstanceNorm2d(2 * c));
  seq->push_back(nn::ReLU());
  seq->push_back(conv(2 * c, 4 * c, 3, 2, 1));
  seq->push_back(nn::InstanceNorm2d(4 * c));
  seq->push_back(nn::ReLU());
  for (int i = 0; i < cfg.residual_blocks; ++i) seq->push_back(ResnetBlock(4 * c));
  seq->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(4 * c, 2 * c, 3).stride(2).padding(1).output_padding(1)));
  seq->push_back(nn::InstanceNorm2d(2 * c));
  seq->push_back(nn::ReLU());
  seq->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(2 * c, c, 3).stride(2).padding(1).output_padding(1)));
  seq->push_back(nn::InstanceNorm2d(c));
  seq->push_back(nn::ReLU());
  seq->push_back(nn::ReflectionPad2d(3));
  seq->push_back(conv(c, 1, 7));
  seq->push_back(nn::Tanh());
  body_ = register_module("body", seq);
  init_weights(*this);
}

torch::Tensor GeneratorNetImpl::forward(torch::Tensor x) {
  // [0, 1] <-> [-1, 1] around the tanh output.
  return (body_->forward(x * 2.0 - 1.0) + 1.0) * 0.5;
}

nlohmann::json GeneratorNetImpl::architecture() const {
  return {{"net", "generator"},
          {"base_channels", cfg_.base_channels},
          {"residual_blocks", cfg_.residual_blocks},
          {"direction", to_string(direction_)},
          {"target_domain", to_string(target_)},
          {"train_dims", {train_dims_.height, train_dims_.width}}};
}

DiscriminatorNetImpl::DiscriminatorNetImpl(DiscriminatorConfig cfg, JudgedDomain judged)
    : cfg_(cfg), judged_(judged) {
  if (cfg.base_channels < 1) throw std::invalid_argument("DiscriminatorConfig: channels must be >= 1");
  const int c = cfg.base_channels;
  auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
  nn::Sequential seq;
  seq->push_back(conv(1, c, 4, 2, 1));
  seq->push_back(lrelu());
  seq->push_back(conv(c, 2 * c, 4, 2, 1));
  seq->push_back(nn::InstanceNorm2d(2 * c));
  seq->push_back(lrelu());
  seq->push_back(conv(2 * c, 4 * c, 4, 2, 1));
  seq->push_back(nn::InstanceNorm2d(4 * c));
  seq->push_back(lrelu());
  seq->push_back(conv(4 * c, 8 * c, 4, 1, 1));
  seq->push_back(nn::InstanceNorm2d(8 * c));
  seq->push_back(lrelu());
  seq->push_back(conv(8 * c, 1, 4, 1, 1));
  body_ = register_module("body", seq);
  init_weights(*this);
}

torch::Tensor DiscriminatorNetImpl::forward(torch::Tensor x) { return body_->forward(x * 2.0 - 1.0); }

nlohmann::json DiscriminatorNetImpl::architecture() const {
  return {{"net", "discriminator"},
          {"base_channels", cfg_.base_channels},
          {"judged_domain", judged_ == JudgedDomain::kUncovered ? "uncovered" : "covered"}};
}

namespace {

torch::Tensor generator_adversarial(const torch::Tensor& fake_scores, AdversarialMode mode) {
  if (mode == AdversarialMode::kLeastSquares) return (fake_scores - 1.0).pow(2).mean();
  // -log(sigmoid(s)) = softplus(-s)
  return torch::softplus(-fake_scores).mean();
}

torch::Tensor discriminator_adversarial(const torch::Tensor& real_scores, const torch::Tensor& fake_scores,
                                        AdversarialMode mode) {
  if (mode == AdversarialMode::kLeastSquares) {
    return (real_scores - 1.0).pow(2).mean() + fake_scores.pow(2).mean();
  }
  // -[log D(real) + log(1 - D(fake))]
  return torch::softplus(-real_scores).mean() + torch::softplus(fake_scores).mean();
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
}

}  // namespace

AdversarialLosses adversarial_terms(const torch::Tensor& real_scores, const torch::Tensor& fake_scores,
                                    AdversarialMode mode) {
  if (real_scores.numel() == 0 || fake_scores.numel() == 0) {
    throw std::invalid_argument("adversarial_terms: empty score batch");
  }
  return {generator_adversarial(fake_scores, mode), discriminator_adversarial(real_scores, fake_scores, mode)};
}

AdversarialLosses adversarial_loss(GeneratorNet& gen, DiscriminatorNet& disc, const torch::Tensor& real_batch,
                                   const torch::Tensor& fake_source_batch, AdversarialMode mode) {
  if (real_batch.numel() == 0 || fake_source_batch.numel() == 0) {
    throw std::invalid_argument("adversarial_loss: empty batch");
  }
  require_same_shape(real_batch, fake_source_batch, "adversarial_loss");
  torch::Tensor fake = gen->forward(fake_source_batch);
  return adversarial_terms(disc->forward(real_batch), disc->forward(fake), mode);
}

torch::Tensor cycle_loss(const torch::Tensor& fgx, const torch::Tensor& x, const torch::Tensor& gfy,
                         const torch::Tensor& y) {
  require_same_shape(fgx, x, "cycle_loss");
  require_same_shape(gfy, y, "cycle_loss");
  return (fgx - x).abs().mean() + (gfy - y).abs().mean();
}

torch::Tensor identity_loss(const torch::Tensor& gy, const torch::Tensor& y, const torch::Tensor& fx,
                            const torch::Tensor& x) {
  require_same_shape(gy, y, "identity_loss");
  require_same_shape(fx, x, "identity_loss");
  return (gy - y).abs().mean() + (fx - x).abs().mean();
}

namespace {

void check_weights(double lambda_cyc, double lambda_id) {
  if (lambda_cyc < 0.0 || lambda_id < 0.0) throw std::invalid_argument("total_loss: weights must be >= 0");
}

}  // namespace

torch::Tensor total_loss(const CycleGanLossTerms<torch::Tensor>& terms, double lambda_cyc, double lambda_id) {
  check_weights(lambda_cyc, lambda_id);
  return terms.gan_g + terms.gan_f + lambda_cyc * terms.cycle + lambda_id * terms.identity;
}

double total_loss(const CycleGanLossTerms<double>& terms, double lambda_cyc, double lambda_id) {
  check_weights(lambda_cyc, lambda_id);
  return terms.gan_g + terms.gan_f + lambda_cyc * terms.cycle + lambda_id * terms.identity;
}

void CycAugTrainConfig::validate() const {
  if (lambda_cyc < 0.0 || lambda_id < 0.0) throw std::invalid_argument("CycAugTrainConfig: lambdas must be >= 0");
  if (iterations < 1) throw std::invalid_argument("CycAugTrainConfig: iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("CycAugTrainConfig: batch size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("CycAugTrainConfig: learning rate must be positive");
  if (pool_size < 0) throw std::invalid_argument("CycAugTrainConfig: pool size must be >= 0");
}

void to_json(nlohmann::json& j, const CycAugTrainConfig& cfg) {
  j = {{"lambda_cyc", cfg.lambda_cyc},
       {"lambda_id", cfg.lambda_id},
       {"adversarial_mode", to_string(cfg.adversarial_mode)},
       {"iterations", cfg.iterations},
       {"batch_size", cfg.batch_size},
       {"lr", cfg.lr},
       {"beta1", cfg.beta1},
       {"beta2", cfg.beta2},
       {"pool_size", cfg.pool_size},
       {"seed", cfg.seed},
       {"generator_channels", cfg.generator.base_channels},
       {"residual_blocks", cfg.generator.residual_blocks},
       {"discriminator_channels", cfg.discriminator.base_channels}};
}

void from_json(const nlohmann::json& j, CycAugTrainConfig& cfg) {
  cfg.lambda_cyc = j.value("lambda_cyc", cfg.lambda_cyc);
  cfg.lambda_id = j.value("lambda_id", cfg.lambda_id);
  if (j.contains("adversarial_mode")) {
    cfg.adversarial_mode = adversarial_mode_from_string(j.at("adversarial_mode").get<std::string>());
  }
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.pool_size = j.value("pool_size", cfg.pool_size);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.generator.base_channels = j.value("generator_channels", cfg.generator.base_channels);
  cfg.generator.residual_blocks = j.value("residual_blocks", cfg.generator.residual_blocks);
  cfg.discriminator.base_channels = j.value("discriminator_channels", cfg.discriminator.base_channels);
}

ImagePool::ImagePool(int capacity, std::uint64_t seed) : capacity_(capacity), rng_(substream(seed, 0x9001)) {}

torch::Tensor ImagePool::query(const torch::Tensor& images) {
  if (capacity_ == 0) return images;
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<std::size_t>(images.size(0)));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int64_t i = 0; i < images.size(0); ++i) {
    torch::Tensor img = images[i].detach().clone();
    if (static_cast<int>(images_.size()) < capacity_) {
      images_.push_back(img);
      out.push_back(img);
    } else if (coin(rng_) < 0.5) {
      std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
      const std::size_t k = pick(rng_);
      out.push_back(images_[k]);
      images_[k] = img;
    } else {
      out.push_back(img);
    }
  }
  return torch::stack(out, 0);
}

namespace {

torch::Tensor draw_batch(const torch::Tensor& pool, int batch, Rng& rng) {
  std::uniform_int_distribution<int64_t> pick(0, pool.size(0) - 1);
  std::vector<int64_t> idx(static_cast<std::size_t>(batch));
  for (auto& i : idx) i = pick(rng);
  return pool.index_select(0, torch::tensor(idx, torch::kInt64));
}

Dims common_dims(std::span<const ThermalImage> a, std::span<const ThermalImage> b) {
  const Dims d = a.front().dims();
  auto same = [&](const ThermalImage& img) { return img.dims() == d; };
  if (!std::all_of(a.begin(), a.end(), same) || !std::all_of(b.begin(), b.end(), same)) {
    throw std::invalid_argument("train_cyclegan: all images must share one size");
  }
  return d;
}

}  // namespace

CycAugResult train_cyclegan(std::span<const ThermalImage> source, std::span<const ThermalImage> target,
                            const CycAugTrainConfig& cfg, CoverType cover, const CycAugProgress& progress) {
  if (source.empty() || target.empty()) throw std::invalid_argument("train_cyclegan: empty dataset");
  cfg.validate();
  const Dims dims = common_dims(source, target);

  torch::manual_seed(cfg.seed);
  Rng rng = substream(cfg.seed, 0x5eed);

  CycAugResult result;
  result.g = GeneratorNet(cfg.generator, TranslationDirection::kUncoverToCover, cover, dims);
  result.f = GeneratorNet(cfg.generator, TranslationDirection::kCoverToUncover, cover, dims);
  result.d_x = DiscriminatorNet(cfg.discriminator, JudgedDomain::kUncovered);
  result.d_y = DiscriminatorNet(cfg.discriminator, JudgedDomain::kCovered);
  auto& g = result.g;
  auto& f = result.f;
  auto& d_x = result.d_x;
  auto& d_y = result.d_y;

  std::vector<torch::Tensor> gen_params = g->parameters();
  for (auto& p : f->parameters()) gen_params.push_back(p);
  std::vector<torch::Tensor> disc_params = d_x->parameters();
  for (auto& p : d_y->parameters()) disc_params.push_back(p);
  const auto adam = torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2});
  torch::optim::Adam opt_g(gen_params, adam);
  torch::optim::Adam opt_d(disc_params, adam);

  ImagePool pool_x(cfg.pool_size, cfg.seed ^ 0x1);
  ImagePool pool_y(cfg.pool_size, cfg.seed ^ 0x2);

  const torch::Tensor xs = images_to_tensor(source);
  const torch::Tensor ys = images_to_tensor(target);
  const auto larger = static_cast<int>(std::max(xs.size(0), ys.size(0)));
  const int iters_per_epoch = std::max(1, (larger + cfg.batch_size - 1) / cfg.batch_size);

  g->train();
  f->train();
  d_x->train();
  d_y->train();

  auto write_checkpoint = [&](int iteration) {
    if (cfg.checkpoint_dir.empty()) return;
    save_generator(g, cfg.checkpoint_dir / "G.bin", iteration, cfg.seed);
    save_generator(f, cfg.checkpoint_dir / "F.bin", iteration, cfg.seed);
    result.last_checkpoint = cfg.checkpoint_dir / "G.bin";
  };

  for (int it = 1; it <= cfg.iterations; ++it) {
    const torch::Tensor x = draw_batch(xs, cfg.batch_size, rng);
    const torch::Tensor y = draw_batch(ys, cfg.batch_size, rng);

    // Generators.
    const torch::Tensor fake_y = g->forward(x);
    const torch::Tensor rec_x = f->forward(fake_y);
    const torch::Tensor fake_x = f->forward(y);
    const torch::Tensor rec_y = g->forward(fake_x);

    CycleGanLossTerms<torch::Tensor> terms;
    terms.gan_g = generator_adversarial(d_y->forward(fake_y), cfg.adversarial_mode);
    terms.gan_f = generator_adversarial(d_x->forward(fake_x), cfg.adversarial_mode);
    terms.cycle = cycle_loss(rec_x, x, rec_y, y);
    if (cfg.lambda_id > 0.0) {
      terms.identity = identity_loss(g->forward(y), y, f->forward(x), x);
    } else {
      terms.identity = torch::zeros({}, x.options());
    }
    const torch::Tensor loss = total_loss(terms, cfg.lambda_cyc, cfg.lambda_id);
    const double loss_value = loss.item<double>();
    if (!std::isfinite(loss_value)) {
      throw TrainingFailureError("train_cyclegan: non-finite loss at iteration " + std::to_string(it),
                                 result.last_checkpoint.string());
    }
    opt_g.zero_grad();
    loss.backward();
    opt_g.step();

    // Discriminators, on replayed fakes.
    const torch::Tensor replay_y = pool_y.query(fake_y.detach());
    const torch::Tensor replay_x = pool_x.query(fake_x.detach());
    const torch::Tensor loss_dy =
        discriminator_adversarial(d_y->forward(y), d_y->forward(replay_y), cfg.adversarial_mode);
    const torch::Tensor loss_dx =
        discriminator_adversarial(d_x->forward(x), d_x->forward(replay_x), cfg.adversarial_mode);
    const torch::Tensor loss_d = 0.5 * (loss_dx + loss_dy);
    if (!std::isfinite(loss_d.item<double>())) {
      throw TrainingFailureError("train_cyclegan: non-finite discriminator loss at iteration " +
                                     std::to_string(it),
                                 result.last_checkpoint.string());
    }
    opt_d.zero_grad();
    loss_d.backward();
    opt_d.step();

    CycAugLossRecord rec;
    rec.iteration = it;
    rec.gan_g = terms.gan_g.item<double>();
    rec.gan_f = terms.gan_f.item<double>();
    rec.cycle = terms.cycle.item<double>();
    rec.identity = terms.identity.item<double>();
    rec.total = loss_value;
    rec.disc_x = loss_dx.item<double>();
    rec.disc_y = loss_dy.item<double>();
    result.history.push_back(rec);
    if (progress) progress(rec);

    if (it % iters_per_epoch == 0 || it == cfg.iterations) write_checkpoint(it);
  }

  g->eval();
  f->eval();
  d_x->eval();
  d_y->eval();
  return result;
}

std::vector<ThermalImage> translate(GeneratorNet& gen, std::span<const ThermalImage> images) {
  for (const ThermalImage& img : images) {
    if (img.dims() != gen->train_dims()) {
      throw std::invalid_argument("translate: image size differs from the generator's training size");
    }
  }
  torch::NoGradGuard no_grad;
  gen->eval();
  std::vector<ThermalImage> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 8;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    for (ThermalImage& img : tensor_to_images(gen->forward(images_to_tensor(chunk)))) {
      out.push_back(std::move(img));
    }
  }
  return out;
}

std::vector<Sample> translate_samples(GeneratorNet& gen, std::span<const Sample> samples, DomainTag out_domain) {
  std::vector<ThermalImage> images;
  images.reserve(samples.size());
  for (const Sample& s : samples) images.push_back(s.image);
  std::vector<ThermalImage> translated = translate(gen, images);
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Sample s = samples[i];
    s.image = std::move(translated[i]);
    s.domain = out_domain;
    out.push_back(std::move(s));
  }
  return out;
}

void save_generator(const GeneratorNet& gen, const std::filesystem::path& path, int iteration, std::uint64_t seed) {
  CheckpointMeta meta;
  meta.kind = "generator";
  meta.architecture = gen->architecture();
  meta.config_hash = config_hash(meta.architecture);
  meta.iteration = iteration;
  meta.seed = seed;
  meta.extra = {{"direction", to_string(gen->direction())}, {"target_domain", to_string(gen->target_domain())}};
  save_checkpoint(*gen, meta, path);
}

GeneratorNet load_generator(const std::filesystem::path& path, CheckpointMeta* meta_out) {
  const CheckpointMeta meta = read_checkpoint_meta(path);
  if (meta.kind != "generator") {
    throw CheckpointIncompatibleError("checkpoint " + path.string() + " is not a generator checkpoint");
  }
  const auto& arch = meta.architecture;
  GeneratorConfig cfg;
  TranslationDirection direction{};
  CoverType cover{};
  Dims dims{};
  try {
    cfg.base_channels = arch.at("base_channels").get<int>();
    cfg.residual_blocks = arch.at("residual_blocks").get<int>();
    direction = arch.at("direction").get<std::string>() == "uncover_to_cover" ? TranslationDirection::kUncoverToCover
                                                                              : TranslationDirection::kCoverToUncover;
    cover = cover_type_from_string(arch.at("target_domain").get<std::string>());
    dims = {arch.at("train_dims").at(0).get<int>(), arch.at("train_dims").at(1).get<int>()};
  } catch (const std::exception& e) {
    throw CheckpointIncompatibleError("checkpoint " + path.string() + ": bad architecture record: " + e.what());
  }
  GeneratorNet gen(cfg, direction, cover, dims);
  CheckpointMeta loaded = load_checkpoint(path, *gen, config_hash(gen->architecture()));
  gen->eval();
  if (meta_out != nullptr) *meta_out = loaded;
  return gen;
}

}  // namespace coverpose
