#include "prelude.hpp"

#include <algorithm>
#include <cmath>

#include "coverpose/cycaug.hpp"
#include "coverpose/data_io.hpp"
#include "coverpose/errors.hpp"
#include "coverpose/tensor_util.hpp"
#include "support.hpp"

using namespace coverpose;
using namespace coverpose::testing;

namespace {

torch::Tensor full(double v, std::vector<int64_t> shape = {2, 1, 4, 4}) {
  return torch::full(shape, v, torch::kFloat64);
}

std::vector<ThermalImage> phantom_images(int n, CoverSimulation cover, std::uint64_t seed, Dims dims) {
  PhantomConfig pc;
  pc.image_dims = dims;
  pc.limb_width = 2.0;
  std::vector<ThermalImage> out;
  for (int i = 0; i < n; ++i) {
    Rng rng = substream(seed, static_cast<std::uint64_t>(i));
    out.push_back(render_phantom(sample_pose(rng, dims), pc, cover, rng).image);
  }
  return out;
}

// 1-D Wasserstein distance between the per-image mean intensities of two
// equally sized sets.
double mean_intensity_distance(const std::vector<ThermalImage>& a, const std::vector<ThermalImage>& b) {
  std::vector<double> ma, mb;
  for (const auto& i : a) ma.push_back(i.mean());
  for (const auto& i : b) mb.push_back(i.mean());
  std::sort(ma.begin(), ma.end());
  std::sort(mb.begin(), mb.end());
  double d = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) d += std::abs(ma[i] - mb[i]);
  return d / static_cast<double>(ma.size());
}

}  // namespace

TEST_CASE("least-squares adversarial terms") {
  const auto perfect = adversarial_terms(full(1.0), full(0.0), AdversarialMode::kLeastSquares);
  CHECK(perfect.discriminator.item<double>() == 0.0);
  const auto half = adversarial_terms(full(0.5), full(0.5), AdversarialMode::kLeastSquares);
  CHECK(half.discriminator.item<double>() == doctest::Approx(0.25 + 0.25));
  CHECK(half.generator.item<double>() == doctest::Approx(0.25));
}

TEST_CASE("log adversarial terms read scores as logits") {
  // D(fake) = 0.5 is a logit of 0.
  const auto t = adversarial_terms(full(0.0), full(0.0), AdversarialMode::kLog);
  CHECK(t.generator.item<double>() == doctest::Approx(-std::log(0.5)));
  CHECK(t.discriminator.item<double>() == doctest::Approx(-2.0 * std::log(0.5)));
  CHECK_THROWS_AS(adversarial_terms(torch::zeros({0}), full(0.0), AdversarialMode::kLog), std::invalid_argument);
}

TEST_CASE("cycle loss") {
  torch::manual_seed(1);
  const auto x = torch::rand({2, 1, 6, 5}, torch::kFloat64);
  const auto y = torch::rand({2, 1, 6, 5}, torch::kFloat64);
  CHECK(cycle_loss(x, x, y, y).item<double>() == 0.0);
  CHECK(cycle_loss(x + 0.5, x, y, y).item<double>() == doctest::Approx(0.5));
  const auto a = torch::rand({2, 1, 6, 5}, torch::kFloat64);
  const auto b = torch::rand({2, 1, 6, 5}, torch::kFloat64);
  CHECK(cycle_loss(a, x, b, y).item<double>() >= 0.0);
  CHECK(cycle_loss(a, x, b, y).item<double>() == doctest::Approx(cycle_loss(b, y, a, x).item<double>()));
  CHECK_THROWS_AS(cycle_loss(x, y.narrow(2, 0, 3), y, y), std::invalid_argument);
}

TEST_CASE("identity loss") {
  torch::manual_seed(2);
  const auto x = torch::rand({1, 1, 8, 8}, torch::kFloat64);
  const auto y = torch::rand({1, 1, 8, 8}, torch::kFloat64);
  CHECK(identity_loss(y, y, x, x).item<double>() == 0.0);
  CHECK(identity_loss(y + 0.2, y, x, x).item<double>() == doctest::Approx(0.2));
  const auto dy = torch::randn({1, 1, 8, 8}, torch::kFloat64);
  const auto dx = torch::randn({1, 1, 8, 8}, torch::kFloat64);
  const double base = identity_loss(y + dy, y, x + dx, x).item<double>();
  CHECK(identity_loss(y + 3.0 * dy, y, x + 3.0 * dx, x).item<double>() == doctest::Approx(3.0 * base));
  CHECK(identity_loss(x + dx, x, y + dy, y).item<double>() == doctest::Approx(base));
  CHECK_THROWS_AS(identity_loss(y, x.narrow(3, 0, 2), x, x), std::invalid_argument);
}

TEST_CASE("total loss weighting") {
  CHECK(total_loss(CycleGanLossTerms<double>{0.5, 0.5, 0.1, 0.02}, 10.0, 5.0) == doctest::Approx(2.1));
  CHECK(total_loss(CycleGanLossTerms<double>{0, 0, 0, 0}, 10.0, 5.0) == 0.0);
  CHECK(total_loss(CycleGanLossTerms<double>{0.3, 0.4, 0.7, 0.9}, 0.0, 0.0) == doctest::Approx(0.7));
  CHECK_THROWS_AS(total_loss(CycleGanLossTerms<double>{0, 0, 0, 0}, -1.0, 5.0), std::invalid_argument);
  const CycleGanLossTerms<torch::Tensor> t{full(0.5, {}), full(0.5, {}), full(0.1, {}), full(0.02, {})};
  CHECK(total_loss(t, 10.0, 5.0).item<double>() == doctest::Approx(2.1));
  // Linear in each component.
  const double a = total_loss(CycleGanLossTerms<double>{0.1, 0.2, 0.3, 0.4}, 10.0, 5.0);
  const double b = total_loss(CycleGanLossTerms<double>{0.1, 0.2, 0.8, 0.4}, 10.0, 5.0);
  CHECK(b - a == doctest::Approx(10.0 * 0.5));
}

TEST_CASE("cycle and identity gradients match finite differences") {
  auto g = toy_conv_net(1, 2, 1, 11);
  auto f = toy_conv_net(1, 2, 1, 12);
  REQUIRE(count_params(*g) + count_params(*f) <= 200);
  torch::manual_seed(13);
  const auto x = torch::rand({2, 1, 5, 5}, torch::kFloat64);
  const auto y = torch::rand({2, 1, 5, 5}, torch::kFloat64);
  std::vector<torch::Tensor> params = g->parameters();
  for (const auto& p : f->parameters()) params.push_back(p);

  const double cyc = gradient_check([&] { return cycle_loss(f->forward(g->forward(x)), x, g->forward(f->forward(y)), y); },
                                    params);
  CHECK(cyc < 1e-4);
  const double idt = gradient_check([&] { return identity_loss(g->forward(y), y, f->forward(x), x); }, params);
  CHECK(idt < 1e-4);
}

TEST_CASE("total loss gradient matches finite differences") {
  auto g = toy_conv_net(1, 2, 1, 21);
  auto f = toy_conv_net(1, 2, 1, 22);
  auto dx = toy_conv_net(1, 2, 1, 23);
  auto dy = toy_conv_net(1, 2, 1, 24);
  std::vector<torch::Tensor> params;
  for (auto* m : {&g, &f, &dx, &dy}) {
    for (const auto& p : (*m)->parameters()) params.push_back(p);
  }
  std::int64_t n = 0;
  for (const auto& p : params) n += p.numel();
  REQUIRE(n <= 200);
  torch::manual_seed(25);
  const auto x = torch::rand({1, 1, 5, 5}, torch::kFloat64);
  const auto y = torch::rand({1, 1, 5, 5}, torch::kFloat64);

  for (AdversarialMode mode : {AdversarialMode::kLeastSquares, AdversarialMode::kLog}) {
    auto loss = [&] {
      const auto gx = g->forward(x);
      const auto fy = f->forward(y);
      CycleGanLossTerms<torch::Tensor> t{
          adversarial_terms(dy->forward(y), dy->forward(gx), mode).generator,
          adversarial_terms(dx->forward(x), dx->forward(fy), mode).generator,
          cycle_loss(f->forward(gx), x, g->forward(fy), y),
          identity_loss(g->forward(y), y, f->forward(x), x),
      };
      return total_loss(t, 10.0, 5.0);
    };
    CHECK(gradient_check(loss, params) < 1e-4);
  }
}

TEST_CASE("generator keeps image size and range") {
  GeneratorNet gen(GeneratorConfig{8, 2}, TranslationDirection::kUncoverToCover, CoverType::kThin, Dims{160, 120});
  torch::manual_seed(3);
  const auto x = torch::rand({2, 1, 160, 120});
  const auto y = gen->forward(x);
  CHECK(y.sizes() == x.sizes());

  std::vector<ThermalImage> imgs = phantom_images(3, CoverSimulation::kNone, 4, {160, 120});
  const auto out = translate(gen, imgs);
  REQUIRE(out.size() == 3);
  for (const auto& o : out) {
    CHECK(o.dims() == Dims{160, 120});
    CHECK(o.in_range());
  }
  const std::vector<ThermalImage> wrong = {ThermalImage(64, 48, 0.5f)};
  CHECK_THROWS_AS(translate(gen, wrong), std::invalid_argument);
}

TEST_CASE("translated samples keep their labels") {
  GeneratorNet gen(GeneratorConfig{8, 1}, TranslationDirection::kUncoverToCover, CoverType::kThick, Dims{64, 48});
  PhantomConfig pc;
  pc.image_dims = {64, 48};
  std::vector<Sample> samples;
  for (int i = 0; i < 3; ++i) {
    Rng rng = substream(5, static_cast<std::uint64_t>(i));
    const Phantom ph = render_phantom(sample_pose(rng, pc.image_dims), pc, CoverSimulation::kNone, rng);
    samples.push_back({ph.image, ph.keypoints, DomainTag::kSourceUncover, "s00" + std::to_string(i), "image_000001"});
  }
  const auto out = translate_samples(gen, samples, DomainTag::kGenThick);
  REQUIRE(out.size() == samples.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].keypoints == samples[i].keypoints);
    CHECK(out[i].subject_id == samples[i].subject_id);
    CHECK(out[i].domain == DomainTag::kGenThick);
  }
}

TEST_CASE("cyclegan training config validation") {
  CycAugTrainConfig cfg;
  cfg.lambda_id = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  const std::vector<ThermalImage> none;
  const auto some = phantom_images(2, CoverSimulation::kThin, 1, {64, 48});
  CHECK_THROWS_AS(train_cyclegan(none, some, cfg, CoverType::kThin), std::invalid_argument);
}

TEST_CASE("cyclegan training on phantoms") {
  const Dims dims{64, 48};
  const auto source = phantom_images(50, CoverSimulation::kNone, 100, dims);
  const auto target = phantom_images(50, CoverSimulation::kThick, 200, dims);
  CycAugTrainConfig cfg;
  cfg.generator = {8, 2};
  cfg.discriminator = {8};
  cfg.iterations = 200;
  cfg.seed = 9;
  TempDir dir("cyclegan");
  cfg.checkpoint_dir = dir.path();

  const CycAugResult a = train_cyclegan(source, target, cfg, CoverType::kThick);
  REQUIRE(a.history.size() == 200);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += a.history[static_cast<std::size_t>(i)].total;
    last += a.history[a.history.size() - 1 - static_cast<std::size_t>(i)].total;
  }
  CHECK(last < first);
  CHECK(std::filesystem::exists(dir.path() / "G.bin"));
  CHECK(std::filesystem::exists(dir.path() / "F.bin"));

  {  // translation moves the uncovered set toward the covered set
    GeneratorNet g = a.g;
    const auto moved = translate(g, source);
    CHECK(mean_intensity_distance(moved, target) < mean_intensity_distance(source, target));
  }

  {  // fixed seed reproduces the loss trajectory
    CycAugTrainConfig short_cfg = cfg;
    short_cfg.iterations = 15;
    short_cfg.checkpoint_dir.clear();
    const CycAugResult r1 = train_cyclegan(source, target, short_cfg, CoverType::kThick);
    const CycAugResult r2 = train_cyclegan(source, target, short_cfg, CoverType::kThick);
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) CHECK(r1.history[i].total == r2.history[i].total);
  }

  {  // generator checkpoint round trip
    const auto path = dir.path() / "roundtrip" / "G.bin";
    save_generator(a.g, path, 200, cfg.seed);
    CheckpointMeta meta;
    GeneratorNet back = load_generator(path, &meta);
    CHECK(meta.iteration == 200);
    CHECK(back->direction() == TranslationDirection::kUncoverToCover);
    CHECK(back->target_domain() == CoverType::kThick);
    CHECK(parameter_hash(*back) == parameter_hash(*a.g));
  }
}

TEST_CASE("diverging cyclegan training reports failure") {
  const Dims dims{64, 48};
  const auto source = phantom_images(4, CoverSimulation::kNone, 300, dims);
  const auto target = phantom_images(4, CoverSimulation::kThin, 400, dims);
  CycAugTrainConfig cfg;
  cfg.generator = {4, 1};
  cfg.discriminator = {4};
  cfg.iterations = 30;
  cfg.lambda_cyc = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(train_cyclegan(source, target, cfg, CoverType::kThin), TrainingFailureError);
}
