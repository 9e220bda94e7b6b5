#ifndef COVERPOSE_CYCAUG_HPP
#define COVERPOSE_CYCAUG_HPP

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "coverpose/checkpoint.hpp"
#include "coverpose/rng.hpp"
#include "coverpose/types.hpp"

namespace coverpose {

enum class TranslationDirection { kUncoverToCover, kCoverToUncover };
enum class CoverType { kThin, kThick };
enum class AdversarialMode { kLog, kLeastSquares };

std::string_view to_string(TranslationDirection d);
std::string_view to_string(CoverType c);
std::string_view to_string(AdversarialMode m);
CoverType cover_type_from_string(std::string_view s);
AdversarialMode adversarial_mode_from_string(std::string_view s);

struct GeneratorConfig {
  int base_channels = 64;
  int residual_blocks = 6;
};

struct DiscriminatorConfig {
  int base_channels = 64;
};

/// Encoder (two stride-2 stages), residual trunk, decoder (two upsampling
/// stages). Single-channel [0, 1] images in and out.
class GeneratorNetImpl : public torch::nn::Module {
 public:
  GeneratorNetImpl(GeneratorConfig cfg, TranslationDirection direction, CoverType target, Dims train_dims);

  torch::Tensor forward(torch::Tensor x);

  const GeneratorConfig& config() const { return cfg_; }
  TranslationDirection direction() const { return direction_; }
  CoverType target_domain() const { return target_; }
  Dims train_dims() const { return train_dims_; }
  nlohmann::json architecture() const;

 private:
  GeneratorConfig cfg_;
  TranslationDirection direction_;
  CoverType target_;
  Dims train_dims_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(GeneratorNet);

enum class JudgedDomain { kUncovered, kCovered };

/// PatchGAN with a 70x70 receptive field. Emits a grid of raw scores (logits
/// in log mode).
class DiscriminatorNetImpl : public torch::nn::Module {
 public:
  DiscriminatorNetImpl(DiscriminatorConfig cfg, JudgedDomain judged);

  torch::Tensor forward(torch::Tensor x);

  JudgedDomain judged_domain() const { return judged_; }
  nlohmann::json architecture() const;

 private:
  DiscriminatorConfig cfg_;
  JudgedDomain judged_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(DiscriminatorNet);

struct AdversarialLosses {
  torch::Tensor generator;
  torch::Tensor discriminator;
};

/// Losses from raw discriminator outputs on real and on generated images.
/// Log mode reads the outputs as logits of D; the generator side uses the
/// non-saturating form -log D(fake). Least-squares mode uses squared distance
/// to the labels 1 (real) and 0 (fake).
AdversarialLosses adversarial_terms(const torch::Tensor& real_scores, const torch::Tensor& fake_scores,
                                    AdversarialMode mode);

/// Runs `gen` on `fake_source_batch` and `disc` on both batches.
AdversarialLosses adversarial_loss(GeneratorNet& gen, DiscriminatorNet& disc, const torch::Tensor& real_batch,
                                   const torch::Tensor& fake_source_batch, AdversarialMode mode);

/// mean|F(G(x)) - x| + mean|G(F(y)) - y|.
torch::Tensor cycle_loss(const torch::Tensor& fgx, const torch::Tensor& x, const torch::Tensor& gfy,
                         const torch::Tensor& y);

/// mean|G(y) - y| + mean|F(x) - x|.
torch::Tensor identity_loss(const torch::Tensor& gy, const torch::Tensor& y, const torch::Tensor& fx,
                            const torch::Tensor& x);

template <typename T>
struct CycleGanLossTerms {
  T gan_g;  // generator-side adversarial term for G with D_Y
  T gan_f;  // same for F with D_X
  T cycle;
  T identity;
};

torch::Tensor total_loss(const CycleGanLossTerms<torch::Tensor>& terms, double lambda_cyc, double lambda_id);
double total_loss(const CycleGanLossTerms<double>& terms, double lambda_cyc, double lambda_id);

struct CycAugTrainConfig {
  double lambda_cyc = 10.0;
  double lambda_id = 5.0;
  AdversarialMode adversarial_mode = AdversarialMode::kLeastSquares;
  int iterations = 200;
  int batch_size = 1;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int pool_size = 50;
  std::uint64_t seed = 0;
  GeneratorConfig generator{};
  DiscriminatorConfig discriminator{};
  // When set, a checkpoint pair is written at the end of every epoch.
  std::filesystem::path checkpoint_dir{};

  void validate() const;
};

void to_json(nlohmann::json& j, const CycAugTrainConfig& cfg);
void from_json(const nlohmann::json& j, CycAugTrainConfig& cfg);

/// History of past generated images, replayed to the discriminator.
class ImagePool {
 public:
  ImagePool(int capacity, std::uint64_t seed);
  torch::Tensor query(const torch::Tensor& images);
  int size() const { return static_cast<int>(images_.size()); }

 private:
  int capacity_;
  Rng rng_;
  std::vector<torch::Tensor> images_;
};

struct CycAugLossRecord {
  int iteration = 0;
  double gan_g = 0.0;
  double gan_f = 0.0;
  double cycle = 0.0;
  double identity = 0.0;
  double total = 0.0;
  double disc_x = 0.0;
  double disc_y = 0.0;
};

struct CycAugResult {
  GeneratorNet g{nullptr};  // uncover -> cover
  GeneratorNet f{nullptr};  // cover -> uncover
  DiscriminatorNet d_x{nullptr};
  DiscriminatorNet d_y{nullptr};
  std::vector<CycAugLossRecord> history;
  std::filesystem::path last_checkpoint;
};

using CycAugProgress = std::function<void(const CycAugLossRecord&)>;

/// Trains one G/F pair for a single cover type. `source` and `target` are
/// unpaired and must share one image size.
CycAugResult train_cyclegan(std::span<const ThermalImage> source, std::span<const ThermalImage> target,
                            const CycAugTrainConfig& cfg, CoverType cover, const CycAugProgress& progress = {});

/// Per-image translation; outputs clamped to [0, 1].
std::vector<ThermalImage> translate(GeneratorNet& gen, std::span<const ThermalImage> images);

/// Translates labeled samples; keypoints and ids carry over unchanged.
std::vector<Sample> translate_samples(GeneratorNet& gen, std::span<const Sample> samples, DomainTag out_domain);

void save_generator(const GeneratorNet& gen, const std::filesystem::path& path, int iteration, std::uint64_t seed);
GeneratorNet load_generator(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace coverpose

#endif  // COVERPOSE_CYCAUG_HPP
