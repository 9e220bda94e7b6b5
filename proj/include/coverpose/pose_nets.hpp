#ifndef COVERPOSE_POSE_NETS_HPP
#define COVERPOSE_POSE_NETS_HPP

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "coverpose/checkpoint.hpp"
#include "coverpose/types.hpp"

namespace coverpose {

enum class Backbone { kHourglass, kSimpleBaseline };

std::string_view to_string(Backbone b);
Backbone backbone_from_string(std::string_view s);

struct PoseNetConfig {
  Backbone backbone = Backbone::kHourglass;
  int n_stacks = 2;        // hourglass
  int hourglass_depth = 4;  // hourglass
  int channels = 256;      // hourglass feature width; simple baseline stem width
  int encoder_depth = 2;   // simple baseline: residual blocks per encoder stage
  int deconv_channels = 256;  // simple baseline
  Dims input_dims{256, 256};
  Dims heatmap_dims{64, 64};
  int joints = kDefaultJointCount;

  int stride() const { return input_dims.height / heatmap_dims.height; }
  /// Throws std::invalid_argument for inconsistent dims or sizes.
  void validate() const;
};

void to_json(nlohmann::json& j, const PoseNetConfig& cfg);
void from_json(const nlohmann::json& j, PoseNetConfig& cfg);

class PoseBackboneImpl : public torch::nn::Module {
 public:
  ~PoseBackboneImpl() override = default;
  virtual torch::Tensor forward(torch::Tensor x) = 0;
};

/// A pose estimator. forward() returns (B, S, K, h, w) for the hourglass (one
/// prediction per stack) and (B, K, h, w) for the simple baseline; predict()
/// always returns the final (B, K, h, w) heatmaps.
class PoseNet {
 public:
  explicit PoseNet(const PoseNetConfig& cfg);
  /// Wraps a caller-supplied backbone; `cfg` still describes its input and
  /// output geometry.
  PoseNet(const PoseNetConfig& cfg, std::shared_ptr<PoseBackboneImpl> impl);

  const PoseNetConfig& config() const { return cfg_; }
  torch::Tensor forward(const torch::Tensor& x) { return impl_->forward(x); }
  torch::Tensor predict(const torch::Tensor& x);

  torch::nn::Module& module() { return *impl_; }
  const torch::nn::Module& module() const { return *impl_; }
  std::vector<torch::Tensor> parameters() const { return impl_->parameters(); }
  void train(bool on = true) { impl_->train(on); }
  void to(torch::Dtype dtype);

 private:
  PoseNetConfig cfg_;
  std::shared_ptr<PoseBackboneImpl> impl_;
};

PoseNet build_pose_net(const PoseNetConfig& cfg);
/// Fresh network with identical parameters and buffers.
PoseNet clone_pose_net(const PoseNet& net);

/// (1/K) sum_j ||pred_j - target_j||^2 with the squared norm summed over
/// heatmap pixels and the result averaged over the batch. A 5-D prediction is
/// averaged over its stacks; `target` may be 4-D (shared by all stacks) or
/// match `pred` exactly.
torch::Tensor sup_loss(const torch::Tensor& pred, const torch::Tensor& target);

struct AugmentationMix {
  double source = 1.0;
  double gen_thin = 0.0;
  double gen_thick = 0.0;
  double extreme_aug = 0.0;

  std::array<double, 4> weights() const { return {source, gen_thin, gen_thick, extreme_aug}; }
};

struct PoseTrainConfig {
  double lr = 2.5e-4;
  std::vector<int> decay_epochs{45, 60};
  double decay_factor = 0.1;
  int epochs = 100;
  int batch_size = 16;
  std::uint64_t seed = 0;
  AugmentationMix mix{0.25, 0.25, 0.25, 0.25};
  double sigma = 2.0;
  // Samples drawn per epoch; 0 means the size of the largest domain group.
  int epoch_size = 0;
  double val_threshold = 0.5;

  void validate() const;
};

void to_json(nlohmann::json& j, const PoseTrainConfig& cfg);
void from_json(const nlohmann::json& j, PoseTrainConfig& cfg);

/// Piecewise-constant schedule: lr * factor^(number of decay epochs <= epoch).
double lr_at_epoch(const PoseTrainConfig& cfg, int epoch);

struct PoseEpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_pckh = 0.0;
};

struct PoseTrainResult {
  int best_epoch = -1;
  double best_val_pckh = -1.0;
  std::vector<PoseEpochRecord> history;
  CheckpointMeta meta;
};

using PoseProgress = std::function<void(const PoseEpochRecord&)>;

/// Network input tensors and heatmap targets for a list of samples.
struct PoseBatchCache {
  torch::Tensor images;   // (N, 1, H, W) at the network input size
  torch::Tensor targets;  // (N, K, h, w); zeros for unlabeled samples
};
PoseBatchCache prepare_pose_inputs(const PoseNetConfig& cfg, std::span<const Sample> samples, double sigma);

/// Supervised training with Adam on the stepped schedule. `net` ends up
/// holding the weights of the best validation epoch (first one on ties).
PoseTrainResult train_pose(PoseNet& net, std::span<const Sample> train_set, const PoseTrainConfig& cfg,
                           std::span<const Sample> val_set, const PoseProgress& progress = {});

/// Inference in image coordinates: resize, forward, decode, rescale back.
std::vector<KeypointSet> predict_keypoints(PoseNet& net, std::span<const ThermalImage> images, int batch_size = 16);

void save_pose_checkpoint(const PoseNet& net, const CheckpointMeta& meta, const std::filesystem::path& path);
/// Rebuilds the architecture from the sidecar and restores the weights.
PoseNet load_pose_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);
/// Same, refusing a checkpoint written for a different architecture.
PoseNet load_pose_checkpoint(const std::filesystem::path& path, const PoseNetConfig& expected,
                             CheckpointMeta* meta = nullptr);

CheckpointMeta pose_meta(const PoseNet& net, std::uint64_t seed, int epoch, std::optional<double> val_pckh);

}  // namespace coverpose

#endif  // COVERPOSE_POSE_NETS_HPP
