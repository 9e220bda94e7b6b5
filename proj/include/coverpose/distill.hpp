#ifndef COVERPOSE_DISTILL_HPP
#define COVERPOSE_DISTILL_HPP

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "coverpose/pose_nets.hpp"
#include "coverpose/types.hpp"

namespace coverpose {

struct DistillConfig {
  double lr = 2.5e-4;  // constant
  int epochs = 30;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double thin_weight = 0.5;
  double thick_weight = 0.5;
  // Weight of an extra supervised term on labeled replay samples. Off by
  // default; the stage is purely self-supervised.
  double replay_weight = 0.0;
  double sigma = 2.0;  // only used for replay targets

  void validate() const;
};

void to_json(nlohmann::json& j, const DistillConfig& cfg);
void from_json(const nlohmann::json& j, DistillConfig& cfg);

/// Squared-error distillation loss with the sup_loss reduction. The teacher
/// side is detached.
torch::Tensor kd_loss(const torch::Tensor& student_pred, const torch::Tensor& teacher_pred);

struct DistillEpochRecord {
  int epoch = 0;
  double kd_loss = 0.0;
};

struct DistillResult {
  PoseNet student;
  std::uint64_t teacher_hash_before = 0;
  std::uint64_t teacher_hash_after = 0;
  double initial_kd_loss = 0.0;  // on the first batch, before any update
  std::vector<DistillEpochRecord> history;
  CheckpointMeta meta;
};

using DistillProgress = std::function<void(const DistillEpochRecord&)>;

/// Student starts as an exact clone of `teacher` and regresses the teacher's
/// heatmaps on unlabeled covered images. The teacher is only run for
/// inference. initial_kd_loss is measured on the first batch with both
/// networks in inference mode, where the clone reproduces the teacher bit for
/// bit; updates then run the student in training mode, so its normalization
/// statistics adapt to the covered images. The returned student is the final
/// epoch.
DistillResult distill(PoseNet& teacher, std::span<const Sample> unlabeled_target, const DistillConfig& cfg,
                      std::span<const Sample> replay = {}, const DistillProgress& progress = {});

}  // namespace coverpose

#endif  // COVERPOSE_DISTILL_HPP
