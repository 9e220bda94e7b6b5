#include "coverpose/distill.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "coverpose/errors.hpp"
#include "coverpose/rng.hpp"
#include "coverpose/tensor_util.hpp"

namespace coverpose {

void DistillConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("DistillConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("DistillConfig: batch size must be >= 1");
  if (!(lr >= 0.0)) throw std::invalid_argument("DistillConfig: learning rate must be >= 0");
  if (thin_weight < 0.0 || thick_weight < 0.0 || std::abs(thin_weight + thick_weight - 1.0) > 1e-9) {
    throw std::invalid_argument("DistillConfig: target mix weights must be >= 0 and sum to 1");
  }
  if (replay_weight < 0.0) throw std::invalid_argument("DistillConfig: replay weight must be >= 0");
}

void to_json(nlohmann::json& j, const DistillConfig& cfg) {
  j = {{"lr", cfg.lr},
       {"epochs", cfg.epochs},
       {"batch_size", cfg.batch_size},
       {"seed", cfg.seed},
       {"target_mix", {{"thin", cfg.thin_weight}, {"thick", cfg.thick_weight}}},
       {"replay_weight", cfg.replay_weight},
       {"sigma", cfg.sigma}};
}

void from_json(const nlohmann::json& j, DistillConfig& cfg) {
  cfg.lr = j.value("lr", cfg.lr);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("target_mix")) {
    cfg.thin_weight = j["target_mix"].value("thin", cfg.thin_weight);
    cfg.thick_weight = j["target_mix"].value("thick", cfg.thick_weight);
  }
  cfg.replay_weight = j.value("replay_weight", cfg.replay_weight);
  cfg.sigma = j.value("sigma", cfg.sigma);
}

torch::Tensor kd_loss(const torch::Tensor& student_pred, const torch::Tensor& teacher_pred) {
  if (!student_pred.sizes().equals(teacher_pred.sizes())) throw std::invalid_argument("kd_loss: shape mismatch");
  return sup_loss(student_pred, teacher_pred.detach());
}

DistillResult distill(PoseNet& teacher, std::span<const Sample> unlabeled_target, const DistillConfig& cfg,
                      std::span<const Sample> replay, const DistillProgress& progress) {
  cfg.validate();
  if (unlabeled_target.empty()) throw std::invalid_argument("distill: no target images");
  std::array<std::vector<int64_t>, 2> groups;  // thin, thick
  for (std::size_t i = 0; i < unlabeled_target.size(); ++i) {
    const Sample& s = unlabeled_target[i];
    if (!is_target_domain(s.domain) || s.keypoints) {
      throw std::invalid_argument("distill: sample " + s.subject_id + "/" + s.frame_id + " (" +
                                  std::string(to_string(s.domain)) + ") is not an unlabeled target image");
    }
    groups[s.domain == DomainTag::kTargetThin ? 0 : 1].push_back(static_cast<int64_t>(i));
  }
  std::array<double, 2> weights{cfg.thin_weight, cfg.thick_weight};
  for (std::size_t g = 0; g < 2; ++g) {
    if (groups[g].empty()) weights[g] = 0.0;
  }
  if (weights[0] + weights[1] <= 0.0) throw std::invalid_argument("distill: mix puts no weight on available images");
  if (cfg.replay_weight > 0.0) {
    if (replay.empty()) throw std::invalid_argument("distill: replay weight set without replay samples");
    for (const Sample& s : replay) {
      if (!s.keypoints) throw std::invalid_argument("distill: replay samples must be labeled");
    }
  }

  torch::manual_seed(cfg.seed);
  Rng rng = substream(cfg.seed, 0xd157);

  teacher.train(false);
  for (auto& p : teacher.parameters()) p.set_requires_grad(false);

  DistillResult result{clone_pose_net(teacher), 0, 0, 0.0, {}, {}};
  PoseNet& student = result.student;
  for (auto& p : student.parameters()) p.set_requires_grad(true);
  student.train(false);
  result.teacher_hash_before = parameter_hash(teacher.module());

  const PoseBatchCache cache = prepare_pose_inputs(teacher.config(), unlabeled_target, cfg.sigma);
  PoseBatchCache replay_cache;
  if (cfg.replay_weight > 0.0) replay_cache = prepare_pose_inputs(teacher.config(), replay, cfg.sigma);

  torch::optim::Adam optimizer(student.parameters(), torch::optim::AdamOptions(cfg.lr));
  std::discrete_distribution<int> pick_group(weights.begin(), weights.end());
  std::array<std::size_t, 2> cursor{};
  for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);
  const auto epoch_size = static_cast<int>(unlabeled_target.size());

  bool first_batch = true;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int64_t> order(static_cast<std::size_t>(epoch_size));
    for (auto& idx : order) {
      const auto g = static_cast<std::size_t>(pick_group(rng));
      if (cursor[g] == groups[g].size()) {
        std::shuffle(groups[g].begin(), groups[g].end(), rng);
        cursor[g] = 0;
      }
      idx = groups[g][cursor[g]++];
    }
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const torch::Tensor index =
          torch::tensor(std::vector<int64_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(end)),
                        torch::kInt64);
      const torch::Tensor x = cache.images.index_select(0, index);
      torch::Tensor soft;
      {
        torch::NoGradGuard no_grad;
        soft = teacher.forward(x);
      }
      if (first_batch) {
        // Clone check on the same inference path as the teacher.
        torch::NoGradGuard no_grad;
        result.initial_kd_loss = kd_loss(student.forward(x), soft).item<double>();
        first_batch = false;
        student.train(true);
      }
      // BatchNorm needs more than one value per channel in training mode.
      if (x.size(0) < 2) continue;
      torch::Tensor loss = kd_loss(student.forward(x), soft);
      if (cfg.replay_weight > 0.0) {
        std::uniform_int_distribution<int64_t> pick(0, replay_cache.images.size(0) - 1);
        std::vector<int64_t> ridx(end - start);
        for (auto& r : ridx) r = pick(rng);
        const torch::Tensor rindex = torch::tensor(ridx, torch::kInt64);
        loss = loss + cfg.replay_weight * sup_loss(student.forward(replay_cache.images.index_select(0, rindex)),
                                                   replay_cache.targets.index_select(0, rindex));
      }
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw TrainingFailureError("distill: non-finite loss in epoch " + std::to_string(epoch));
      }
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      loss_sum += value;
      ++batches;
    }
    DistillEpochRecord rec{epoch, batches > 0 ? loss_sum / batches : 0.0};
    result.history.push_back(rec);
    if (progress) progress(rec);
  }

  result.teacher_hash_after = parameter_hash(teacher.module());
  for (auto& p : teacher.parameters()) p.set_requires_grad(true);
  student.train(false);
  result.meta = pose_meta(student, cfg.seed, cfg.epochs - 1, std::nullopt);
  result.meta.extra["stage"] = "distill";
  return result;
}

}  // namespace coverpose
