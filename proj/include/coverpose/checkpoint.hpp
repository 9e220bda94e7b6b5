#ifndef COVERPOSE_CHECKPOINT_HPP
#define COVERPOSE_CHECKPOINT_HPP

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

namespace coverpose {

/// Sidecar metadata stored next to a parameter blob as `<stem>.json`.
struct CheckpointMeta {
  std::string kind;             // "pose" or "generator"
  nlohmann::json architecture;  // enough to rebuild the module
  std::string config_hash;      // hash of `architecture`
  std::uint64_t seed = 0;
  int epoch = -1;
  int iteration = -1;
  std::optional<double> val_pckh;
  nlohmann::json extra = nlohmann::json::object();  // merged into the top level
};

/// 16 hex digits of FNV-1a over the canonical JSON dump.
std::string config_hash(const nlohmann::json& architecture);

std::filesystem::path sidecar_path(const std::filesystem::path& blob);

nlohmann::json meta_to_json(const CheckpointMeta& meta);
CheckpointMeta meta_from_json(const nlohmann::json& j);

/// Writes every parameter and buffer of `module` to `blob` and the sidecar
/// JSON next to it. Returns `blob`.
std::filesystem::path save_checkpoint(const torch::nn::Module& module, const CheckpointMeta& meta,
                                      const std::filesystem::path& blob);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& blob);

/// Restores parameters into `module`. Throws CheckpointIncompatibleError when
/// `expected_hash` is given and differs from the stored one, or when tensor
/// names or shapes do not line up.
CheckpointMeta load_checkpoint(const std::filesystem::path& blob, torch::nn::Module& module,
                               const std::optional<std::string>& expected_hash = std::nullopt);

}  // namespace coverpose

#endif  // COVERPOSE_CHECKPOINT_HPP
