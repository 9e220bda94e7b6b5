#ifndef COVERPOSE_PIPELINE_HPP
#define COVERPOSE_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "coverpose/cycaug.hpp"
#include "coverpose/data_io.hpp"
#include "coverpose/distill.hpp"
#include "coverpose/eval.hpp"
#include "coverpose/extreme_aug.hpp"
#include "coverpose/pose_nets.hpp"

namespace coverpose {

enum class Profile { kToy, kFull };
std::string_view to_string(Profile p);
Profile profile_from_string(std::string_view s);

struct PipelineConfig {
  Profile profile = Profile::kToy;
  std::uint64_t seed = 0;
  std::string device = "cpu";
  std::filesystem::path out = "out";
  double val_fraction = 0.1;  // source subjects held out for model selection

  PhantomConfig phantoms;
  CycAugTrainConfig cycaug;
  ExtremeAugConfig extreme_aug;
  PoseNetConfig pose_net;
  PoseTrainConfig pose_train;
  DistillConfig distill;
  PckhOptions eval;

  /// Defaults for a profile. The toy profile fits the whole pipeline into a
  /// few minutes on one CPU core.
  static PipelineConfig for_profile(Profile p);

  /// Sets the global seed and re-derives every stage seed from it.
  void apply_seed(std::uint64_t s);

  /// Throws InvalidConfigError.
  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& cfg);

/// Builds a config from a JSON document: profile defaults first (the
/// document's "profile" unless `profile` is given), then the global seed,
/// then any section values present in the document.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, std::optional<Profile> profile = std::nullopt);

enum class Stage { kSynthGen, kCycAugTrain, kAugment, kPoseTrain, kDistill, kEval, kPlot };
std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

/// Pose-training recipes compared in the ablation.
enum class PoseMethod { kSource, kCycAug, kExtreme };
std::string_view to_string(PoseMethod m);
PoseMethod pose_method_from_string(std::string_view s);
AugmentationMix method_mix(PoseMethod m);

/// Row labels of the ablation table, in table order, with the file stem each
/// row's artifacts use.
struct AblationRow {
  std::string_view key;    // source, cycaug, extreme, kd
  std::string_view label;  // source, +CycAug, +ExtremeAug, +KD
};
std::span<const AblationRow> ablation_rows();

struct StageOptions {
  std::optional<PoseMethod> method;           // pose-train
  std::optional<std::filesystem::path> data;  // dataset root; default <out>/data
  std::optional<std::filesystem::path> teacher;
  std::optional<std::filesystem::path> target;
};

struct StageResult {
  int exit_code = 0;
  std::string message;
  std::vector<std::filesystem::path> artifacts;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitInvalidConfig = 2;
inline constexpr int kExitMissingPrerequisite = 3;
inline constexpr int kExitTrainingFailure = 4;

/// Runs one stage under an exclusive lock on the output directory and writes
/// <out>/manifests/<stage>[.<method>].json. Errors are mapped to exit codes,
/// never thrown.
StageResult run_stage(Stage stage, const PipelineConfig& cfg, const StageOptions& opts, std::ostream& log);

/// Writes curve.svg (PCKh against threshold, one line per report) and
/// per_joint.svg (bars grouped by joint, reports in the given order).
std::vector<std::filesystem::path> emit_plots(std::span<const PCKhReport> reports, const std::filesystem::path& dir);

/// Git blob id ("blob <size>\0" + content, SHA-1) of a file, as hex.
std::string git_blob_sha1(const std::filesystem::path& file);

/// Held while a stage writes into an output directory.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& out_dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

class OutputLockedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace coverpose

#endif  // COVERPOSE_PIPELINE_HPP
