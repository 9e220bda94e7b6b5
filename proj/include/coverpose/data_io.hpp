#ifndef COVERPOSE_DATA_IO_HPP
#define COVERPOSE_DATA_IO_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "coverpose/rng.hpp"
#include "coverpose/types.hpp"

namespace coverpose {

// ---------------------------------------------------------------------------
// PNG

enum class Normalization {
  kAuto,        // fixed range for 8-bit files, per-image min-max for 16-bit
  kMinMax,      // (v - min) / (max - min); constant images map to 0
  kFixedRange,  // v / (2^bits - 1)
};

/// Reads an 8- or 16-bit grayscale PNG (colour files are converted to luma).
ThermalImage read_png(const std::filesystem::path& path, Normalization norm = Normalization::kAuto);

/// Writes an 8- or 16-bit grayscale PNG from [0, 1] intensities.
void write_png(const ThermalImage& img, const std::filesystem::path& path, int bit_depth = 8);

// ---------------------------------------------------------------------------
// Dataset layout: root/{split}/{subject}/image_NNNNNN.png, labels in
// root/{split}/{subject}/joints.json for labeled splits.

enum class Split { kTrainSource, kTrainThin, kTrainThick, kTest };

inline constexpr std::array<Split, 4> kAllSplits = {Split::kTrainSource, Split::kTrainThin, Split::kTrainThick,
                                                    Split::kTest};

std::string_view to_string(Split s);
bool is_labeled_split(Split s);

struct SampleRecord {
  std::filesystem::path image_path;
  std::string subject_id;
  std::string frame_id;
  DomainTag domain = DomainTag::kSourceUncover;
  std::optional<KeypointSet> keypoints;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::map<Split, std::vector<SampleRecord>> splits;

  const std::vector<SampleRecord>& records(Split s) const;
  std::vector<std::string> subjects(Split s) const;
  std::size_t subject_count() const;
};

/// Scans and validates a dataset root. Throws MalformedDatasetError naming the
/// offending file or subject.
DatasetManifest load_dataset(const std::filesystem::path& root, int joints = kDefaultJointCount);

std::vector<Sample> load_samples(const std::vector<SampleRecord>& records,
                                 Normalization norm = Normalization::kAuto);
std::vector<Sample> load_split(const DatasetManifest& manifest, Split split,
                               Normalization norm = Normalization::kAuto);

/// Writes labeled samples as one directory per subject under `dir`, with the
/// same joints.json schema the loader reads. Returns the number of images.
std::size_t write_labeled_samples(const std::vector<Sample>& samples, const std::filesystem::path& dir);

/// Reads a directory written by write_labeled_samples. Samples take `domain`.
std::vector<Sample> read_labeled_samples(const std::filesystem::path& dir, DomainTag domain,
                                         int joints = kDefaultJointCount,
                                         Normalization norm = Normalization::kAuto);

nlohmann::json keypoints_to_json(const KeypointSet& kps);
KeypointSet keypoints_from_json(const nlohmann::json& j, int joints);

// ---------------------------------------------------------------------------
// Synthetic thermal phantoms

enum class CoverSimulation { kNone, kThin, kThick };

struct PhantomConfig {
  int source_subjects = 12;
  int thin_subjects = 8;
  int thick_subjects = 8;
  int test_subjects = 6;
  int poses_per_subject = 10;
  Dims image_dims{160, 120};
  double limb_intensity = 0.85;  // peak body temperature
  double limb_width = 3.0;       // Gaussian cross-section sigma in pixels
  double background_level = 0.15;
  double background_noise = 0.02;
  std::uint64_t seed = 7;

  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomConfig& cfg);
void from_json(const nlohmann::json& j, PhantomConfig& cfg);

/// One rendered figure: the image and its exact joint positions.
struct Phantom {
  ThermalImage image;
  KeypointSet keypoints;
};

/// Draws a random in-bed pose that fits inside `dims` with a margin.
KeypointSet sample_pose(Rng& rng, Dims dims);

/// Renders a stick figure for `pose`. The cover overlay starts at a row
/// between the shoulders and the hips.
Phantom render_phantom(const KeypointSet& pose, const PhantomConfig& cfg, CoverSimulation cover, Rng& rng);

/// Writes the full four-split dataset under `root`. Deterministic per seed.
void gen_phantoms(const PhantomConfig& cfg, const std::filesystem::path& root);

}  // namespace coverpose

#endif  // COVERPOSE_DATA_IO_HPP
