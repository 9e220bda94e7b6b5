#ifndef COVERPOSE_TYPES_HPP
#define COVERPOSE_TYPES_HPP

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace coverpose {

/// Height/width pair in pixels. Always (rows, cols).
struct Dims {
  int height = 0;
  int width = 0;

  bool positive() const { return height > 0 && width > 0; }
  std::size_t area() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Single-channel intensity frame with values in [0, 1], row-major.
class ThermalImage {
 public:
  ThermalImage() = default;
  ThermalImage(int height, int width, float fill = 0.0f);
  /// Takes ownership of `pixels`; throws std::invalid_argument on bad dims or
  /// out-of-range values.
  ThermalImage(int height, int width, std::vector<float> pixels);

  int height() const { return dims_.height; }
  int width() const { return dims_.width; }
  Dims dims() const { return dims_; }
  bool empty() const { return pixels_.empty(); }

  float operator()(int row, int col) const { return pixels_[index(row, col)]; }
  float& operator()(int row, int col) { return pixels_[index(row, col)]; }

  std::span<const float> pixels() const { return pixels_; }
  std::span<float> pixels() { return pixels_; }

  double mean() const;
  /// Clamp every pixel into [0, 1] (NaN becomes 0).
  void clamp();
  /// True when every pixel lies in [0, 1].
  bool in_range() const;

  friend bool operator==(const ThermalImage&, const ThermalImage&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(dims_.width) + static_cast<std::size_t>(col);
  }

  Dims dims_{};
  std::vector<float> pixels_;
};

struct Joint {
  double x = 0.0;
  double y = 0.0;
  bool visible = false;

  friend bool operator==(const Joint&, const Joint&) = default;
};

inline constexpr int kDefaultJointCount = 14;

// LSP ordering.
enum class LspJoint : int {
  kRightAnkle = 0,
  kRightKnee,
  kRightHip,
  kLeftHip,
  kLeftKnee,
  kLeftAnkle,
  kRightWrist,
  kRightElbow,
  kRightShoulder,
  kLeftShoulder,
  kLeftElbow,
  kLeftWrist,
  kThorax,
  kHeadTop,
};

std::string_view joint_name(int index);

struct KeypointSet {
  std::vector<Joint> joints;

  KeypointSet() = default;
  explicit KeypointSet(std::vector<Joint> j) : joints(std::move(j)) {}
  explicit KeypointSet(int k) : joints(static_cast<std::size_t>(k)) {}

  int size() const { return static_cast<int>(joints.size()); }
  const Joint& operator[](int j) const { return joints[static_cast<std::size_t>(j)]; }
  Joint& operator[](int j) { return joints[static_cast<std::size_t>(j)]; }

  /// Visible joints must lie inside [0, width-1] x [0, height-1].
  bool within(Dims frame) const;

  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;
};

/// K confidence maps of identical size, stored contiguously (joint-major).
struct HeatmapStack {
  int joints = 0;
  Dims dims{};
  double stride = 1.0;
  std::vector<float> data;

  HeatmapStack() = default;
  HeatmapStack(int k, Dims d, double s)
      : joints(k), dims(d), stride(s), data(static_cast<std::size_t>(k) * d.area(), 0.0f) {}

  std::span<const float> map(int j) const {
    return std::span<const float>(data).subspan(static_cast<std::size_t>(j) * dims.area(), dims.area());
  }
  std::span<float> map(int j) {
    return std::span<float>(data).subspan(static_cast<std::size_t>(j) * dims.area(), dims.area());
  }
  float at(int j, int row, int col) const {
    return map(j)[static_cast<std::size_t>(row) * static_cast<std::size_t>(dims.width) + static_cast<std::size_t>(col)];
  }
};

enum class DomainTag {
  kSourceUncover,
  kTargetThin,
  kTargetThick,
  kGenThin,
  kGenThick,
  kExtremeAug,
};

inline constexpr std::array<DomainTag, 6> kAllDomains = {
    DomainTag::kSourceUncover, DomainTag::kTargetThin, DomainTag::kTargetThick,
    DomainTag::kGenThin,       DomainTag::kGenThick,   DomainTag::kExtremeAug,
};

std::string_view to_string(DomainTag tag);
/// Parses the snake_case names used in files and configs. Throws
/// std::invalid_argument on unknown names.
DomainTag domain_from_string(std::string_view name);

/// Domains whose samples carry the (transported) source label.
bool is_labeled_domain(DomainTag tag);
bool is_target_domain(DomainTag tag);

struct Sample {
  ThermalImage image;
  std::optional<KeypointSet> keypoints;
  DomainTag domain = DomainTag::kSourceUncover;
  std::string subject_id;
  std::string frame_id;
};

/// Checks the labeling invariant: keypoints present iff the domain is labeled
/// or the sample belongs to the test split. Throws std::invalid_argument.
void validate_sample(const Sample& sample, bool test_split = false);

}  // namespace coverpose

#endif  // COVERPOSE_TYPES_HPP
