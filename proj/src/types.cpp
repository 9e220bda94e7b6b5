#include "coverpose/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace coverpose {

ThermalImage::ThermalImage(int height, int width, float fill) : dims_{height, width} {
  if (!dims_.positive()) {
    throw std::invalid_argument("ThermalImage: dimensions must be positive");
  }
  if (!(fill >= 0.0f && fill <= 1.0f)) {
    throw std::invalid_argument("ThermalImage: fill value outside [0, 1]");
  }
  pixels_.assign(dims_.area(), fill);
}

ThermalImage::ThermalImage(int height, int width, std::vector<float> pixels)
    : dims_{height, width}, pixels_(std::move(pixels)) {
  if (!dims_.positive()) {
    throw std::invalid_argument("ThermalImage: dimensions must be positive");
  }
  if (pixels_.size() != dims_.area()) {
    throw std::invalid_argument("ThermalImage: pixel count does not match dimensions");
  }
  if (!in_range()) {
    throw std::invalid_argument("ThermalImage: pixel values must lie in [0, 1]");
  }
}

double ThermalImage::mean() const {
  if (pixels_.empty()) return 0.0;
  double sum = std::accumulate(pixels_.begin(), pixels_.end(), 0.0);
  return sum / static_cast<double>(pixels_.size());
}

void ThermalImage::clamp() {
  for (float& v : pixels_) {
    v = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
  }
}

bool ThermalImage::in_range() const {
  return std::all_of(pixels_.begin(), pixels_.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

std::string_view joint_name(int index) {
  static constexpr std::array<std::string_view, kDefaultJointCount> kNames = {
      "r_ankle",    "r_knee",   "r_hip",      "l_hip",   "l_knee",   "l_ankle", "r_wrist",
      "r_elbow",    "r_shoulder", "l_shoulder", "l_elbow", "l_wrist", "thorax",  "head_top",
  };
  if (index < 0 || index >= kDefaultJointCount) return "joint";
  return kNames[static_cast<std::size_t>(index)];
}

bool KeypointSet::within(Dims frame) const {
  return std::all_of(joints.begin(), joints.end(), [&](const Joint& j) {
    if (!j.visible) return true;
    return j.x >= 0.0 && j.y >= 0.0 && j.x <= frame.width - 1 && j.y <= frame.height - 1;
  });
}

std::string_view to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::kSourceUncover: return "source_uncover";
    case DomainTag::kTargetThin: return "target_thin";
    case DomainTag::kTargetThick: return "target_thick";
    case DomainTag::kGenThin: return "gen_thin";
    case DomainTag::kGenThick: return "gen_thick";
    case DomainTag::kExtremeAug: return "extreme_aug";
  }
  return "unknown";
}

DomainTag domain_from_string(std::string_view name) {
  for (DomainTag tag : kAllDomains) {
    if (to_string(tag) == name) return tag;
  }
  throw std::invalid_argument("unknown domain tag: " + std::string(name));
}

bool is_labeled_domain(DomainTag tag) {
  switch (tag) {
    case DomainTag::kSourceUncover:
    case DomainTag::kGenThin:
    case DomainTag::kGenThick:
    case DomainTag::kExtremeAug:
      return true;
    default:
      return false;
  }
}

bool is_target_domain(DomainTag tag) {
  return tag == DomainTag::kTargetThin || tag == DomainTag::kTargetThick;
}

void validate_sample(const Sample& sample, bool test_split) {
  const bool should_have_labels = test_split || is_labeled_domain(sample.domain);
  if (should_have_labels != sample.keypoints.has_value()) {
    throw std::invalid_argument("sample " + sample.subject_id + "/" + sample.frame_id + " (" +
                                std::string(to_string(sample.domain)) +
                                (should_have_labels ? ") is missing keypoints" : ") must not carry keypoints"));
  }
  if (sample.keypoints && !sample.keypoints->within(sample.image.dims())) {
    throw std::invalid_argument("sample " + sample.subject_id + "/" + sample.frame_id +
                                " has visible joints outside the frame");
  }
}

}  // namespace coverpose
