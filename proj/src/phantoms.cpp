#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "coverpose/data_io.hpp"
#include "coverpose/extreme_aug.hpp"

namespace coverpose {

namespace fs = std::filesystem;

void PhantomConfig::validate() const {
  if (source_subjects < 0 || thin_subjects < 0 || thick_subjects < 0 || test_subjects < 0) {
    throw std::invalid_argument("PhantomConfig: subject counts must be >= 0");
  }
  if (poses_per_subject < 1) throw std::invalid_argument("PhantomConfig: poses per subject must be >= 1");
  if (image_dims.height < 64 || image_dims.width < 48) {
    throw std::invalid_argument("PhantomConfig: image dims too small to fit the skeleton (need at least 64x48)");
  }
  if (!(limb_intensity > background_level && limb_intensity <= 1.0 && background_level >= 0.0)) {
    throw std::invalid_argument("PhantomConfig: need 0 <= background < limb intensity <= 1");
  }
  if (!(limb_width > 0.0) || background_noise < 0.0) {
    throw std::invalid_argument("PhantomConfig: limb width must be positive and noise >= 0");
  }
}

void to_json(nlohmann::json& j, const PhantomConfig& cfg) {
  j = {{"source_subjects", cfg.source_subjects},
       {"thin_subjects", cfg.thin_subjects},
       {"thick_subjects", cfg.thick_subjects},
       {"test_subjects", cfg.test_subjects},
       {"poses_per_subject", cfg.poses_per_subject},
       {"image_dims", {cfg.image_dims.height, cfg.image_dims.width}},
       {"limb_intensity", cfg.limb_intensity},
       {"limb_width", cfg.limb_width},
       {"background_level", cfg.background_level},
       {"background_noise", cfg.background_noise},
       {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, PhantomConfig& cfg) {
  cfg.source_subjects = j.value("source_subjects", cfg.source_subjects);
  cfg.thin_subjects = j.value("thin_subjects", cfg.thin_subjects);
  cfg.thick_subjects = j.value("thick_subjects", cfg.thick_subjects);
  cfg.test_subjects = j.value("test_subjects", cfg.test_subjects);
  cfg.poses_per_subject = j.value("poses_per_subject", cfg.poses_per_subject);
  if (j.contains("image_dims")) cfg.image_dims = {j["image_dims"].at(0).get<int>(), j["image_dims"].at(1).get<int>()};
  cfg.limb_intensity = j.value("limb_intensity", cfg.limb_intensity);
  cfg.limb_width = j.value("limb_width", cfg.limb_width);
  cfg.background_level = j.value("background_level", cfg.background_level);
  cfg.background_noise = j.value("background_noise", cfg.background_noise);
  cfg.seed = j.value("seed", cfg.seed);
}

namespace {

struct Vec {
  double x = 0.0;
  double y = 0.0;
};

Vec operator+(Vec a, Vec b) { return {a.x + b.x, a.y + b.y}; }
Vec operator-(Vec a, Vec b) { return {a.x - b.x, a.y - b.y}; }
Vec operator*(double s, Vec a) { return {s * a.x, s * a.y}; }

// Unit vector at `angle` radians from straight down (+y), turning toward +x.
Vec down_rotated(double angle) { return {std::sin(angle), std::cos(angle)}; }

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double deg(double d) { return d * std::numbers::pi / 180.0; }

KeypointSet draw_pose(Rng& rng, Dims dims) {
  const double h = dims.height;
  const double w = dims.width;
  KeypointSet kps(kDefaultJointCount);
  auto set = [&](LspJoint j, Vec p) { kps[static_cast<int>(j)] = Joint{p.x, p.y, true}; };

  const Vec thorax{w / 2 + uniform(rng, -0.07, 0.07) * w, uniform(rng, 0.18, 0.23) * h};
  const double tilt = uniform(rng, -0.12, 0.12);
  const Vec axis = down_rotated(tilt);
  const Vec across{axis.y, -axis.x};  // toward image +x for an upright axis
  const Vec head = thorax - uniform(rng, 0.09, 0.11) * h * down_rotated(tilt + uniform(rng, -0.35, 0.35));
  const Vec pelvis = thorax + uniform(rng, 0.25, 0.29) * h * axis;

  // The subject faces the camera, so their right side is on the image left.
  const double shoulder_half = uniform(rng, 0.14, 0.17) * w;
  const double hip_half = uniform(rng, 0.08, 0.10) * w;
  const Vec r_shoulder = thorax - shoulder_half * across + 0.02 * h * axis;
  const Vec l_shoulder = thorax + shoulder_half * across + 0.02 * h * axis;
  const Vec r_hip = pelvis - hip_half * across;
  const Vec l_hip = pelvis + hip_half * across;

  auto limb = [&](Vec root, double side, double spread_lo, double spread_hi, double bend_lo, double bend_hi,
                  double upper, double lower, Vec& mid, Vec& end) {
    // side = -1 for the right limb (image left), +1 for the left one.
    const double spread = uniform(rng, spread_lo, spread_hi);
    const double a1 = tilt + side * deg(spread);
    mid = root + upper * h * down_rotated(a1);
    const double a2 = a1 + side * deg(uniform(rng, bend_lo, bend_hi));
    end = mid + lower * h * down_rotated(a2);
  };

  Vec r_elbow, r_wrist, l_elbow, l_wrist, r_knee, r_ankle, l_knee, l_ankle;
  limb(r_shoulder, -1.0, 5, 95, -70, 90, uniform(rng, 0.12, 0.14), uniform(rng, 0.11, 0.13), r_elbow, r_wrist);
  limb(l_shoulder, +1.0, 5, 95, -70, 90, uniform(rng, 0.12, 0.14), uniform(rng, 0.11, 0.13), l_elbow, l_wrist);
  limb(r_hip, -1.0, -6, 25, -20, 30, uniform(rng, 0.17, 0.20), uniform(rng, 0.16, 0.19), r_knee, r_ankle);
  limb(l_hip, +1.0, -6, 25, -20, 30, uniform(rng, 0.17, 0.20), uniform(rng, 0.16, 0.19), l_knee, l_ankle);

  set(LspJoint::kRightAnkle, r_ankle);
  set(LspJoint::kRightKnee, r_knee);
  set(LspJoint::kRightHip, r_hip);
  set(LspJoint::kLeftHip, l_hip);
  set(LspJoint::kLeftKnee, l_knee);
  set(LspJoint::kLeftAnkle, l_ankle);
  set(LspJoint::kRightWrist, r_wrist);
  set(LspJoint::kRightElbow, r_elbow);
  set(LspJoint::kRightShoulder, r_shoulder);
  set(LspJoint::kLeftShoulder, l_shoulder);
  set(LspJoint::kLeftElbow, l_elbow);
  set(LspJoint::kLeftWrist, l_wrist);
  set(LspJoint::kThorax, thorax);
  set(LspJoint::kHeadTop, head);
  return kps;
}

bool fits(const KeypointSet& kps, Dims dims, double margin) {
  return std::all_of(kps.joints.begin(), kps.joints.end(), [&](const Joint& j) {
    return j.x >= margin && j.y >= margin && j.x <= dims.width - 1 - margin && j.y <= dims.height - 1 - margin;
  });
}

double segment_distance2(Vec p, Vec a, Vec b) {
  const Vec ab = b - a;
  const Vec ap = p - a;
  const double len2 = ab.x * ab.x + ab.y * ab.y;
  const double t = len2 > 0 ? std::clamp((ap.x * ab.x + ap.y * ab.y) / len2, 0.0, 1.0) : 0.0;
  const Vec q = a + t * ab;
  return (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y);
}

Vec at(const KeypointSet& kps, LspJoint j) {
  const Joint& p = kps[static_cast<int>(j)];
  return {p.x, p.y};
}

struct Segment {
  Vec a;
  Vec b;
  double width_scale;
};

// Body occupancy in [0, 1]: max over segments of a Gaussian cross-section.
std::vector<double> body_mask(const KeypointSet& kps, Dims dims, double limb_width) {
  using J = LspJoint;
  const Vec pelvis = 0.5 * (at(kps, J::kRightHip) + at(kps, J::kLeftHip));
  const Vec head_top = at(kps, J::kHeadTop);
  const Vec thorax = at(kps, J::kThorax);
  const Vec head_centre = head_top + 0.4 * (thorax - head_top);
  const std::vector<Segment> segments = {
      {head_centre, head_centre, 2.2},
      {head_centre, thorax, 1.2},
      {thorax, pelvis, 2.6},
      {at(kps, J::kRightShoulder), at(kps, J::kLeftShoulder), 1.2},
      {at(kps, J::kRightShoulder), at(kps, J::kRightHip), 1.3},
      {at(kps, J::kLeftShoulder), at(kps, J::kLeftHip), 1.3},
      {at(kps, J::kRightHip), at(kps, J::kLeftHip), 1.3},
      {at(kps, J::kRightShoulder), at(kps, J::kRightElbow), 1.0},
      {at(kps, J::kRightElbow), at(kps, J::kRightWrist), 0.85},
      {at(kps, J::kLeftShoulder), at(kps, J::kLeftElbow), 1.0},
      {at(kps, J::kLeftElbow), at(kps, J::kLeftWrist), 0.85},
      {at(kps, J::kRightHip), at(kps, J::kRightKnee), 1.25},
      {at(kps, J::kRightKnee), at(kps, J::kRightAnkle), 1.0},
      {at(kps, J::kLeftHip), at(kps, J::kLeftKnee), 1.25},
      {at(kps, J::kLeftKnee), at(kps, J::kLeftAnkle), 1.0},
  };
  std::vector<double> mask(dims.area(), 0.0);
  for (int r = 0; r < dims.height; ++r) {
    for (int c = 0; c < dims.width; ++c) {
      const Vec p{static_cast<double>(c), static_cast<double>(r)};
      double m = 0.0;
      for (const Segment& s : segments) {
        const double sw = limb_width * s.width_scale;
        m = std::max(m, std::exp(-segment_distance2(p, s.a, s.b) / (2.0 * sw * sw)));
      }
      mask[static_cast<std::size_t>(r) * dims.width + c] = m;
    }
  }
  return mask;
}

// Low-frequency fold pattern of a sheet, roughly in [-1, 1].
std::vector<double> fold_texture(Dims dims, Rng& rng) {
  std::vector<double> tex(dims.area(), 0.0);
  constexpr int kWaves = 3;
  std::array<double, kWaves> angle{}, period{}, phase{};
  for (int k = 0; k < kWaves; ++k) {
    angle[k] = uniform(rng, 0.0, std::numbers::pi);
    period[k] = uniform(rng, 14.0, 40.0);
    phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  for (int r = 0; r < dims.height; ++r) {
    for (int c = 0; c < dims.width; ++c) {
      double v = 0.0;
      for (int k = 0; k < kWaves; ++k) {
        v += std::sin(2.0 * std::numbers::pi * (c * std::cos(angle[k]) + r * std::sin(angle[k])) / period[k] + phase[k]);
      }
      tex[static_cast<std::size_t>(r) * dims.width + c] = v / kWaves;
    }
  }
  return tex;
}

}  // namespace

KeypointSet sample_pose(Rng& rng, Dims dims) {
  if (dims.height < 64 || dims.width < 48) {
    throw std::invalid_argument("sample_pose: image dims too small to fit the skeleton (need at least 64x48)");
  }
  constexpr int kAttempts = 1000;
  const double margin = 3.0;
  for (int i = 0; i < kAttempts; ++i) {
    KeypointSet kps = draw_pose(rng, dims);
    if (fits(kps, dims, margin)) return kps;
  }
  throw std::invalid_argument("sample_pose: could not fit a skeleton inside the frame");
}

Phantom render_phantom(const KeypointSet& pose, const PhantomConfig& cfg, CoverSimulation cover, Rng& rng) {
  cfg.validate();
  const Dims dims = cfg.image_dims;
  if (pose.size() != kDefaultJointCount || !pose.within(dims)) {
    throw std::invalid_argument("render_phantom: pose must have 14 joints inside the frame");
  }
  const std::vector<double> mask = body_mask(pose, dims, cfg.limb_width);
  std::vector<double> body(dims.area());
  for (std::size_t i = 0; i < body.size(); ++i) {
    body[i] = cfg.background_level + (cfg.limb_intensity - cfg.background_level) * mask[i];
  }

  // Cover edge somewhere between the shoulders and the hips, feathered over a
  // few rows.
  using J = LspJoint;
  const double shoulder_y = 0.5 * (at(pose, J::kRightShoulder).y + at(pose, J::kLeftShoulder).y);
  const double hip_y = 0.5 * (at(pose, J::kRightHip).y + at(pose, J::kLeftHip).y);
  const double edge = shoulder_y + uniform(rng, 0.05, 0.35) * (hip_y - shoulder_y);
  const std::vector<double> texture = fold_texture(dims, rng);

  std::vector<float> pixels(dims.area());
  if (cover == CoverSimulation::kNone) {
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(body[i]);
  } else {
    const bool thick = cover == CoverSimulation::kThick;
    // Heat diffuses through the fabric: the body shows through blurred and
    // with reduced contrast on top of the sheet's own emission.
    std::vector<float> as_float(body.begin(), body.end());
    const ThermalImage diffused =
        gaussian_blur(ThermalImage(dims.height, dims.width, std::move(as_float)), thick ? 15 : 5, thick ? 3.5 : 1.2);
    const double transmit = thick ? 0.28 : 0.5;
    const double sheet_level = thick ? 0.36 : 0.3;
    const double fold_amp = thick ? 0.06 : 0.035;
    for (int r = 0; r < dims.height; ++r) {
      const double coverage = std::clamp((r - edge) / 3.0 + 0.5, 0.0, 1.0);
      for (int c = 0; c < dims.width; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * dims.width + c;
        const double sheet = sheet_level + fold_amp * texture[i];
        const double covered = transmit * diffused(r, c) + (1.0 - transmit) * sheet;
        pixels[i] = static_cast<float>((1.0 - coverage) * body[i] + coverage * covered);
      }
    }
  }
  std::normal_distribution<double> noise(0.0, cfg.background_noise);
  for (float& p : pixels) {
    p = static_cast<float>(std::clamp(p + (cfg.background_noise > 0 ? noise(rng) : 0.0), 0.0, 1.0));
  }
  return {ThermalImage(dims.height, dims.width, std::move(pixels)), pose};
}

namespace {

std::string subject_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%03d", index);
  return buf;
}

std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "image_%06d", index);
  return buf;
}

}  // namespace

void gen_phantoms(const PhantomConfig& cfg, const fs::path& root) {
  cfg.validate();
  const std::array<std::pair<Split, int>, 4> plan = {{{Split::kTrainSource, cfg.source_subjects},
                                                      {Split::kTrainThin, cfg.thin_subjects},
                                                      {Split::kTrainThick, cfg.thick_subjects},
                                                      {Split::kTest, cfg.test_subjects}}};
  int subject_index = 0;
  for (const auto& [split, count] : plan) {
    const fs::path split_dir = root / to_string(split);
    fs::create_directories(split_dir);
    for (int s = 0; s < count; ++s) {
      ++subject_index;
      const std::string subject = subject_name(subject_index);
      const fs::path dir = split_dir / subject;
      fs::create_directories(dir);
      nlohmann::json frames = nlohmann::json::array();
      int frame = 0;
      for (int p = 0; p < cfg.poses_per_subject; ++p) {
        Rng pose_rng = substream(cfg.seed, static_cast<std::uint64_t>(subject_index) * 100003ULL + p);
        const KeypointSet pose = sample_pose(pose_rng, cfg.image_dims);
        std::vector<std::pair<CoverSimulation, const char*>> renders;
        switch (split) {
          case Split::kTrainSource: renders = {{CoverSimulation::kNone, "none"}}; break;
          case Split::kTrainThin: renders = {{CoverSimulation::kThin, "thin"}}; break;
          case Split::kTrainThick: renders = {{CoverSimulation::kThick, "thick"}}; break;
          case Split::kTest: renders = {{CoverSimulation::kThin, "thin"}, {CoverSimulation::kThick, "thick"}}; break;
        }
        for (const auto& [cover, cover_name] : renders) {
          ++frame;
          Rng render_rng = substream(cfg.seed ^ 0xc0ffeeULL,
                                     static_cast<std::uint64_t>(subject_index) * 100003ULL + frame);
          const Phantom ph = render_phantom(pose, cfg, cover, render_rng);
          const std::string name = frame_name(frame);
          write_png(ph.image, dir / (name + ".png"));
          frames.push_back({{"image", name + ".png"}, {"cover", cover_name}, {"joints", keypoints_to_json(pose)}});
        }
      }
      if (is_labeled_split(split)) {
        std::ofstream os(dir / "joints.json", std::ios::trunc);
        os << nlohmann::json{{"frames", frames}}.dump() << '\n';
        if (!os) throw std::runtime_error("gen_phantoms: cannot write labels in " + dir.string());
      }
    }
  }
}

}  // namespace coverpose
