#ifndef COVERPOSE_EXTREME_AUG_HPP
#define COVERPOSE_EXTREME_AUG_HPP

#include <cstdint>
#include <utility>

#include "coverpose/rng.hpp"
#include "coverpose/types.hpp"

namespace coverpose {

/// Occlusion chain applied to generated covered images: cover-line dimming,
/// zero-valued patches, grayscale erosion and a Gaussian blur.
struct ExtremeAugConfig {
  std::pair<double, double> dim_factor_range{0.6, 0.9};
  std::pair<int, int> n_dark_kernels_range{5, 15};
  int dark_kernel_size = 20;
  int erosion_kernel = 3;
  int blur_kernel = 5;
  double blur_sigma = 1.5;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when a field is out of its domain.
  void validate() const;
};

/// Row drawn uniformly from [floor(H/8), floor(H/4)).
int select_cover_line(Rng& rng, int height);

/// Multiplies rows >= `row` by `factor`.
ThermalImage dim_below_line(const ThermalImage& img, int row, double factor);

/// Zeroes `n` size x size squares whose top-left corners are uniform over the
/// positions that keep the square inside the frame.
ThermalImage add_dark_kernels(const ThermalImage& img, Rng& rng, int n, int size);

/// Min filter over a kernel x kernel window with edge replication.
ThermalImage erode(const ThermalImage& img, int kernel);

/// Separable Gaussian blur with edge replication.
ThermalImage gaussian_blur(const ThermalImage& img, int kernel, double sigma);

ThermalImage extreme_aug(const ThermalImage& img, const ExtremeAugConfig& cfg, Rng& rng);

/// Same, drawing from the substream of (cfg.seed, sample_index).
ThermalImage extreme_aug(const ThermalImage& img, const ExtremeAugConfig& cfg, std::uint64_t sample_index);

}  // namespace coverpose

#endif  // COVERPOSE_EXTREME_AUG_HPP
