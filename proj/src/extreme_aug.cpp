#include "coverpose/extreme_aug.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace coverpose {

void ExtremeAugConfig::validate() const {
  const auto [lo, hi] = dim_factor_range;
  if (!(lo > 0.0 && lo <= hi && hi <= 1.0)) {
    throw std::invalid_argument("ExtremeAugConfig: dim factors need 0 < lo <= hi <= 1");
  }
  if (n_dark_kernels_range.first < 0 || n_dark_kernels_range.first > n_dark_kernels_range.second) {
    throw std::invalid_argument("ExtremeAugConfig: dark kernel count range must satisfy 0 <= lo <= hi");
  }
  if (dark_kernel_size < 1) throw std::invalid_argument("ExtremeAugConfig: dark kernel size must be >= 1");
  if (erosion_kernel < 1 || erosion_kernel % 2 == 0) {
    throw std::invalid_argument("ExtremeAugConfig: erosion kernel must be odd and >= 1");
  }
  if (blur_kernel < 1 || blur_kernel % 2 == 0) {
    throw std::invalid_argument("ExtremeAugConfig: blur kernel must be odd and >= 1");
  }
  if (!(blur_sigma > 0.0)) throw std::invalid_argument("ExtremeAugConfig: blur sigma must be positive");
}

int select_cover_line(Rng& rng, int height) {
  if (height < 8) throw std::invalid_argument("select_cover_line: height must be >= 8");
  const int lo = height / 8;
  const int hi = height / 4;  // exclusive
  std::uniform_int_distribution<int> dist(lo, hi - 1);
  return dist(rng);
}

ThermalImage dim_below_line(const ThermalImage& img, int row, double factor) {
  if (!(factor > 0.0 && factor <= 1.0)) {
    throw std::invalid_argument("dim_below_line: factor must lie in (0, 1]");
  }
  if (row < 0 || row >= img.height()) throw std::invalid_argument("dim_below_line: row outside image");
  ThermalImage out = img;
  const auto f = static_cast<float>(factor);
  for (int r = row; r < out.height(); ++r) {
    for (int c = 0; c < out.width(); ++c) out(r, c) *= f;
  }
  return out;
}

ThermalImage add_dark_kernels(const ThermalImage& img, Rng& rng, int n, int size) {
  if (n < 0) throw std::invalid_argument("add_dark_kernels: n must be >= 0");
  if (size < 1 || size > std::min(img.height(), img.width())) {
    throw std::invalid_argument("add_dark_kernels: kernel size must fit inside the image");
  }
  ThermalImage out = img;
  std::uniform_int_distribution<int> row_dist(0, img.height() - size);
  std::uniform_int_distribution<int> col_dist(0, img.width() - size);
  for (int i = 0; i < n; ++i) {
    const int r0 = row_dist(rng);
    const int c0 = col_dist(rng);
    for (int r = r0; r < r0 + size; ++r) {
      for (int c = c0; c < c0 + size; ++c) out(r, c) = 0.0f;
    }
  }
  return out;
}

ThermalImage erode(const ThermalImage& img, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("erode: kernel must be odd and >= 1");
  const int half = kernel / 2;
  const int h = img.height();
  const int w = img.width();
  // Separable: a square min filter is a row min followed by a column min.
  ThermalImage rows(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      float m = img(r, c);
      for (int k = -half; k <= half; ++k) m = std::min(m, img(r, std::clamp(c + k, 0, w - 1)));
      rows(r, c) = m;
    }
  }
  ThermalImage out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      float m = rows(r, c);
      for (int k = -half; k <= half; ++k) m = std::min(m, rows(std::clamp(r + k, 0, h - 1), c));
      out(r, c) = m;
    }
  }
  return out;
}

ThermalImage gaussian_blur(const ThermalImage& img, int kernel, double sigma) {
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("gaussian_blur: kernel must be odd and >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be positive");
  const int half = kernel / 2;
  std::vector<double> weights(static_cast<std::size_t>(kernel));
  double total = 0.0;
  for (int k = -half; k <= half; ++k) {
    const double v = std::exp(-(k * k) / (2.0 * sigma * sigma));
    weights[static_cast<std::size_t>(k + half)] = v;
    total += v;
  }
  for (double& v : weights) v /= total;

  const int h = img.height();
  const int w = img.width();
  std::vector<double> tmp(img.dims().area());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -half; k <= half; ++k) {
        acc += weights[static_cast<std::size_t>(k + half)] * img(r, std::clamp(c + k, 0, w - 1));
      }
      tmp[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  ThermalImage out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -half; k <= half; ++k) {
        acc += weights[static_cast<std::size_t>(k + half)] * tmp[static_cast<std::size_t>(std::clamp(r + k, 0, h - 1)) * w + c];
      }
      out(r, c) = static_cast<float>(acc);
    }
  }
  out.clamp();
  return out;
}

ThermalImage extreme_aug(const ThermalImage& img, const ExtremeAugConfig& cfg, Rng& rng) {
  cfg.validate();
  const int row = select_cover_line(rng, img.height());
  std::uniform_real_distribution<double> factor_dist(cfg.dim_factor_range.first, cfg.dim_factor_range.second);
  const double factor = factor_dist(rng);
  std::uniform_int_distribution<int> count_dist(cfg.n_dark_kernels_range.first, cfg.n_dark_kernels_range.second);
  const int n_kernels = count_dist(rng);

  ThermalImage out = dim_below_line(img, row, factor);
  out = add_dark_kernels(out, rng, n_kernels, cfg.dark_kernel_size);
  out = erode(out, cfg.erosion_kernel);
  return gaussian_blur(out, cfg.blur_kernel, cfg.blur_sigma);
}

ThermalImage extreme_aug(const ThermalImage& img, const ExtremeAugConfig& cfg, std::uint64_t sample_index) {
  Rng rng = substream(cfg.seed, sample_index);
  return extreme_aug(img, cfg, rng);
}

}  // namespace coverpose
