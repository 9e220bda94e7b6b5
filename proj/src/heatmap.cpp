#include "coverpose/heatmap.hpp"

#include <cmath>
#include <stdexcept>

namespace coverpose {

HeatmapStack encode_heatmaps(const KeypointSet& kps, Dims out_dims, double stride, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("encode_heatmaps: sigma must be positive");
  if (!out_dims.positive()) throw std::invalid_argument("encode_heatmaps: output dims must be positive");
  if (!(stride > 0.0)) throw std::invalid_argument("encode_heatmaps: stride must be positive");

  HeatmapStack hm(kps.size(), out_dims, stride);
  const double radius = 3.0 * sigma;
  const double denom = 2.0 * sigma * sigma;
  for (int j = 0; j < kps.size(); ++j) {
    const Joint& joint = kps[j];
    if (!joint.visible) continue;
    const double cx = joint.x / stride;
    const double cy = joint.y / stride;
    const int r0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int r1 = std::min(out_dims.height - 1, static_cast<int>(std::ceil(cy + radius)));
    const int c0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int c1 = std::min(out_dims.width - 1, static_cast<int>(std::ceil(cx + radius)));
    auto map = hm.map(j);
    float peak = 0.0f;
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double d2 = (c - cx) * (c - cx) + (r - cy) * (r - cy);
        if (d2 > radius * radius) continue;
        const float v = static_cast<float>(std::exp(-d2 / denom));
        map[static_cast<std::size_t>(r) * out_dims.width + c] = v;
        peak = std::max(peak, v);
      }
    }
    // The Gaussian is sampled on the grid, so the sampled maximum is below 1
    // unless the centre falls on a grid point.
    if (peak > 0.0f) {
      for (float& v : map) v /= peak;
    }
  }
  return hm;
}

KeypointSet decode_heatmaps(const HeatmapStack& hm, double stride, DecodeOptions opts) {
  KeypointSet out(hm.joints);
  const int h = hm.dims.height;
  const int w = hm.dims.width;
  for (int j = 0; j < hm.joints; ++j) {
    auto map = hm.map(j);
    std::size_t best = 0;
    for (std::size_t i = 1; i < map.size(); ++i) {
      if (map[i] > map[best]) best = i;
    }
    if (map.empty() || !(map[best] > 0.0f)) {
      out[j] = Joint{0.0, 0.0, false};
      continue;
    }
    const int row = static_cast<int>(best) / w;
    const int col = static_cast<int>(best) % w;
    double x = col;
    double y = row;
    if (opts.quarter_offset) {
      if (col > 0 && col < w - 1) {
        const float diff = hm.at(j, row, col + 1) - hm.at(j, row, col - 1);
        if (diff > 0) x += 0.25;
        else if (diff < 0) x -= 0.25;
      }
      if (row > 0 && row < h - 1) {
        const float diff = hm.at(j, row + 1, col) - hm.at(j, row - 1, col);
        if (diff > 0) y += 0.25;
        else if (diff < 0) y -= 0.25;
      }
    }
    out[j] = Joint{x * stride, y * stride, true};
  }
  return out;
}

KeypointSet decode_heatmaps(const HeatmapStack& hm, DecodeOptions opts) {
  return decode_heatmaps(hm, hm.stride, opts);
}

KeypointSet rescale_keypoints(const KeypointSet& kps, Dims from, Dims to) {
  if (!from.positive() || !to.positive()) {
    throw std::invalid_argument("rescale_keypoints: dimensions must be positive");
  }
  const double sx = static_cast<double>(to.width) / from.width;
  const double sy = static_cast<double>(to.height) / from.height;
  KeypointSet out = kps;
  for (Joint& j : out.joints) {
    j.x *= sx;
    j.y *= sy;
  }
  return out;
}

}  // namespace coverpose
