#ifndef COVERPOSE_HEATMAP_HPP
#define COVERPOSE_HEATMAP_HPP

#include "coverpose/types.hpp"

namespace coverpose {

/// Renders one Gaussian per visible joint at k/stride, peak 1.0, truncated to
/// zero beyond 3 sigma. Invisible joints produce all-zero maps.
HeatmapStack encode_heatmaps(const KeypointSet& kps, Dims out_dims, double stride, double sigma);

struct DecodeOptions {
  // Shift the argmax a quarter pixel toward the larger neighbour.
  bool quarter_offset = true;
};

/// Argmax decoding back to image coordinates. Maps whose maximum is <= 0 give
/// an invisible joint.
KeypointSet decode_heatmaps(const HeatmapStack& hm, double stride, DecodeOptions opts = {});
KeypointSet decode_heatmaps(const HeatmapStack& hm, DecodeOptions opts = {});

/// x' = x * W'/W, y' = y * H'/H. Visibility is preserved.
KeypointSet rescale_keypoints(const KeypointSet& kps, Dims from, Dims to);

}  // namespace coverpose

#endif  // COVERPOSE_HEATMAP_HPP
