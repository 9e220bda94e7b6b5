#ifndef COVERPOSE_TENSOR_UTIL_HPP
#define COVERPOSE_TENSOR_UTIL_HPP

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <vector>

#include "coverpose/types.hpp"

namespace coverpose {

/// (B, 1, H, W) float tensor. Images are bilinearly resized to `size` when it
/// differs from their own dimensions.
torch::Tensor images_to_tensor(std::span<const ThermalImage> images, Dims size);
torch::Tensor images_to_tensor(std::span<const ThermalImage> images);

/// Inverse of images_to_tensor for a (B, 1, H, W) tensor; values are clamped.
std::vector<ThermalImage> tensor_to_images(const torch::Tensor& batch);

/// (K, h, w) tensor for one stack.
torch::Tensor heatmaps_to_tensor(const HeatmapStack& hm);
/// (B, K, h, w) tensor to one stack per batch item.
std::vector<HeatmapStack> tensor_to_heatmaps(const torch::Tensor& batch, double stride);

ThermalImage resize_image(const ThermalImage& img, Dims size);

/// FNV-1a over the raw bytes of every parameter and buffer, in registration
/// order.
std::uint64_t parameter_hash(const torch::nn::Module& module);

/// Copies parameters and buffers of `src` into `dst`. Both must have been
/// built from the same architecture.
void copy_state(const torch::nn::Module& src, torch::nn::Module& dst);

/// Total number of trainable scalars.
std::int64_t parameter_count(const torch::nn::Module& module);

/// Converts floating-point parameters and buffers only; integer buffers such
/// as BatchNorm's batch counter keep their type.
void to_float_dtype(torch::nn::Module& module, torch::Dtype dtype);

}  // namespace coverpose

#endif  // COVERPOSE_TENSOR_UTIL_HPP
