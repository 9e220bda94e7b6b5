#include "coverpose/tensor_util.hpp"

#include <cstring>
#include <stdexcept>

namespace coverpose {

namespace {

torch::Tensor image_view(const ThermalImage& img) {
  // from_blob does not own the memory; clone before the image goes away.
  return torch::from_blob(const_cast<float*>(img.pixels().data()), {1, 1, img.height(), img.width()},
                          torch::kFloat32)
      .clone();
}

}  // namespace

torch::Tensor images_to_tensor(std::span<const ThermalImage> images, Dims size) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  if (!size.positive()) throw std::invalid_argument("images_to_tensor: target size must be positive");
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const ThermalImage& img : images) {
    torch::Tensor t = image_view(img);
    if (img.dims() != size) {
      namespace F = torch::nn::functional;
      t = F::interpolate(t, F::InterpolateFuncOptions()
                                .size(std::vector<int64_t>{size.height, size.width})
                                .mode(torch::kBilinear)
                                .align_corners(false));
    }
    parts.push_back(t);
  }
  return torch::cat(parts, 0);
}

torch::Tensor images_to_tensor(std::span<const ThermalImage> images) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  return images_to_tensor(images, images.front().dims());
}

std::vector<ThermalImage> tensor_to_images(const torch::Tensor& batch) {
  if (batch.dim() != 4 || batch.size(1) != 1) {
    throw std::invalid_argument("tensor_to_images: expected a (B, 1, H, W) tensor");
  }
  torch::Tensor t = batch.detach().to(torch::kCPU, torch::kFloat32).clamp(0.0, 1.0).contiguous();
  const auto h = static_cast<int>(t.size(2));
  const auto w = static_cast<int>(t.size(3));
  std::vector<ThermalImage> out;
  out.reserve(static_cast<std::size_t>(t.size(0)));
  for (int64_t b = 0; b < t.size(0); ++b) {
    const float* p = t[b].data_ptr<float>();
    out.emplace_back(h, w, std::vector<float>(p, p + static_cast<std::size_t>(h) * w));
  }
  return out;
}

torch::Tensor heatmaps_to_tensor(const HeatmapStack& hm) {
  return torch::from_blob(const_cast<float*>(hm.data.data()), {hm.joints, hm.dims.height, hm.dims.width},
                          torch::kFloat32)
      .clone();
}

std::vector<HeatmapStack> tensor_to_heatmaps(const torch::Tensor& batch, double stride) {
  if (batch.dim() != 4) throw std::invalid_argument("tensor_to_heatmaps: expected a (B, K, h, w) tensor");
  torch::Tensor t = batch.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  const auto k = static_cast<int>(t.size(1));
  const Dims dims{static_cast<int>(t.size(2)), static_cast<int>(t.size(3))};
  std::vector<HeatmapStack> out;
  out.reserve(static_cast<std::size_t>(t.size(0)));
  for (int64_t b = 0; b < t.size(0); ++b) {
    HeatmapStack hm(k, dims, stride);
    std::memcpy(hm.data.data(), t[b].data_ptr<float>(), hm.data.size() * sizeof(float));
    out.push_back(std::move(hm));
  }
  return out;
}

ThermalImage resize_image(const ThermalImage& img, Dims size) {
  if (img.dims() == size) return img;
  std::array<ThermalImage, 1> one{img};
  return tensor_to_images(images_to_tensor(one, size)).front();
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const torch::Tensor& tensor) {
    torch::Tensor t = tensor.detach().to(torch::kCPU).contiguous();
    const auto* bytes = static_cast<const unsigned char*>(t.data_ptr());
    const std::size_t n = static_cast<std::size_t>(t.numel()) * t.element_size();
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : module.parameters()) mix(p);
  for (const auto& b : module.buffers()) mix(b);
  return h;
}

void copy_state(const torch::nn::Module& src, torch::nn::Module& dst) {
  torch::NoGradGuard no_grad;
  auto src_params = src.named_parameters();
  auto dst_params = dst.named_parameters();
  auto src_buffers = src.named_buffers();
  auto dst_buffers = dst.named_buffers();
  if (src_params.size() != dst_params.size() || src_buffers.size() != dst_buffers.size()) {
    throw std::invalid_argument("copy_state: modules have different structure");
  }
  for (const auto& item : src_params) {
    torch::Tensor* target = dst_params.find(item.key());
    if (target == nullptr || !target->sizes().equals(item.value().sizes())) {
      throw std::invalid_argument("copy_state: parameter mismatch at " + item.key());
    }
    target->copy_(item.value());
  }
  for (const auto& item : src_buffers) {
    torch::Tensor* target = dst_buffers.find(item.key());
    if (target == nullptr || !target->sizes().equals(item.value().sizes())) {
      throw std::invalid_argument("copy_state: buffer mismatch at " + item.key());
    }
    target->copy_(item.value());
  }
}

void to_float_dtype(torch::nn::Module& module, torch::Dtype dtype) {
  torch::NoGradGuard no_grad;
  for (auto& p : module.parameters()) {
    if (p.is_floating_point()) p.set_data(p.to(dtype));
  }
  for (auto& b : module.buffers()) {
    if (b.is_floating_point()) b.set_data(b.to(dtype));
  }
}

std::int64_t parameter_count(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace coverpose
