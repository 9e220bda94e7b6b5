// Shared test helpers: independent oracles, finite differences, fixtures.
#ifndef COVERPOSE_TESTS_SUPPORT_HPP
#define COVERPOSE_TESTS_SUPPORT_HPP

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "coverpose/rng.hpp"
#include "coverpose/types.hpp"

namespace coverpose::testing {

inline KeypointSet random_keypoints(Rng& rng, int k, Dims dims, double p_visible = 1.0, double margin = 0.0) {
  std::uniform_real_distribution<double> ux(margin, dims.width - 1 - margin);
  std::uniform_real_distribution<double> uy(margin, dims.height - 1 - margin);
  std::bernoulli_distribution vis(p_visible);
  KeypointSet kps(k);
  for (auto& j : kps.joints) j = {ux(rng), uy(rng), vis(rng)};
  return kps;
}

// Straight-line PCKh: walk every (sample, joint) pair and add up indicators.
struct PckhCount {
  long correct = 0;
  long counted = 0;
  double aggregate() const { return counted > 0 ? 100.0 * static_cast<double>(correct) / counted : 0.0; }
};

inline PckhCount pckh_oracle(const std::vector<KeypointSet>& preds, const std::vector<KeypointSet>& gts,
                             double threshold) {
  PckhCount c;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const Joint& head = gts[i].joints[13];
    const Joint& thorax = gts[i].joints[12];
    if (!head.visible || !thorax.visible) continue;
    const double dx = head.x - thorax.x;
    const double dy = head.y - thorax.y;
    const double norm = std::sqrt(dx * dx + dy * dy);
    if (norm <= 0.0) continue;
    for (std::size_t j = 0; j < gts[i].joints.size(); ++j) {
      const Joint& g = gts[i].joints[j];
      const Joint& p = preds[i].joints[j];
      if (!g.visible) continue;
      c.counted += 1;
      const double ex = p.x - g.x;
      const double ey = p.y - g.y;
      if (p.visible && std::sqrt(ex * ex + ey * ey) <= threshold * norm) c.correct += 1;
    }
  }
  return c;
}

// Relative error between the analytic gradient of `loss` and central finite
// differences, taken over all entries of `params` (64-bit tensors).
inline double gradient_check(const std::function<torch::Tensor()>& loss, const std::vector<torch::Tensor>& params,
                             double eps = 1e-6) {
  for (const auto& p : params) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
  loss().backward();
  std::vector<double> analytic, numeric;
  for (const auto& p : params) {
    const torch::Tensor g = p.grad().defined() ? p.grad().flatten() : torch::zeros({p.numel()}, p.options());
    torch::NoGradGuard no_grad;
    torch::Tensor flat = p.view(-1);
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + eps;
      const double up = loss().item<double>();
      flat[i] = orig - eps;
      const double down = loss().item<double>();
      flat[i] = orig;
      numeric.push_back((up - down) / (2.0 * eps));
      analytic.push_back(g[i].item<double>());
    }
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / scale;
}

// conv3x3(in -> hidden) -> tanh -> conv3x3(hidden -> out), double precision.
inline torch::nn::Sequential toy_conv_net(int in, int hidden, int out, std::uint64_t seed) {
  torch::manual_seed(seed);
  torch::nn::Sequential net(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, hidden, 3).padding(1)),
                            torch::nn::Functional(torch::tanh),
                            torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, out, 3).padding(1)));
  net->to(torch::kFloat64);
  return net;
}

inline std::int64_t count_params(const torch::nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

// Fresh scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("coverpose_test_" + name + "_" +
                                                         std::to_string(std::random_device{}()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace coverpose::testing

#endif  // COVERPOSE_TESTS_SUPPORT_HPP
