#ifndef COVERPOSE_EVAL_HPP
#define COVERPOSE_EVAL_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "coverpose/types.hpp"

namespace coverpose {

class PoseNet;

enum class NormMode { kHeadThorax, kFixed };

struct PckhOptions {
  double threshold = 0.5;
  NormMode norm = NormMode::kHeadThorax;
  double fixed_length = 1.0;  // used with NormMode::kFixed
};

struct PCKhReport {
  std::string method;
  std::string backbone;
  double threshold = 0.5;
  double aggregate = 0.0;
  std::vector<double> per_joint;  // NaN where a joint was never counted
  std::map<std::string, double> per_domain;
  int n_samples = 0;
  int excluded = 0;  // samples without a usable normalization length
  long counted = 0;  // visible ground-truth joints in the denominator
  long correct = 0;
  // PCKh@t for a sweep of thresholds, ascending.
  std::vector<std::pair<double, double>> sweep;
};

/// Head-top to thorax distance. nullopt when either joint is invisible.
std::optional<double> head_norm(const KeypointSet& kps);

/// A joint is correct iff ||pred - gt|| <= threshold * norm(gt). Invisible
/// ground-truth joints and samples without a positive norm are skipped;
/// invisible predictions count as wrong.
PCKhReport pckh(std::span<const KeypointSet> preds, std::span<const KeypointSet> gts, const PckhOptions& opts = {});

std::vector<double> default_sweep_thresholds();

/// Runs `net` over labeled test samples and reports overall and per cover
/// type ("thin", "thick") accuracy plus a threshold sweep.
PCKhReport evaluate_model(PoseNet& net, std::span<const Sample> test_set, const PckhOptions& opts = {},
                          const std::string& method = {});

nlohmann::json report_to_json(const PCKhReport& report);
PCKhReport report_from_json(const nlohmann::json& j);
void write_report(const PCKhReport& report, const std::filesystem::path& path);
PCKhReport read_report(const std::filesystem::path& path);

/// Plain-text table, one row per report in the given order.
std::string ablation_table(std::span<const PCKhReport> reports);

}  // namespace coverpose

#endif  // COVERPOSE_EVAL_HPP
