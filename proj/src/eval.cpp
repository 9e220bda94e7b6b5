#include "coverpose/eval.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "coverpose/pose_nets.hpp"

namespace coverpose {

std::optional<double> head_norm(const KeypointSet& kps) {
  const int head = static_cast<int>(LspJoint::kHeadTop);
  const int thorax = static_cast<int>(LspJoint::kThorax);
  if (kps.size() <= std::max(head, thorax)) return std::nullopt;
  if (!kps[head].visible || !kps[thorax].visible) return std::nullopt;
  return std::hypot(kps[head].x - kps[thorax].x, kps[head].y - kps[thorax].y);
}

PCKhReport pckh(std::span<const KeypointSet> preds, std::span<const KeypointSet> gts, const PckhOptions& opts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("pckh: prediction and ground-truth counts differ");
  if (!(opts.threshold > 0.0)) throw std::invalid_argument("pckh: threshold must be positive");
  if (opts.norm == NormMode::kFixed && !(opts.fixed_length > 0.0)) {
    throw std::invalid_argument("pckh: fixed normalization length must be positive");
  }
  int k = 0;
  for (const KeypointSet& g : gts) k = std::max(k, g.size());

  PCKhReport report;
  report.threshold = opts.threshold;
  report.n_samples = static_cast<int>(gts.size());
  std::vector<long> joint_correct(static_cast<std::size_t>(k), 0);
  std::vector<long> joint_counted(static_cast<std::size_t>(k), 0);

  for (std::size_t i = 0; i < gts.size(); ++i) {
    const KeypointSet& gt = gts[i];
    const KeypointSet& pred = preds[i];
    if (pred.size() != gt.size()) throw std::invalid_argument("pckh: joint count mismatch");
    double norm = opts.fixed_length;
    if (opts.norm == NormMode::kHeadThorax) {
      const auto n = head_norm(gt);
      if (!n || !(*n > 0.0)) {
        ++report.excluded;
        continue;
      }
      norm = *n;
    }
    const double radius = opts.threshold * norm;
    for (int j = 0; j < gt.size(); ++j) {
      if (!gt[j].visible) continue;
      ++joint_counted[static_cast<std::size_t>(j)];
      if (!pred[j].visible) continue;
      const double d = std::hypot(pred[j].x - gt[j].x, pred[j].y - gt[j].y);
      if (d <= radius) ++joint_correct[static_cast<std::size_t>(j)];
    }
  }

  for (int j = 0; j < k; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    report.counted += joint_counted[jj];
    report.correct += joint_correct[jj];
    report.per_joint.push_back(joint_counted[jj] > 0
                                   ? 100.0 * static_cast<double>(joint_correct[jj]) / static_cast<double>(joint_counted[jj])
                                   : std::numeric_limits<double>::quiet_NaN());
  }
  report.aggregate =
      report.counted > 0 ? 100.0 * static_cast<double>(report.correct) / static_cast<double>(report.counted) : 0.0;
  return report;
}

std::vector<double> default_sweep_thresholds() {
  std::vector<double> out;
  for (int i = 1; i <= 20; ++i) out.push_back(0.05 * i);
  return out;
}

PCKhReport evaluate_model(PoseNet& net, std::span<const Sample> test_set, const PckhOptions& opts,
                          const std::string& method) {
  std::vector<ThermalImage> images;
  std::vector<KeypointSet> gts;
  images.reserve(test_set.size());
  gts.reserve(test_set.size());
  for (const Sample& s : test_set) {
    if (!s.keypoints) {
      throw std::invalid_argument("evaluate_model: unlabeled test sample " + s.subject_id + "/" + s.frame_id);
    }
    images.push_back(s.image);
    gts.push_back(*s.keypoints);
  }
  const std::vector<KeypointSet> preds = predict_keypoints(net, images);

  PCKhReport report = pckh(preds, gts, opts);
  report.method = method;
  report.backbone = std::string(to_string(net.config().backbone));

  const std::pair<const char*, DomainTag> cover_domains[] = {{"thin", DomainTag::kTargetThin},
                                                             {"thick", DomainTag::kTargetThick}};
  for (const auto& [name, tag] : cover_domains) {
    std::vector<KeypointSet> p, g;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
      if (test_set[i].domain != tag) continue;
      p.push_back(preds[i]);
      g.push_back(gts[i]);
    }
    if (!g.empty()) report.per_domain[name] = pckh(p, g, opts).aggregate;
  }

  for (double t : default_sweep_thresholds()) {
    PckhOptions o = opts;
    o.threshold = t;
    report.sweep.emplace_back(t, pckh(preds, gts, o).aggregate);
  }
  return report;
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json report_to_json(const PCKhReport& report) {
  nlohmann::json per_joint = nlohmann::json::array();
  for (double v : report.per_joint) per_joint.push_back(number_or_null(v));
  nlohmann::json per_domain = nlohmann::json::object();
  for (const auto& [name, v] : report.per_domain) per_domain[name] = number_or_null(v);
  nlohmann::json sweep = nlohmann::json::array();
  for (const auto& [t, v] : report.sweep) sweep.push_back({t, v});
  return {{"method", report.method},
          {"backbone", report.backbone},
          {"threshold", report.threshold},
          {"aggregate", report.aggregate},
          {"per_joint", per_joint},
          {"per_domain", per_domain},
          {"n_samples", report.n_samples},
          {"excluded", report.excluded},
          {"counted", report.counted},
          {"correct", report.correct},
          {"sweep", sweep}};
}

PCKhReport report_from_json(const nlohmann::json& j) {
  PCKhReport r;
  r.method = j.value("method", "");
  r.backbone = j.value("backbone", "");
  r.threshold = j.value("threshold", 0.5);
  r.aggregate = j.at("aggregate").get<double>();
  for (const auto& v : j.value("per_joint", nlohmann::json::array())) {
    r.per_joint.push_back(v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN());
  }
  const nlohmann::json per_domain = j.value("per_domain", nlohmann::json::object());
  for (const auto& [name, v] : per_domain.items()) {
    r.per_domain[name] = v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
  }
  r.n_samples = j.value("n_samples", 0);
  r.excluded = j.value("excluded", 0);
  r.counted = j.value("counted", 0L);
  r.correct = j.value("correct", 0L);
  for (const auto& pair : j.value("sweep", nlohmann::json::array())) {
    r.sweep.emplace_back(pair.at(0).get<double>(), pair.at(1).get<double>());
  }
  return r;
}

void write_report(const PCKhReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  os << report_to_json(report).dump(2) << '\n';
  if (!os) throw std::runtime_error("write_report: cannot write " + path.string());
}

PCKhReport read_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_report: cannot open " + path.string());
  return report_from_json(nlohmann::json::parse(is));
}

std::string ablation_table(std::span<const PCKhReport> reports) {
  std::size_t width = 6;
  for (const auto& r : reports) width = std::max(width, r.method.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "method" << " | backbone        | PCKh@"
     << (reports.empty() ? 0.5 : reports.front().threshold) << " |   thin |  thick\n";
  os << std::string(width, '-') << "-+-----------------+----------+--------+-------\n";
  auto cell = [](const PCKhReport& r, const char* key) {
    std::ostringstream c;
    auto it = r.per_domain.find(key);
    if (it == r.per_domain.end() || !std::isfinite(it->second)) {
      c << std::setw(6) << "-";
    } else {
      c << std::setw(6) << std::fixed << std::setprecision(2) << it->second;
    }
    return c.str();
  };
  for (const auto& r : reports) {
    os << std::left << std::setw(static_cast<int>(width)) << r.method << " | " << std::setw(15) << r.backbone
       << " | " << std::right << std::setw(8) << std::fixed << std::setprecision(2) << r.aggregate << " | "
       << cell(r, "thin") << " | " << cell(r, "thick") << '\n';
  }
  return os.str();
}

}  // namespace coverpose
