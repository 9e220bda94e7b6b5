// Acceptance checks, one line per criterion. Exit status is non-zero when any
// criterion fails.
#include <chrono>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "coverpose/cycaug.hpp"
#include "coverpose/data_io.hpp"
#include "coverpose/distill.hpp"
#include "coverpose/eval.hpp"
#include "coverpose/extreme_aug.hpp"
#include "coverpose/heatmap.hpp"
#include "coverpose/pipeline.hpp"
#include "coverpose/pose_nets.hpp"
#include "coverpose/tensor_util.hpp"
#include "support.hpp"

#include <boost/math/distributions/chi_squared.hpp>

using namespace coverpose;
using namespace coverpose::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

std::vector<KeypointSet> noisy_copy(Rng& rng, const std::vector<KeypointSet>& gts, double sigma) {
  std::normal_distribution<double> noise(0.0, sigma);
  std::bernoulli_distribution drop(0.1);
  std::vector<KeypointSet> out = gts;
  for (auto& k : out) {
    for (auto& j : k.joints) {
      j.x += noise(rng);
      j.y += noise(rng);
      if (drop(rng)) j.visible = false;
    }
  }
  return out;
}

Outcome pckh_oracle_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(101);
  int mismatches = 0;
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<KeypointSet> gts;
    for (int i = 0; i < 1 + inst % 9; ++i) gts.push_back(random_keypoints(rng, 14, {160, 120}, 0.75));
    const auto preds = noisy_copy(rng, gts, 4.0 + inst % 7);
    const double t = 0.1 + 0.1 * (inst % 10);
    PckhOptions opts;
    opts.threshold = t;
    const PCKhReport r = pckh(preds, gts, opts);
    const PckhCount c = pckh_oracle(preds, gts, t);
    if (!same_bits(r.aggregate, c.aggregate()) || r.correct != c.correct || r.counted != c.counted) ++mismatches;
  }
  const double s = seconds_since(t0);
  return {mismatches == 0 && s < 5.0, std::to_string(mismatches) + " mismatches in 50 instances, " + fmt(s, 3) + " s"};
}

Outcome heatmap_round_trip() {
  const auto t0 = Clock::now();
  const double stride = 4.0, sigma = 2.0;
  Rng rng(102);
  double worst = 0.0;
  int n = 0;
  while (n < 1000) {
    const KeypointSet k = random_keypoints(rng, 10, {256, 192}, 1.0, 3.0 * sigma * stride);
    const KeypointSet back = decode_heatmaps(encode_heatmaps(k, {64, 48}, stride, sigma), stride);
    for (int j = 0; j < k.size(); ++j, ++n) {
      worst = back[j].visible ? std::max(worst, std::hypot(back[j].x - k[j].x, back[j].y - k[j].y)) : 1e9;
    }
  }
  const double s = seconds_since(t0);
  return {worst <= 0.5 * stride && s < 10.0,
          "max error " + fmt(worst, 3) + " px over " + std::to_string(n) + " joints, " + fmt(s, 3) + " s"};
}

Outcome gradient_checks() {
  std::vector<std::string> bad;
  double worst = 0.0;
  auto record = [&](const std::string& name, double err, std::int64_t params) {
    worst = std::max(worst, err);
    if (!(err < 1e-4) || params > 200) bad.push_back(name);
  };
  {
    auto net = toy_conv_net(1, 3, 2, 201);
    torch::manual_seed(202);
    const auto x = torch::rand({2, 1, 5, 4}, torch::kFloat64);
    const auto target = torch::rand({2, 2, 5, 4}, torch::kFloat64);
    record("sup_loss", gradient_check([&] { return sup_loss(net->forward(x), target); }, net->parameters()),
           count_params(*net));
    auto teacher = toy_conv_net(1, 3, 2, 203);
    record("kd_loss",
           gradient_check([&] { return kd_loss(net->forward(x), teacher->forward(x)); }, net->parameters()),
           count_params(*net));
  }
  auto g = toy_conv_net(1, 2, 1, 204);
  auto f = toy_conv_net(1, 2, 1, 205);
  auto dx = toy_conv_net(1, 2, 1, 206);
  auto dy = toy_conv_net(1, 2, 1, 207);
  torch::manual_seed(208);
  const auto x = torch::rand({1, 1, 5, 5}, torch::kFloat64);
  const auto y = torch::rand({1, 1, 5, 5}, torch::kFloat64);
  std::vector<torch::Tensor> gf = g->parameters();
  for (const auto& p : f->parameters()) gf.push_back(p);
  std::vector<torch::Tensor> all = gf;
  for (const auto& p : dx->parameters()) all.push_back(p);
  for (const auto& p : dy->parameters()) all.push_back(p);
  std::int64_t n_gf = 0, n_all = 0;
  for (const auto& p : gf) n_gf += p.numel();
  for (const auto& p : all) n_all += p.numel();
  record("cycle_loss",
         gradient_check([&] { return cycle_loss(f->forward(g->forward(x)), x, g->forward(f->forward(y)), y); }, gf),
         n_gf);
  record("identity_loss", gradient_check([&] { return identity_loss(g->forward(y), y, f->forward(x), x); }, gf), n_gf);
  for (AdversarialMode mode : {AdversarialMode::kLeastSquares, AdversarialMode::kLog}) {
    auto loss = [&] {
      const auto gx = g->forward(x);
      const auto fy = f->forward(y);
      CycleGanLossTerms<torch::Tensor> t{adversarial_terms(dy->forward(y), dy->forward(gx), mode).generator,
                                         adversarial_terms(dx->forward(x), dx->forward(fy), mode).generator,
                                         cycle_loss(f->forward(gx), x, g->forward(fy), y),
                                         identity_loss(g->forward(y), y, f->forward(x), x)};
      return total_loss(t, 10.0, 5.0);
    };
    record("total_loss/" + std::string(to_string(mode)), gradient_check(loss, all), n_all);
  }
  std::ostringstream os;
  os << "worst relative error " << std::scientific << std::setprecision(2) << worst << " over 6 checks";
  std::string detail = os.str();
  for (const auto& b : bad) detail += "; failed " + b;
  return {bad.empty(), detail};
}

Outcome loss_identities() {
  torch::manual_seed(301);
  const auto x = torch::rand({2, 1, 6, 5}, torch::kFloat64);
  const auto y = torch::rand({2, 1, 6, 5}, torch::kFloat64);
  const auto hm = torch::rand({2, 14, 8, 6}, torch::kFloat64);
  const auto ones = torch::ones({2, 1, 4, 4}, torch::kFloat64);
  const auto zeros = torch::zeros({2, 1, 4, 4}, torch::kFloat64);
  const AdversarialLosses ls = adversarial_terms(ones, zeros, AdversarialMode::kLeastSquares);
  const AdversarialLosses ls_fooled = adversarial_terms(ones, ones, AdversarialMode::kLeastSquares);
  const std::vector<std::pair<std::string, double>> zero_cases = {
      {"cycle", cycle_loss(x, x, y, y).item<double>()},
      {"identity", identity_loss(y, y, x, x).item<double>()},
      {"adversarial (discriminator, perfect)", ls.discriminator.item<double>()},
      {"adversarial (generator, fooled)", ls_fooled.generator.item<double>()},
      {"sup_loss", sup_loss(hm, hm).item<double>()},
      {"kd_loss", kd_loss(hm, hm).item<double>()},
  };
  std::string detail;
  bool ok = true;
  for (const auto& [name, v] : zero_cases) {
    if (v != 0.0) {
      ok = false;
      detail += name + " = " + fmt(v, 9) + "; ";
    }
  }
  const double composite = total_loss(CycleGanLossTerms<double>{0.5, 0.5, 0.1, 0.02}, 10.0, 5.0);
  ok = ok && std::abs(composite - 2.1) < 1e-12;
  detail += "identity cases zero, composite total = " + fmt(composite, 12);
  return {ok, detail};
}

Outcome extreme_aug_invariants() {
  const auto t0 = Clock::now();
  ExtremeAugConfig cfg;
  cfg.seed = 401;
  PhantomConfig pc;
  bool deterministic = true;
  int energy_violations = 0;
  for (int n = 0; n < 100; ++n) {
    Rng rng = substream(402, static_cast<std::uint64_t>(n));
    const Phantom ph = render_phantom(sample_pose(rng, pc.image_dims), pc, CoverSimulation::kNone, rng);
    const ThermalImage a = extreme_aug(ph.image, cfg, static_cast<std::uint64_t>(n));
    const ThermalImage b = extreme_aug(ph.image, cfg, static_cast<std::uint64_t>(n));
    deterministic = deterministic && std::memcmp(a.pixels().data(), b.pixels().data(), a.pixels().size() * 4) == 0;
    if (!(a.mean() <= ph.image.mean())) ++energy_violations;
  }

  Rng rng(403);
  const int h = 160;
  std::vector<int> counts(static_cast<std::size_t>(h / 4 - h / 8), 0);
  bool in_band = true;
  for (int n = 0; n < 10000; ++n) {
    const int r = select_cover_line(rng, h);
    if (r < h / 8 || r >= h / 4) {
      in_band = false;
      continue;
    }
    ++counts[static_cast<std::size_t>(r - h / 8)];
  }
  const double expected = 10000.0 / static_cast<double>(counts.size());
  double stat = 0.0;
  for (int c : counts) stat += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
  const double p = boost::math::cdf(boost::math::complement(dist, stat));
  const double s = seconds_since(t0);
  return {deterministic && in_band && p > 0.01 && energy_violations == 0 && s < 30.0,
          std::string(deterministic ? "bit-identical" : "NOT deterministic") + ", cover line " +
              (in_band ? "in band" : "OUT of band") + ", chi2 p = " + fmt(p, 3) + ", " +
              std::to_string(energy_violations) + "/100 energy increases, " + fmt(s, 2) + " s"};
}

std::vector<Sample> covered_samples(int n, std::uint64_t seed, Dims dims) {
  PhantomConfig pc;
  pc.image_dims = dims;
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Rng rng = substream(seed, static_cast<std::uint64_t>(i));
    const bool thin = i % 2 == 0;
    Phantom ph = render_phantom(sample_pose(rng, dims), pc, thin ? CoverSimulation::kThin : CoverSimulation::kThick, rng);
    out.push_back({std::move(ph.image), std::nullopt, thin ? DomainTag::kTargetThin : DomainTag::kTargetThick,
                   "t" + std::to_string(i % 4), "image_" + std::to_string(i)});
  }
  return out;
}

Outcome distillation_clone_contract() {
  const PipelineConfig toy = PipelineConfig::for_profile(Profile::kToy);
  torch::manual_seed(501);
  PoseNet teacher = build_pose_net(toy.pose_net);
  teacher.train(false);
  PoseNet student = clone_pose_net(teacher);
  student.train(false);
  bool identical = false;
  {
    torch::NoGradGuard no_grad;
    const auto x = torch::rand({4, 1, toy.pose_net.input_dims.height, toy.pose_net.input_dims.width});
    identical = torch::equal(student.forward(x), teacher.forward(x));
  }
  DistillConfig cfg = toy.distill;
  cfg.epochs = 3;
  const std::uint64_t before = parameter_hash(teacher.module());
  const auto targets = covered_samples(32, 502, toy.phantoms.image_dims);
  std::vector<std::uint64_t> per_epoch;
  const DistillResult r =
      distill(teacher, targets, cfg, {}, [&](const DistillEpochRecord&) { per_epoch.push_back(parameter_hash(teacher.module())); });
  bool constant = r.teacher_hash_before == before && r.teacher_hash_after == before;
  for (std::uint64_t h : per_epoch) constant = constant && h == before;
  return {identical && constant && r.initial_kd_loss == 0.0 && per_epoch.size() == 3,
          std::string(identical ? "outputs identical" : "outputs DIFFER") + ", initial kd loss " +
              fmt(r.initial_kd_loss, 6) + ", teacher hash " + (constant ? "constant" : "CHANGED") + " over " +
              std::to_string(per_epoch.size()) + " epochs"};
}

Outcome lr_schedule() {
  const PoseTrainConfig cfg;
  const double a = lr_at_epoch(cfg, 0), b = lr_at_epoch(cfg, 45), c = lr_at_epoch(cfg, 60);
  bool monotone = true;
  for (int e = 1; e < cfg.epochs; ++e) monotone = monotone && lr_at_epoch(cfg, e) <= lr_at_epoch(cfg, e - 1);
  std::ostringstream os;
  os << std::setprecision(17) << a << " / " << b << " / " << c;
  return {a == 2.5e-4 && b == 2.5e-5 && c == 2.5e-6 && monotone, os.str()};
}

double window_mean(const nlohmann::json& history, std::size_t from, std::size_t count) {
  double s = 0.0;
  for (std::size_t i = from; i < from + count; ++i) s += history.at(i).at("total").get<double>();
  return s / static_cast<double>(count);
}

Outcome end_to_end(const fs::path& out) {
  const auto t0 = Clock::now();
  PipelineConfig cfg = PipelineConfig::for_profile(Profile::kToy);
  cfg.out = out;
  std::ofstream log(out.parent_path() / (out.filename().string() + ".log"));
  auto run = [&](Stage s, StageOptions o = {}) {
    const StageResult r = run_stage(s, cfg, o, log);
    if (r.exit_code != 0) {
      throw std::runtime_error(std::string(to_string(s)) + " exited " + std::to_string(r.exit_code) + ": " + r.message);
    }
  };
  run(Stage::kSynthGen);
  run(Stage::kCycAugTrain);
  run(Stage::kAugment);
  for (PoseMethod m : {PoseMethod::kSource, PoseMethod::kCycAug, PoseMethod::kExtreme}) {
    StageOptions o;
    o.method = m;
    run(Stage::kPoseTrain, o);
  }
  run(Stage::kDistill);
  run(Stage::kEval);
  run(Stage::kPlot);
  const double s = seconds_since(t0);

  // (a) CycAug loss: mean of the last 20 iterations below the first 20.
  bool cyc_ok = true;
  std::string cyc_detail;
  for (const char* cover : {"thin", "thick"}) {
    std::ifstream is(out / "cycaug" / cover / "history.json");
    const nlohmann::json h = nlohmann::json::parse(is);
    const double first = window_mean(h, 0, 20);
    const double last = window_mean(h, h.size() - 20, 20);
    cyc_ok = cyc_ok && h.size() == 200 && last < first;
    cyc_detail += std::string(cover) + " " + fmt(first) + "->" + fmt(last) + " ";
  }
  // (b) and (c) on the covered test set.
  const double source = read_report(out / "eval" / "source.json").aggregate;
  const double cycaug = read_report(out / "eval" / "cycaug.json").aggregate;
  const double extreme = read_report(out / "eval" / "extreme.json").aggregate;
  const double kd = read_report(out / "eval" / "kd.json").aggregate;
  const bool gain_ok = extreme - source >= 10.0;
  const bool kd_ok = kd >= extreme - 2.0;

  std::ifstream table_file(out / "eval" / "table.txt");
  std::stringstream table;
  table << table_file.rdbuf();
  const std::string t = table.str();
  std::size_t pos = 0;
  bool rows_ok = true;
  for (const auto& row : ablation_rows()) {
    const std::size_t at = t.find("\n" + std::string(row.label) + " ", pos);
    rows_ok = rows_ok && at != std::string::npos;
    pos = at == std::string::npos ? pos : at + 1;
  }
  const bool plots_ok = fs::exists(out / "plots" / "curve.svg") && fs::exists(out / "plots" / "per_joint.svg");
  const bool time_ok = s <= 900.0;
  return {cyc_ok && gain_ok && kd_ok && rows_ok && plots_ok && time_ok,
          "(a) cycaug loss " + cyc_detail + (cyc_ok ? "ok" : "FAIL") + "; (b) PCKh source " + fmt(source) +
              ", +CycAug " + fmt(cycaug) + ", +ExtremeAug " + fmt(extreme) + " (gain " + fmt(extreme - source) +
              (gain_ok ? " ok" : " FAIL") + "); (c) +KD " + fmt(kd) + " (change " + fmt(kd - extreme) +
              (kd_ok ? " ok" : " FAIL") + "); table " + (rows_ok ? "4 rows" : "BAD") + ", plots " +
              (plots_ok ? "ok" : "MISSING") + "; " + fmt(s, 0) + " s"};
}

Outcome dataset_round_trip(const fs::path& scratch) {
  PhantomConfig pc;
  pc.source_subjects = 3;
  pc.thin_subjects = 2;
  pc.thick_subjects = 2;
  pc.test_subjects = 2;
  pc.poses_per_subject = 3;
  pc.seed = 901;
  gen_phantoms(pc, scratch / "data");
  const DatasetManifest m = load_dataset(scratch / "data");
  bool ok = m.subject_count() == 9;
  ok = ok && m.records(Split::kTrainSource).size() == 9 && m.records(Split::kTrainThin).size() == 6 &&
       m.records(Split::kTrainThick).size() == 6 && m.records(Split::kTest).size() == 12;
  for (const auto& r : m.records(Split::kTrainSource)) ok = ok && r.keypoints.has_value();
  for (Split s : {Split::kTrainThin, Split::kTrainThick}) {
    for (const auto& r : m.records(s)) ok = ok && !r.keypoints.has_value();
  }
  int thin = 0, thick = 0;
  for (const auto& r : m.records(Split::kTest)) {
    ok = ok && r.keypoints.has_value();
    thin += r.domain == DomainTag::kTargetThin;
    thick += r.domain == DomainTag::kTargetThick;
  }
  ok = ok && thin == 6 && thick == 6;
  for (Split s : kAllSplits) {
    for (const Sample& smp : load_split(m, s)) {
      if (!smp.keypoints) continue;
      for (const Joint& j : smp.keypoints->joints) {
        ok = ok && j.x >= 0 && j.y >= 0 && j.x <= pc.image_dims.width - 1 && j.y <= pc.image_dims.height - 1;
      }
    }
  }

  const PipelineConfig toy = PipelineConfig::for_profile(Profile::kToy);
  torch::manual_seed(902);
  PoseNet net = build_pose_net(toy.pose_net);
  save_pose_checkpoint(net, pose_meta(net, 902, 7, 42.0), scratch / "ckpt" / "best.bin");
  CheckpointMeta meta;
  PoseNet back = load_pose_checkpoint(scratch / "ckpt" / "best.bin", toy.pose_net, &meta);
  bool bytes_ok = meta.epoch == 7;
  const auto a = net.module().named_parameters();
  const auto b = back.module().named_parameters();
  bytes_ok = bytes_ok && a.size() == b.size();
  for (const auto& item : a) {
    const auto x = item.value().contiguous();
    const auto y = b[item.key()].contiguous();
    bytes_ok = bytes_ok && x.sizes() == y.sizes() &&
               std::memcmp(x.data_ptr(), y.data_ptr(), x.numel() * x.element_size()) == 0;
  }
  return {ok && bytes_ok, std::string("manifest ") + (ok ? "valid" : "INVALID") + " (" +
                              std::to_string(m.subject_count()) + " subjects), checkpoint " +
                              (bytes_ok ? "byte-equal" : "DIFFERS")};
}

Outcome metric_properties() {
  Rng rng(1001);
  int failures = 0;
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<KeypointSet> gts;
    for (int i = 0; i < 5 + inst % 10; ++i) {
      KeypointSet k = random_keypoints(rng, 14, {160, 120}, 0.85);
      k[12].visible = k[13].visible = true;
      gts.push_back(k);
    }
    const auto preds = noisy_copy(rng, gts, 5.0 + inst % 9);
    double last = -1.0;
    for (double t : default_sweep_thresholds()) {
      PckhOptions o;
      o.threshold = t;
      const double v = pckh(preds, gts, o).aggregate;
      if (v < last) ++failures;
      last = v;
    }
    const PCKhReport base = pckh(preds, gts);
    const double c = std::ldexp(1.0, inst % 7 - 3);  // powers of two keep the comparison exact
    auto scaled = [c](std::vector<KeypointSet> v) {
      for (auto& k : v) {
        for (auto& j : k.joints) {
          j.x *= c;
          j.y *= c;
        }
      }
      return v;
    };
    if (pckh(scaled(preds), scaled(gts)).aggregate != base.aggregate) ++failures;
    std::vector<std::size_t> order(gts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<KeypointSet> pg, pp;
    for (std::size_t i : order) {
      pg.push_back(gts[i]);
      pp.push_back(preds[i]);
    }
    if (pckh(pp, pg).aggregate != base.aggregate) ++failures;
  }
  return {failures == 0, std::to_string(failures) + " violations over 50 instances"};
}

}  // namespace

int main() {
  torch::set_num_threads(1);
  TempDir scratch("acceptance");
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"PCKh oracle equivalence", pckh_oracle_equivalence},
      {"heatmap codec round trip", heatmap_round_trip},
      {"gradient checks", gradient_checks},
      {"loss identities", loss_identities},
      {"ExtremeAug invariants", extreme_aug_invariants},
      {"distillation clone contract", distillation_clone_contract},
      {"learning-rate schedule", lr_schedule},
      {"end-to-end toy trend", [&] { return end_to_end(scratch.path() / "pipeline"); }},
      {"dataset and checkpoint round trip", [&] { return dataset_round_trip(scratch.path()); }},
      {"metric properties", metric_properties},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
