#include "prelude.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "coverpose/eval.hpp"
#include "coverpose/heatmap.hpp"
#include "coverpose/pose_nets.hpp"
#include "coverpose/tensor_util.hpp"
#include "support.hpp"

using namespace coverpose;
using namespace coverpose::testing;

namespace {

KeypointSet head_thorax(double hx, double hy, double tx, double ty) {
  KeypointSet k(kDefaultJointCount);
  k[13] = {hx, hy, true};
  k[12] = {tx, ty, true};
  return k;
}

// Replays queued heatmap batches regardless of its input.
class ScriptedBackbone : public PoseBackboneImpl {
 public:
  explicit ScriptedBackbone(std::deque<torch::Tensor> maps) : maps_(std::move(maps)) {}
  torch::Tensor forward(torch::Tensor x) override {
    std::vector<torch::Tensor> out;
    for (int64_t b = 0; b < x.size(0); ++b) {
      out.push_back(maps_.front());
      maps_.pop_front();
    }
    return torch::stack(out);
  }

 private:
  std::deque<torch::Tensor> maps_;
};

PoseNetConfig scripted_config() {
  PoseNetConfig cfg;
  cfg.n_stacks = 1;
  cfg.hourglass_depth = 2;
  cfg.channels = 8;
  cfg.input_dims = {128, 96};
  cfg.heatmap_dims = {32, 24};
  return cfg;
}

std::vector<Sample> labeled_test_set(Rng& rng, int n) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    KeypointSet k = random_keypoints(rng, kDefaultJointCount, {160, 120}, 1.0, 8.0);
    k[12] = {60.0, 50.0, true};
    k[13] = {60.0, 20.0, true};
    out.push_back({ThermalImage(160, 120, 0.3f), k, i % 2 ? DomainTag::kTargetThick : DomainTag::kTargetThin,
                   "s1", "image_" + std::to_string(i)});
  }
  return out;
}

}  // namespace

TEST_CASE("head normalization") {
  CHECK(*head_norm(head_thorax(10, 10, 10, 20)) == 10.0);
  CHECK(*head_norm(head_thorax(3, 0, 0, 4)) == 5.0);
  CHECK(*head_norm(head_thorax(7, 7, 7, 7)) == 0.0);
  KeypointSet hidden = head_thorax(1, 2, 3, 4);
  hidden[13].visible = false;
  CHECK_FALSE(head_norm(hidden).has_value());

  const KeypointSet degenerate = head_thorax(7, 7, 7, 7);
  const std::vector<KeypointSet> v{degenerate};
  const PCKhReport r = pckh(v, v);
  CHECK(r.excluded == 1);
  CHECK(r.counted == 0);
}

TEST_CASE("pckh hand-counted example") {
  // Three visible joints at distances 3, 7 and 4 from the truth; radius 5.
  KeypointSet g(3), p(3);
  g.joints = {{50, 50, true}, {20, 20, true}, {80, 30, true}};
  p.joints = {{53, 50, true}, {20, 27, true}, {80, 34, true}};
  const std::vector<KeypointSet> gts{g}, preds{p};
  PckhOptions opts;
  opts.norm = NormMode::kFixed;
  opts.fixed_length = 10.0;
  const PCKhReport r = pckh(preds, gts, opts);
  CHECK(r.counted == 3);
  CHECK(r.correct == 2);
  CHECK(r.aggregate == doctest::Approx(66.67).epsilon(1e-4));

  // The same case with the head-thorax length supplying the norm.
  KeypointSet g2 = head_thorax(0, 0, 0, 10);
  for (int j = 0; j < 12; ++j) g2[j].visible = false;
  g2[0] = {50, 50, true};
  g2[1] = {20, 20, true};
  g2[2] = {80, 30, true};
  KeypointSet p2 = g2;
  p2[0] = {53, 50, true};
  p2[1] = {20, 27, true};
  p2[2] = {80, 34, true};
  const PCKhReport r2 = pckh(std::vector<KeypointSet>{p2}, std::vector<KeypointSet>{g2});
  CHECK(r2.counted == 5);
  CHECK(r2.correct == 4);  // head and thorax are exact
}

TEST_CASE("boundary counts as correct and length mismatch is rejected") {
  KeypointSet g(1), p(1);
  g[0] = {0, 0, true};
  p[0] = {3, 4, true};
  PckhOptions opts;
  opts.norm = NormMode::kFixed;
  opts.fixed_length = 10.0;
  CHECK(pckh(std::vector<KeypointSet>{p}, std::vector<KeypointSet>{g}, opts).aggregate == 100.0);
  CHECK_THROWS_AS(pckh(std::vector<KeypointSet>{p, p}, std::vector<KeypointSet>{g}, opts), std::invalid_argument);
  opts.threshold = 0.0;
  CHECK_THROWS_AS(pckh(std::vector<KeypointSet>{p}, std::vector<KeypointSet>{g}, opts), std::invalid_argument);
}

TEST_CASE("identical predictions score 100") {
  Rng rng(8);
  std::vector<KeypointSet> gts;
  for (int n = 0; n < 20; ++n) {
    KeypointSet k = random_keypoints(rng, 14, {160, 120}, 0.7);
    k[12].visible = k[13].visible = true;
    gts.push_back(k);
  }
  CHECK(pckh(gts, gts).aggregate == 100.0);
}

TEST_CASE("pckh matches a straight-line oracle") {
  Rng rng(9);
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<KeypointSet> gts, preds;
    const int n = 1 + inst % 7;
    for (int i = 0; i < n; ++i) {
      KeypointSet g = random_keypoints(rng, 14, {160, 120}, 0.8);
      KeypointSet p = g;
      std::normal_distribution<double> noise(0.0, 6.0 + inst % 5);
      std::bernoulli_distribution drop(0.1);
      for (auto& j : p.joints) {
        j.x += noise(rng);
        j.y += noise(rng);
        if (drop(rng)) j.visible = false;
      }
      gts.push_back(g);
      preds.push_back(p);
    }
    const double t = 0.25 + 0.05 * (inst % 10);
    PckhOptions opts;
    opts.threshold = t;
    const PCKhReport r = pckh(preds, gts, opts);
    const PckhCount c = pckh_oracle(preds, gts, t);
    CHECK(r.correct == c.correct);
    CHECK(r.counted == c.counted);
    CHECK(r.aggregate == c.aggregate());
  }
}

TEST_CASE("pckh is monotone, scale invariant and order invariant") {
  Rng rng(10);
  std::vector<KeypointSet> gts, preds;
  for (int i = 0; i < 30; ++i) {
    KeypointSet g = random_keypoints(rng, 14, {160, 120}, 0.9);
    g[12].visible = g[13].visible = true;
    KeypointSet p = random_keypoints(rng, 14, {160, 120}, 0.95);
    for (int j = 0; j < 14; ++j) {
      p[j].x = 0.7 * g[j].x + 0.3 * p[j].x;
      p[j].y = 0.7 * g[j].y + 0.3 * p[j].y;
    }
    gts.push_back(g);
    preds.push_back(p);
  }
  double last = -1.0;
  for (double t = 0.05; t <= 2.0; t += 0.05) {
    PckhOptions opts;
    opts.threshold = t;
    const double a = pckh(preds, gts, opts).aggregate;
    CHECK(a >= last);
    last = a;
  }

  const PCKhReport base = pckh(preds, gts);
  for (double c : {2.0, 0.5, 8.0}) {
    auto scale = [c](std::vector<KeypointSet> v) {
      for (auto& k : v) {
        for (auto& j : k.joints) {
          j.x *= c;
          j.y *= c;
        }
      }
      return v;
    };
    const PCKhReport scaled = pckh(scale(preds), scale(gts));
    CHECK(scaled.correct == base.correct);
    CHECK(scaled.aggregate == base.aggregate);
  }

  std::vector<std::size_t> order(gts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<KeypointSet> pg, pp;
  for (std::size_t i : order) {
    pg.push_back(gts[i]);
    pp.push_back(preds[i]);
  }
  CHECK(pckh(pp, pg).aggregate == base.aggregate);
}

TEST_CASE("evaluate_model with an oracle and with a blank model") {
  Rng rng(11);
  const auto test_set = labeled_test_set(rng, 20);
  const PoseNetConfig cfg = scripted_config();

  std::deque<torch::Tensor> oracle, blank;
  for (const Sample& s : test_set) {
    const KeypointSet scaled = rescale_keypoints(*s.keypoints, s.image.dims(), cfg.input_dims);
    oracle.push_back(heatmaps_to_tensor(encode_heatmaps(scaled, cfg.heatmap_dims, cfg.stride(), 2.0)));
    blank.push_back(torch::zeros({14, 32, 24}));
  }
  PoseNet oracle_net(cfg, std::make_shared<ScriptedBackbone>(oracle));
  const PCKhReport good = evaluate_model(oracle_net, test_set, {}, "oracle");
  CHECK(good.aggregate == 100.0);
  CHECK(good.per_domain.at("thin") == 100.0);
  CHECK(good.per_domain.at("thick") == 100.0);
  CHECK(good.method == "oracle");
  CHECK(good.n_samples == 20);
  CHECK(good.sweep.size() == default_sweep_thresholds().size());

  PoseNet blank_net(cfg, std::make_shared<ScriptedBackbone>(blank));
  const PCKhReport bad = evaluate_model(blank_net, test_set);
  CHECK(bad.aggregate == 0.0);
  CHECK(bad.counted == good.counted);

  auto unlabeled = test_set;
  unlabeled[4].keypoints.reset();
  PoseNet net(cfg, std::make_shared<ScriptedBackbone>(oracle));
  CHECK_THROWS_AS(evaluate_model(net, unlabeled), std::invalid_argument);
}

TEST_CASE("report JSON round trip and table") {
  PCKhReport r;
  r.method = "+KD";
  r.backbone = "hourglass";
  r.aggregate = 61.25;
  r.per_joint.assign(14, 50.0);
  r.per_joint[3] = std::nan("");
  r.per_domain = {{"thin", 70.0}, {"thick", 52.5}};
  r.n_samples = 40;
  r.excluded = 2;
  r.counted = 520;
  r.correct = 318;
  r.sweep = {{0.25, 30.0}, {0.5, 61.25}};
  TempDir dir("report");
  write_report(r, dir.path() / "kd.json");
  const PCKhReport back = read_report(dir.path() / "kd.json");
  CHECK(back.method == r.method);
  CHECK(back.aggregate == r.aggregate);
  CHECK(std::isnan(back.per_joint[3]));
  CHECK(back.per_joint[0] == 50.0);
  CHECK(back.per_domain == r.per_domain);
  CHECK(back.excluded == 2);
  CHECK(back.sweep == r.sweep);

  const auto j = report_to_json(r);
  for (const char* key : {"method", "backbone", "threshold", "aggregate", "per_joint", "per_domain", "n_samples",
                          "excluded"}) {
    CHECK(j.contains(key));
  }

  PCKhReport src = r;
  src.method = "source";
  src.aggregate = 40.0;
  const std::vector<PCKhReport> rows{src, r};
  const std::string table = ablation_table(rows);
  CHECK(table.find("source") < table.find("+KD"));
  CHECK(table.find("61.25") != std::string::npos);
  CHECK(table.find("52.50") != std::string::npos);
}
