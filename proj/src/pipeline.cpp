#include "coverpose/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "coverpose/errors.hpp"
#include "coverpose/rng.hpp"

namespace coverpose {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Profile p) { return p == Profile::kToy ? "toy" : "full"; }

Profile profile_from_string(std::string_view s) {
  if (s == "toy") return Profile::kToy;
  if (s == "full") return Profile::kFull;
  throw InvalidConfigError("unknown profile '" + std::string(s) + "' (expected toy or full)");
}

PipelineConfig PipelineConfig::for_profile(Profile p) {
  PipelineConfig cfg;
  cfg.profile = p;
  if (p == Profile::kFull) {
    // Paper settings where it gives them; framework defaults elsewhere.
    cfg.pose_net.input_dims = {256, 256};
    cfg.pose_net.heatmap_dims = {64, 64};
    cfg.pose_train.batch_size = 16;
    cfg.distill.batch_size = 16;
  } else {
    cfg.phantoms.source_subjects = 12;
    cfg.phantoms.thin_subjects = 8;
    cfg.phantoms.thick_subjects = 8;
    cfg.phantoms.test_subjects = 6;
    cfg.phantoms.poses_per_subject = 10;

    cfg.cycaug.iterations = 200;
    cfg.cycaug.generator = {16, 3};
    cfg.cycaug.discriminator = {16};

    cfg.pose_net.n_stacks = 1;
    cfg.pose_net.hourglass_depth = 3;
    cfg.pose_net.channels = 32;
    cfg.pose_net.encoder_depth = 1;
    cfg.pose_net.deconv_channels = 32;
    cfg.pose_net.input_dims = {128, 96};
    cfg.pose_net.heatmap_dims = {32, 24};

    cfg.pose_train.epochs = 60;
    cfg.pose_train.decay_epochs = {40, 52};
    cfg.pose_train.batch_size = 8;

    cfg.distill.epochs = 5;
    cfg.distill.batch_size = 8;
  }
  cfg.apply_seed(cfg.seed);
  return cfg;
}

void PipelineConfig::apply_seed(std::uint64_t s) {
  seed = s;
  phantoms.seed = splitmix64(s ^ 0x1001);
  cycaug.seed = splitmix64(s ^ 0x2002);
  extreme_aug.seed = splitmix64(s ^ 0x3003);
  pose_train.seed = splitmix64(s ^ 0x4004);
  distill.seed = splitmix64(s ^ 0x5005);
}

void PipelineConfig::validate() const {
  try {
    if (device != "cpu") {
      throw std::invalid_argument("device '" + device + "' is not available; this build runs on cpu only");
    }
    if (out.empty()) throw std::invalid_argument("output directory must not be empty");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must be in [0, 1)");
    phantoms.validate();
    cycaug.validate();
    extreme_aug.validate();
    pose_net.validate();
    pose_train.validate();
    distill.validate();
    if (!(eval.threshold > 0.0)) throw std::invalid_argument("eval threshold must be positive");
  } catch (const std::invalid_argument& e) {
    throw InvalidConfigError(e.what());
  }
}

namespace {

json extreme_to_json(const ExtremeAugConfig& c) {
  return {{"dim_factor_range", {c.dim_factor_range.first, c.dim_factor_range.second}},
          {"n_dark_kernels_range", {c.n_dark_kernels_range.first, c.n_dark_kernels_range.second}},
          {"dark_kernel_size", c.dark_kernel_size},
          {"erosion_kernel", c.erosion_kernel},
          {"blur_kernel", c.blur_kernel},
          {"blur_sigma", c.blur_sigma},
          {"seed", c.seed}};
}

void extreme_from_json(const json& j, ExtremeAugConfig& c) {
  if (j.contains("dim_factor_range")) {
    c.dim_factor_range = {j["dim_factor_range"].at(0).get<double>(), j["dim_factor_range"].at(1).get<double>()};
  }
  if (j.contains("n_dark_kernels_range")) {
    c.n_dark_kernels_range = {j["n_dark_kernels_range"].at(0).get<int>(), j["n_dark_kernels_range"].at(1).get<int>()};
  }
  c.dark_kernel_size = j.value("dark_kernel_size", c.dark_kernel_size);
  c.erosion_kernel = j.value("erosion_kernel", c.erosion_kernel);
  c.blur_kernel = j.value("blur_kernel", c.blur_kernel);
  c.blur_sigma = j.value("blur_sigma", c.blur_sigma);
  c.seed = j.value("seed", c.seed);
}

}  // namespace

json to_json(const PipelineConfig& cfg) {
  return {{"profile", to_string(cfg.profile)},
          {"seed", cfg.seed},
          {"device", cfg.device},
          {"out", cfg.out.string()},
          {"val_fraction", cfg.val_fraction},
          {"phantoms", cfg.phantoms},
          {"cycaug", cfg.cycaug},
          {"extreme_aug", extreme_to_json(cfg.extreme_aug)},
          {"pose_net", cfg.pose_net},
          {"pose_train", cfg.pose_train},
          {"distill", cfg.distill},
          {"eval",
           {{"threshold", cfg.eval.threshold},
            {"norm", cfg.eval.norm == NormMode::kHeadThorax ? "head" : "fixed"},
            {"fixed_length", cfg.eval.fixed_length}}}};
}

PipelineConfig pipeline_config_from_json(const json& j, std::optional<Profile> profile) {
  try {
    if (!j.is_object()) throw InvalidConfigError("config must be a JSON object");
    const Profile p = profile ? *profile : profile_from_string(j.value("profile", std::string("toy")));
    PipelineConfig cfg = PipelineConfig::for_profile(p);
    cfg.apply_seed(j.value("seed", std::uint64_t{0}));
    cfg.device = j.value("device", cfg.device);
    if (j.contains("out")) cfg.out = j.at("out").get<std::string>();
    cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);
    if (j.contains("phantoms")) from_json(j.at("phantoms"), cfg.phantoms);
    if (j.contains("cycaug")) from_json(j.at("cycaug"), cfg.cycaug);
    if (j.contains("extreme_aug")) extreme_from_json(j.at("extreme_aug"), cfg.extreme_aug);
    if (j.contains("pose_net")) from_json(j.at("pose_net"), cfg.pose_net);
    if (j.contains("pose_train")) from_json(j.at("pose_train"), cfg.pose_train);
    if (j.contains("distill")) from_json(j.at("distill"), cfg.distill);
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      cfg.eval.threshold = e.value("threshold", cfg.eval.threshold);
      const std::string norm = e.value("norm", std::string("head"));
      if (norm != "head" && norm != "fixed") throw InvalidConfigError("eval.norm must be head or fixed");
      cfg.eval.norm = norm == "head" ? NormMode::kHeadThorax : NormMode::kFixed;
      cfg.eval.fixed_length = e.value("fixed_length", cfg.eval.fixed_length);
    }
    return cfg;
  } catch (const json::exception& e) {
    throw InvalidConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InvalidConfigError(std::string("config: ") + e.what());
  }
}

namespace {

constexpr std::array<std::pair<Stage, std::string_view>, 7> kStageNames = {{{Stage::kSynthGen, "synth-gen"},
                                                                            {Stage::kCycAugTrain, "cycaug-train"},
                                                                            {Stage::kAugment, "augment"},
                                                                            {Stage::kPoseTrain, "pose-train"},
                                                                            {Stage::kDistill, "distill"},
                                                                            {Stage::kEval, "eval"},
                                                                            {Stage::kPlot, "plot"}}};

constexpr std::array<AblationRow, 4> kRows = {{{"source", "source"},
                                               {"cycaug", "+CycAug"},
                                               {"extreme", "+ExtremeAug"},
                                               {"kd", "+KD"}}};

}  // namespace

std::string_view to_string(Stage s) {
  for (const auto& [stage, name] : kStageNames) {
    if (stage == s) return name;
  }
  return "?";
}

Stage stage_from_string(std::string_view s) {
  for (const auto& [stage, name] : kStageNames) {
    if (name == s) return stage;
  }
  throw std::invalid_argument("unknown stage '" + std::string(s) + "'");
}

std::string_view to_string(PoseMethod m) {
  switch (m) {
    case PoseMethod::kSource: return "source";
    case PoseMethod::kCycAug: return "cycaug";
    case PoseMethod::kExtreme: return "extreme";
  }
  return "?";
}

PoseMethod pose_method_from_string(std::string_view s) {
  if (s == "source") return PoseMethod::kSource;
  if (s == "cycaug") return PoseMethod::kCycAug;
  if (s == "extreme") return PoseMethod::kExtreme;
  throw InvalidConfigError("unknown method '" + std::string(s) + "' (expected source, cycaug or extreme)");
}

AugmentationMix method_mix(PoseMethod m) {
  switch (m) {
    case PoseMethod::kSource: return {1.0, 0.0, 0.0, 0.0};
    case PoseMethod::kCycAug: return {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0};
    case PoseMethod::kExtreme: return {0.25, 0.25, 0.25, 0.25};
  }
  return {};
}

std::span<const AblationRow> ablation_rows() { return kRows; }

std::string git_blob_sha1(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + file.string());
  const std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string header = "blob " + std::to_string(content.size()) + '\0';

  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);

  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return hex.str();
}

OutputLock::OutputLock(const fs::path& out_dir) : path_(out_dir / ".coverpose.lock") {
  fs::create_directories(out_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw OutputLockedError("another stage holds " + path_.string() +
                              "; wait for it or remove the file if no stage is running");
    }
    throw std::runtime_error("cannot create lock " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------
// Plots

namespace {

std::string svg_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

std::vector<fs::path> emit_plots(std::span<const PCKhReport> reports, const fs::path& dir) {
  if (reports.empty()) throw std::invalid_argument("emit_plots: no reports to plot");
  fs::create_directories(dir);
  std::ostringstream num;
  num << std::fixed << std::setprecision(2);
  auto fmt = [&num](double v) {
    num.str("");
    num << v;
    return num.str();
  };

  // PCKh against threshold. Plot area: x in [60, 460], y in [20, 320].
  std::ostringstream curve;
  curve << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\">\n"
        << "<rect width=\"640\" height=\"360\" fill=\"white\"/>\n"
        << "<line x1=\"60\" y1=\"320\" x2=\"460\" y2=\"320\" stroke=\"black\"/>\n"
        << "<line x1=\"60\" y1=\"20\" x2=\"60\" y2=\"320\" stroke=\"black\"/>\n"
        << "<text x=\"260\" y=\"350\" font-size=\"12\">threshold (fraction of head size)</text>\n"
        << "<text x=\"10\" y=\"15\" font-size=\"12\">PCKh (%)</text>\n";
  for (int t = 0; t <= 10; t += 2) {
    curve << "<text x=\"" << 60 + 40 * t - 8 << "\" y=\"335\" font-size=\"10\">" << fmt(t / 10.0) << "</text>\n";
    curve << "<text x=\"30\" y=\"" << 320 - 30 * t + 4 << "\" font-size=\"10\">" << 10 * t << "</text>\n";
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const PCKhReport& r = reports[i];
    const char* colour = kPalette[i % kPalette.size()];
    curve << "<polyline data-method=\"" << svg_escape(r.method) << "\" fill=\"none\" stroke=\"" << colour
          << "\" stroke-width=\"2\" points=\"";
    for (const auto& [t, v] : r.sweep) {
      curve << fmt(60.0 + 400.0 * t) << ',' << fmt(320.0 - 3.0 * v) << ' ';
    }
    curve << "\"/>\n";
    curve << "<text x=\"475\" y=\"" << 40 + 18 * i << "\" font-size=\"12\" fill=\"" << colour << "\">"
          << svg_escape(r.method) << "</text>\n";
  }
  curve << "</svg>\n";

  // Per-joint bars, grouped by joint, one bar per report in input order.
  std::size_t joints = 0;
  for (const auto& r : reports) joints = std::max(joints, r.per_joint.size());
  const double group_w = 60.0;
  const double bar_w = std::max(2.0, (group_w - 10.0) / static_cast<double>(reports.size()));
  const double width = 80.0 + group_w * static_cast<double>(joints) + 140.0;
  std::ostringstream bars;
  bars << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"380\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<line x1=\"60\" y1=\"320\" x2=\"" << fmt(60 + group_w * joints) << "\" y2=\"320\" stroke=\"black\"/>\n"
       << "<text x=\"10\" y=\"15\" font-size=\"12\">PCKh@" << fmt(reports.front().threshold) << " (%)</text>\n";
  for (std::size_t j = 0; j < joints; ++j) {
    const double gx = 60.0 + group_w * static_cast<double>(j);
    const std::string name = j < static_cast<std::size_t>(kDefaultJointCount)
                                 ? std::string(joint_name(static_cast<int>(j)))
                                 : "joint_" + std::to_string(j);
    bars << "<text x=\"" << fmt(gx + 5) << "\" y=\"340\" font-size=\"9\">" << svg_escape(name) << "</text>\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const auto& pj = reports[i].per_joint;
      const double v = j < pj.size() && std::isfinite(pj[j]) ? pj[j] : 0.0;
      bars << "<rect data-method=\"" << svg_escape(reports[i].method) << "\" data-joint=\"" << j << "\" x=\""
           << fmt(gx + 5 + bar_w * static_cast<double>(i)) << "\" y=\"" << fmt(320 - 3 * v) << "\" width=\""
           << fmt(bar_w) << "\" height=\"" << fmt(3 * v) << "\" fill=\"" << kPalette[i % kPalette.size()]
           << "\"/>\n";
    }
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    bars << "<text x=\"" << fmt(80 + group_w * joints) << "\" y=\"" << 40 + 18 * i << "\" font-size=\"12\" fill=\""
         << kPalette[i % kPalette.size()] << "\">" << svg_escape(reports[i].method) << "</text>\n";
  }
  bars << "</svg>\n";

  const std::vector<fs::path> files = {dir / "curve.svg", dir / "per_joint.svg"};
  write_text(files[0], curve.str());
  write_text(files[1], bars.str());
  return files;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

struct StageContext {
  const PipelineConfig& cfg;
  const StageOptions& opts;
  std::ostream& log;
  fs::path out;
  std::vector<fs::path> inputs;
  std::vector<fs::path> artifacts;
  json extra = json::object();

  fs::path data_root() const { return opts.data ? *opts.data : out / "data"; }
};

void require(const fs::path& p, std::string_view stage_hint) {
  if (!fs::exists(p)) {
    throw MissingPrerequisiteError("missing " + p.string() + "; run " + std::string(stage_hint) + " first");
  }
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

DatasetManifest load_data(StageContext& ctx) {
  const fs::path root = ctx.data_root();
  if (!fs::exists(root)) {
    throw MissingPrerequisiteError("no dataset at " + root.string() + "; run synth-gen first");
  }
  ctx.inputs.push_back(root);
  return load_dataset(root, ctx.cfg.pose_net.joints);
}

std::vector<ThermalImage> images_of(const std::vector<Sample>& samples) {
  std::vector<ThermalImage> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.image);
  return out;
}

// Validation subjects: a seeded, size-independent pick of the source subjects.
std::set<std::string> validation_subjects(const DatasetManifest& m, const PipelineConfig& cfg) {
  std::vector<std::string> subjects = m.subjects(Split::kTrainSource);
  std::sort(subjects.begin(), subjects.end());
  Rng rng = substream(cfg.pose_train.seed, 0x5a1);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  std::size_t n = static_cast<std::size_t>(std::ceil(cfg.val_fraction * static_cast<double>(subjects.size())));
  if (subjects.size() < 2) n = 0;
  return {subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n)};
}

void stage_synth_gen(StageContext& ctx) {
  const fs::path root = ctx.data_root();
  for (Split s : kAllSplits) fs::remove_all(root / to_string(s));
  gen_phantoms(ctx.cfg.phantoms, root);
  const DatasetManifest m = load_dataset(root, ctx.cfg.pose_net.joints);
  ctx.log << "synth-gen: " << m.subject_count() << " subjects written to " << root.string() << '\n';
  ctx.artifacts.push_back(root);
}

void stage_cycaug_train(StageContext& ctx) {
  const DatasetManifest m = load_data(ctx);
  const std::vector<ThermalImage> source = images_of(load_split(m, Split::kTrainSource));
  for (const auto& [cover, split] : {std::pair{CoverType::kThin, Split::kTrainThin},
                                     std::pair{CoverType::kThick, Split::kTrainThick}}) {
    const std::vector<ThermalImage> target = images_of(load_split(m, split));
    const fs::path dir = ctx.out / "cycaug" / to_string(cover);
    fs::create_directories(dir);
    CycAugTrainConfig cc = ctx.cfg.cycaug;
    cc.seed = splitmix64(cc.seed ^ static_cast<std::uint64_t>(cover));
    cc.checkpoint_dir = dir;
    json history = json::array();
    auto progress = [&](const CycAugLossRecord& r) {
      history.push_back({{"iteration", r.iteration},
                         {"total", r.total},
                         {"gan_g", r.gan_g},
                         {"gan_f", r.gan_f},
                         {"cycle", r.cycle},
                         {"identity", r.identity},
                         {"disc_x", r.disc_x},
                         {"disc_y", r.disc_y}});
      if ((r.iteration + 1) % 20 == 0) {
        ctx.log << "cycaug-train[" << to_string(cover) << "] it " << r.iteration + 1 << " total " << r.total
                << " cycle " << r.cycle << '\n';
      }
    };
    CycAugResult res = train_cyclegan(source, target, cc, cover, progress);
    save_generator(res.g, dir / "G.bin", cc.iterations, cc.seed);
    save_generator(res.f, dir / "F.bin", cc.iterations, cc.seed);
    write_json(dir / "history.json", history);
    ctx.artifacts.insert(ctx.artifacts.end(), {dir / "G.bin", dir / "F.bin", dir / "history.json"});
  }
}

void stage_augment(StageContext& ctx) {
  const DatasetManifest m = load_data(ctx);
  const std::vector<Sample> source = load_split(m, Split::kTrainSource);
  const fs::path thin_g = ctx.out / "cycaug" / "thin" / "G.bin";
  const fs::path thick_g = ctx.out / "cycaug" / "thick" / "G.bin";
  require(thin_g, "cycaug-train");
  require(thick_g, "cycaug-train");
  ctx.inputs.insert(ctx.inputs.end(), {thin_g, thick_g});

  GeneratorNet g_thin = load_generator(thin_g);
  GeneratorNet g_thick = load_generator(thick_g);
  const std::vector<Sample> gen_thin = translate_samples(g_thin, source, DomainTag::kGenThin);
  const std::vector<Sample> gen_thick = translate_samples(g_thick, source, DomainTag::kGenThick);

  std::vector<Sample> extreme;
  extreme.reserve(gen_thin.size() + gen_thick.size());
  std::uint64_t index = 0;
  for (const auto* set : {&gen_thin, &gen_thick}) {
    const char* prefix = set == &gen_thin ? "thin_" : "thick_";
    for (const Sample& s : *set) {
      Sample e = s;
      e.image = extreme_aug(s.image, ctx.cfg.extreme_aug, index++);
      e.domain = DomainTag::kExtremeAug;
      e.frame_id = prefix + s.frame_id;
      extreme.push_back(std::move(e));
    }
  }

  const fs::path base = ctx.out / "augment";
  for (const auto& [name, set] : {std::pair<const char*, const std::vector<Sample>*>{"gen_thin", &gen_thin},
                                  {"gen_thick", &gen_thick},
                                  {"extreme_aug", &extreme}}) {
    fs::remove_all(base / name);
    const std::size_t n = write_labeled_samples(*set, base / name);
    ctx.log << "augment: " << n << " images in " << (base / name).string() << '\n';
    ctx.artifacts.push_back(base / name);
  }
}

void stage_pose_train(StageContext& ctx) {
  if (!ctx.opts.method) throw InvalidConfigError("pose-train needs --method (source, cycaug or extreme)");
  const PoseMethod method = *ctx.opts.method;
  const AugmentationMix mix = method_mix(method);
  const DatasetManifest m = load_data(ctx);
  const std::set<std::string> val_subjects = validation_subjects(m, ctx.cfg);

  std::vector<Sample> pool = load_split(m, Split::kTrainSource);
  const std::size_t n_source_all = pool.size();
  const auto add_dir = [&](const char* name, DomainTag tag) {
    const fs::path dir = ctx.out / "augment" / name;
    require(dir, "augment");
    ctx.inputs.push_back(dir);
    std::vector<Sample> s = read_labeled_samples(dir, tag, ctx.cfg.pose_net.joints);
    pool.insert(pool.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  };
  if (mix.gen_thin > 0) add_dir("gen_thin", DomainTag::kGenThin);
  if (mix.gen_thick > 0) add_dir("gen_thick", DomainTag::kGenThick);
  if (mix.extreme_aug > 0) add_dir("extreme_aug", DomainTag::kExtremeAug);

  std::vector<Sample> train, val;
  for (Sample& s : pool) (val_subjects.count(s.subject_id) ? val : train).push_back(std::move(s));

  PoseTrainConfig pc = ctx.cfg.pose_train;
  pc.mix = mix;
  if (pc.epoch_size == 0) {
    // Same number of draws per epoch for every method: one pass over the
    // labeled source images.
    std::size_t n_source = 0;
    for (const Sample& s : train) n_source += s.domain == DomainTag::kSourceUncover ? 1 : 0;
    pc.epoch_size = static_cast<int>(n_source);
  }
  ctx.log << "pose-train[" << to_string(method) << "]: " << train.size() << " train / " << val.size()
          << " val samples (" << n_source_all << " labeled source images)\n";

  // Weight init draws from torch's global generator, which is not seeded by
  // default.
  torch::manual_seed(splitmix64(pc.seed ^ 0x1417));
  PoseNet net = build_pose_net(ctx.cfg.pose_net);
  json history = json::array();
  auto progress = [&](const PoseEpochRecord& r) {
    history.push_back({{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}, {"val_pckh", r.val_pckh}});
    ctx.log << "pose-train[" << to_string(method) << "] epoch " << r.epoch << " lr " << r.lr << " loss "
            << r.train_loss << " val PCKh " << r.val_pckh << '\n';
  };
  const PoseTrainResult res = train_pose(net, train, pc, val, progress);
  CheckpointMeta meta = res.meta;
  meta.extra["method"] = std::string(to_string(method));
  const fs::path dir = ctx.out / "pose" / to_string(method);
  save_pose_checkpoint(net, meta, dir / "best.bin");
  write_json(dir / "history.json", history);
  ctx.extra["best_epoch"] = res.best_epoch;
  ctx.extra["best_val_pckh"] = res.best_val_pckh;
  ctx.artifacts.insert(ctx.artifacts.end(), {dir / "best.bin", dir / "history.json"});
}

void stage_distill(StageContext& ctx) {
  const fs::path teacher_path = ctx.opts.teacher ? *ctx.opts.teacher : ctx.out / "pose" / "extreme" / "best.bin";
  if (!fs::exists(teacher_path)) {
    throw MissingPrerequisiteError("no teacher checkpoint at " + teacher_path.string() + "; run pose-train first");
  }
  ctx.inputs.push_back(teacher_path);
  PoseNet teacher = load_pose_checkpoint(teacher_path);

  const fs::path target_root = ctx.opts.target ? *ctx.opts.target : ctx.data_root();
  if (!fs::exists(target_root)) {
    throw MissingPrerequisiteError("no target data at " + target_root.string() + "; run synth-gen first");
  }
  ctx.inputs.push_back(target_root);
  const DatasetManifest m = load_dataset(target_root, teacher.config().joints);
  std::vector<Sample> target = load_split(m, Split::kTrainThin);
  std::vector<Sample> thick = load_split(m, Split::kTrainThick);
  target.insert(target.end(), std::make_move_iterator(thick.begin()), std::make_move_iterator(thick.end()));

  json history = json::array();
  auto progress = [&](const DistillEpochRecord& r) {
    history.push_back({{"epoch", r.epoch}, {"kd_loss", r.kd_loss}});
    ctx.log << "distill epoch " << r.epoch << " kd loss " << r.kd_loss << '\n';
  };
  DistillResult res = distill(teacher, target, ctx.cfg.distill, {}, progress);
  if (res.teacher_hash_before != res.teacher_hash_after) {
    throw TrainingFailureError("distill: teacher parameters changed during distillation");
  }
  const fs::path dir = ctx.out / "distill";
  save_pose_checkpoint(res.student, res.meta, dir / "student.bin");
  write_json(dir / "history.json", history);
  ctx.artifacts.insert(ctx.artifacts.end(), {dir / "student.bin", dir / "history.json"});
}

fs::path checkpoint_for(const fs::path& out, std::string_view key) {
  return key == "kd" ? out / "distill" / "student.bin" : out / "pose" / key / "best.bin";
}

void stage_eval(StageContext& ctx) {
  const DatasetManifest m = load_data(ctx);
  const std::vector<Sample> test = load_split(m, Split::kTest);
  std::vector<PCKhReport> reports;
  for (const AblationRow& row : ablation_rows()) {
    const fs::path ckpt = checkpoint_for(ctx.out, row.key);
    if (!fs::exists(ckpt)) continue;
    ctx.inputs.push_back(ckpt);
    PoseNet net = load_pose_checkpoint(ckpt);
    PCKhReport r = evaluate_model(net, test, ctx.cfg.eval, std::string(row.label));
    const fs::path path = ctx.out / "eval" / (std::string(row.key) + ".json");
    write_report(r, path);
    ctx.artifacts.push_back(path);
    ctx.log << "eval[" << row.label << "] PCKh@" << r.threshold << " = " << r.aggregate << '\n';
    reports.push_back(std::move(r));
  }
  if (reports.empty()) throw MissingPrerequisiteError("no pose checkpoints under " + ctx.out.string() +
                                                      "; run pose-train first");
  const fs::path table = ctx.out / "eval" / "table.txt";
  write_text(table, ablation_table(reports));
  ctx.artifacts.push_back(table);
  ctx.log << ablation_table(reports);
}

void stage_plot(StageContext& ctx) {
  std::vector<PCKhReport> reports;
  for (const AblationRow& row : ablation_rows()) {
    const fs::path path = ctx.out / "eval" / (std::string(row.key) + ".json");
    if (!fs::exists(path)) continue;
    ctx.inputs.push_back(path);
    reports.push_back(read_report(path));
  }
  if (reports.empty()) throw MissingPrerequisiteError("no reports under " + (ctx.out / "eval").string() +
                                                      "; run eval first");
  const auto files = emit_plots(reports, ctx.out / "plots");
  ctx.artifacts.insert(ctx.artifacts.end(), files.begin(), files.end());
}

json hash_inputs(const std::vector<fs::path>& inputs, const fs::path& out) {
  std::map<std::string, std::string> hashes;
  auto key_of = [&](const fs::path& p) {
    const fs::path rel = p.lexically_relative(out);
    return !rel.empty() && *rel.begin() != ".." ? rel.generic_string() : p.generic_string();
  };
  for (const fs::path& in : inputs) {
    if (fs::is_regular_file(in)) {
      hashes[key_of(in)] = git_blob_sha1(in);
    } else if (fs::is_directory(in)) {
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && e.path().filename() != "run_manifest.json") {
          hashes[key_of(e.path())] = git_blob_sha1(e.path());
        }
      }
    }
  }
  return hashes;
}

}  // namespace

StageResult run_stage(Stage stage, const PipelineConfig& cfg, const StageOptions& opts, std::ostream& log) {
  StageResult result;
  try {
    cfg.validate();
    StageContext ctx{cfg, opts, log, cfg.out, {}, {}, json::object()};
    OutputLock lock(cfg.out);
    switch (stage) {
      case Stage::kSynthGen: stage_synth_gen(ctx); break;
      case Stage::kCycAugTrain: stage_cycaug_train(ctx); break;
      case Stage::kAugment: stage_augment(ctx); break;
      case Stage::kPoseTrain: stage_pose_train(ctx); break;
      case Stage::kDistill: stage_distill(ctx); break;
      case Stage::kEval: stage_eval(ctx); break;
      case Stage::kPlot: stage_plot(ctx); break;
    }

    json options = json::object();
    if (opts.method) options["method"] = std::string(to_string(*opts.method));
    if (opts.data) options["data"] = opts.data->string();
    if (opts.teacher) options["teacher"] = opts.teacher->string();
    if (opts.target) options["target"] = opts.target->string();
    std::vector<std::string> artifacts;
    for (const auto& a : ctx.artifacts) artifacts.push_back(a.lexically_relative(ctx.out).generic_string());
    std::string name(to_string(stage));
    if (opts.method) name += "." + std::string(to_string(*opts.method));
    const json manifest = {{"stage", to_string(stage)}, {"seed", cfg.seed},     {"config", to_json(cfg)},
                           {"options", options},        {"inputs", hash_inputs(ctx.inputs, ctx.out)},
                           {"artifacts", artifacts},    {"summary", ctx.extra}};
    const fs::path manifest_path = ctx.out / "manifests" / (name + ".json");
    write_json(manifest_path, manifest);
    ctx.artifacts.push_back(manifest_path);
    result.artifacts = std::move(ctx.artifacts);
    result.message = std::string(to_string(stage)) + ": done";
  } catch (const InvalidConfigError& e) {
    result = {kExitInvalidConfig, e.what(), {}};
  } catch (const MissingPrerequisiteError& e) {
    result = {kExitMissingPrerequisite, e.what(), {}};
  } catch (const TrainingFailureError& e) {
    result = {kExitTrainingFailure, e.what(), {}};
  } catch (const std::exception& e) {
    result = {kExitOther, e.what(), {}};
  }
  return result;
}

}  // namespace coverpose
