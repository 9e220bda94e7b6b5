// Command-line front end: one subcommand per pipeline stage.
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "coverpose/errors.hpp"
#include "coverpose/pipeline.hpp"

namespace fs = std::filesystem;
using namespace coverpose;

int main(int argc, char** argv) {
  CLI::App app{"coverpose: cross-domain in-bed pose estimation under covers"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string profile;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "global seed; every stage seed derives from it");
  app.add_option("--out", out_dir, "output directory (default $COVERPOSE_OUT or ./out)");
  app.add_option("--profile", profile, "toy or full")->check(CLI::IsMember({"toy", "full"}));

  StageOptions opts;
  std::string method, backbone, data, teacher, target;
  std::map<std::string, Stage> commands;
  const std::map<Stage, std::string> blurbs = {
      {Stage::kSynthGen, "render the synthetic phantom dataset"},
      {Stage::kCycAugTrain, "train uncovered-to-covered translators for thin and thick covers"},
      {Stage::kAugment, "write translated and occlusion-augmented training sets"},
      {Stage::kPoseTrain, "train a pose network with one augmentation recipe"},
      {Stage::kDistill, "distill the best pose network on unlabeled covered images"},
      {Stage::kEval, "PCKh on the covered test split for every trained model"},
      {Stage::kPlot, "threshold curve and per-joint bar chart from the eval reports"},
  };
  for (Stage s : {Stage::kSynthGen, Stage::kCycAugTrain, Stage::kAugment, Stage::kPoseTrain, Stage::kDistill,
                  Stage::kEval, Stage::kPlot}) {
    const std::string name(to_string(s));
    CLI::App* sub = app.add_subcommand(name, blurbs.at(s));
    commands[name] = s;
    if (s != Stage::kPlot) sub->add_option("--data", data, "dataset root (default <out>/data)");
    if (s == Stage::kPoseTrain) {
      sub->add_option("--method", method, "source, cycaug or extreme")
          ->required()
          ->check(CLI::IsMember({"source", "cycaug", "extreme"}));
      sub->add_option("--backbone", backbone, "hourglass or simple_baseline");
    }
    if (s == Stage::kDistill) {
      sub->add_option("--teacher", teacher, "teacher checkpoint (default <out>/pose/extreme/best.bin)");
      sub->add_option("--target", target, "dataset root with unlabeled covered splits");
    }
    if (s == Stage::kEval) sub->add_option("--backbone", backbone, "hourglass or simple_baseline");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalidConfig;
  }

  PipelineConfig cfg;
  try {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream is(config_path);
      j = nlohmann::json::parse(is);
    }
    cfg = pipeline_config_from_json(j, profile.empty() ? std::nullopt
                                                       : std::optional<Profile>(profile_from_string(profile)));
    if (seed) cfg.apply_seed(*seed);
    if (const char* dev = std::getenv("COVERPOSE_DEVICE")) cfg.device = dev;
    if (!out_dir.empty()) {
      cfg.out = out_dir;
    } else if (const char* env_out = std::getenv("COVERPOSE_OUT")) {
      cfg.out = env_out;
    }
    if (!backbone.empty()) cfg.pose_net.backbone = backbone_from_string(backbone);
    if (!method.empty()) opts.method = pose_method_from_string(method);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kExitInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kExitInvalidConfig;
  }
  if (!data.empty()) opts.data = fs::path(data);
  if (!teacher.empty()) opts.teacher = fs::path(teacher);
  if (!target.empty()) opts.target = fs::path(target);

  const std::string name = app.get_subcommands().front()->get_name();
  const StageResult r = run_stage(commands.at(name), cfg, opts, std::cerr);
  if (r.exit_code != kExitOk) {
    std::cerr << name << ": " << r.message << '\n';
  } else {
    for (const auto& a : r.artifacts) std::cout << a.string() << '\n';
  }
  return r.exit_code;
}
