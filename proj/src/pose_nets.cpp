#include "coverpose/pose_nets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "coverpose/errors.hpp"
#include "coverpose/eval.hpp"
#include "coverpose/heatmap.hpp"
#include "coverpose/rng.hpp"
#include "coverpose/tensor_util.hpp"

namespace coverpose {

namespace nn = torch::nn;

std::string_view to_string(Backbone b) { return b == Backbone::kHourglass ? "hourglass" : "simple_baseline"; }

Backbone backbone_from_string(std::string_view s) {
  if (s == "hourglass") return Backbone::kHourglass;
  if (s == "simple_baseline") return Backbone::kSimpleBaseline;
  throw std::invalid_argument("unknown backbone: " + std::string(s));
}

void PoseNetConfig::validate() const {
  if (!input_dims.positive() || !heatmap_dims.positive()) {
    throw std::invalid_argument("PoseNetConfig: dims must be positive");
  }
  if (input_dims.height % heatmap_dims.height != 0 || input_dims.width % heatmap_dims.width != 0 ||
      input_dims.height / heatmap_dims.height != input_dims.width / heatmap_dims.width) {
    throw std::invalid_argument("PoseNetConfig: heatmap dims must divide input dims by one integer stride");
  }
  if (joints < 1 || channels < 1) throw std::invalid_argument("PoseNetConfig: joints and channels must be >= 1");
  if (backbone == Backbone::kHourglass) {
    if (n_stacks < 1 || hourglass_depth < 1) {
      throw std::invalid_argument("PoseNetConfig: hourglass needs >= 1 stack and depth >= 1");
    }
    if (stride() != 4) throw std::invalid_argument("PoseNetConfig: hourglass stem has stride 4");
    const int cell = 1 << hourglass_depth;
    if (heatmap_dims.height % cell != 0 || heatmap_dims.width % cell != 0) {
      throw std::invalid_argument("PoseNetConfig: heatmap dims must be divisible by 2^hourglass_depth");
    }
    if (channels % 2 != 0) throw std::invalid_argument("PoseNetConfig: hourglass channels must be even");
  } else {
    if (stride() != 4) throw std::invalid_argument("PoseNetConfig: simple baseline decodes to stride 4");
    if (input_dims.height % 32 != 0 || input_dims.width % 32 != 0) {
      throw std::invalid_argument("PoseNetConfig: simple baseline input dims must be multiples of 32");
    }
    if (encoder_depth < 1 || deconv_channels < 1) {
      throw std::invalid_argument("PoseNetConfig: encoder depth and deconv channels must be >= 1");
    }
  }
}

void to_json(nlohmann::json& j, const PoseNetConfig& cfg) {
  j = {{"backbone", to_string(cfg.backbone)},
       {"n_stacks", cfg.n_stacks},
       {"hourglass_depth", cfg.hourglass_depth},
       {"channels", cfg.channels},
       {"encoder_depth", cfg.encoder_depth},
       {"deconv_channels", cfg.deconv_channels},
       {"input_dims", {cfg.input_dims.height, cfg.input_dims.width}},
       {"heatmap_dims", {cfg.heatmap_dims.height, cfg.heatmap_dims.width}},
       {"joints", cfg.joints}};
}

void from_json(const nlohmann::json& j, PoseNetConfig& cfg) {
  if (j.contains("backbone")) cfg.backbone = backbone_from_string(j.at("backbone").get<std::string>());
  cfg.n_stacks = j.value("n_stacks", cfg.n_stacks);
  cfg.hourglass_depth = j.value("hourglass_depth", cfg.hourglass_depth);
  cfg.channels = j.value("channels", cfg.channels);
  cfg.encoder_depth = j.value("encoder_depth", cfg.encoder_depth);
  cfg.deconv_channels = j.value("deconv_channels", cfg.deconv_channels);
  if (j.contains("input_dims")) cfg.input_dims = {j["input_dims"].at(0).get<int>(), j["input_dims"].at(1).get<int>()};
  if (j.contains("heatmap_dims")) {
    cfg.heatmap_dims = {j["heatmap_dims"].at(0).get<int>(), j["heatmap_dims"].at(1).get<int>()};
  }
  cfg.joints = j.value("joints", cfg.joints);
}

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride = 1, int padding = 0, bool bias = true) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias));
}

// Pre-activation bottleneck used throughout the hourglass.
class BottleneckImpl : public nn::Module {
 public:
  BottleneckImpl(int in, int out) {
    const int mid = std::max(1, out / 2);
    body_ = register_module("body", nn::Sequential(nn::BatchNorm2d(in), nn::ReLU(), conv(in, mid, 1),
                                                   nn::BatchNorm2d(mid), nn::ReLU(), conv(mid, mid, 3, 1, 1),
                                                   nn::BatchNorm2d(mid), nn::ReLU(), conv(mid, out, 1)));
    if (in != out) skip_ = register_module("skip", conv(in, out, 1));
  }

  torch::Tensor forward(torch::Tensor x) {
    torch::Tensor identity = skip_ ? skip_->forward(x) : x;
    return body_->forward(x) + identity;
  }

 private:
  nn::Sequential body_{nullptr};
  nn::Conv2d skip_{nullptr};
};
TORCH_MODULE(Bottleneck);

class HourglassImpl : public nn::Module {
 public:
  HourglassImpl(int depth, int channels) : depth_(depth) {
    up1_ = register_module("up1", Bottleneck(channels, channels));
    low1_ = register_module("low1", Bottleneck(channels, channels));
    if (depth > 1) {
      inner_ = register_module("inner", std::make_shared<HourglassImpl>(depth - 1, channels));
    } else {
      low2_ = register_module("low2", Bottleneck(channels, channels));
    }
    low3_ = register_module("low3", Bottleneck(channels, channels));
  }

  torch::Tensor forward(torch::Tensor x) {
    torch::Tensor up1 = up1_->forward(x);
    torch::Tensor low = low1_->forward(torch::max_pool2d(x, 2, 2));
    low = inner_ ? inner_->forward(low) : low2_->forward(low);
    low = low3_->forward(low);
    namespace F = nn::functional;
    torch::Tensor up2 = F::interpolate(low, F::InterpolateFuncOptions()
                                                .scale_factor(std::vector<double>{2.0, 2.0})
                                                .mode(torch::kNearest));
    return up1 + up2;
  }

 private:
  int depth_;
  Bottleneck up1_{nullptr}, low1_{nullptr}, low2_{nullptr}, low3_{nullptr};
  std::shared_ptr<HourglassImpl> inner_;
};

class StackedHourglassImpl : public PoseBackboneImpl {
 public:
  explicit StackedHourglassImpl(const PoseNetConfig& cfg) : stacks_(cfg.n_stacks) {
    const int f = cfg.channels;
    const int half = f / 2;
    stem_ = register_module("stem", nn::Sequential(conv(1, half, 7, 2, 3), nn::BatchNorm2d(half), nn::ReLU(),
                                                   Bottleneck(half, f)));
    stem_tail_ = register_module("stem_tail", nn::Sequential(Bottleneck(f, f), Bottleneck(f, f)));
    for (int s = 0; s < stacks_; ++s) {
      const std::string tag = std::to_string(s);
      hourglasses_.push_back(register_module("hg" + tag, std::make_shared<HourglassImpl>(cfg.hourglass_depth, f)));
      features_.push_back(register_module(
          "feat" + tag, nn::Sequential(Bottleneck(f, f), conv(f, f, 1), nn::BatchNorm2d(f), nn::ReLU())));
      heads_.push_back(register_module("head" + tag, conv(f, cfg.joints, 1)));
      if (s + 1 < stacks_) {
        merge_features_.push_back(register_module("merge_feat" + tag, conv(f, f, 1)));
        merge_preds_.push_back(register_module("merge_pred" + tag, conv(cfg.joints, f, 1)));
      }
    }
  }

  torch::Tensor forward(torch::Tensor x) override {
    x = stem_->forward(x);
    x = torch::max_pool2d(x, 2, 2);
    x = stem_tail_->forward(x);
    std::vector<torch::Tensor> outs;
    for (int s = 0; s < stacks_; ++s) {
      torch::Tensor feat = features_[s]->forward(hourglasses_[s]->forward(x));
      torch::Tensor pred = heads_[s]->forward(feat);
      outs.push_back(pred);
      if (s + 1 < stacks_) {
        x = x + merge_features_[s]->forward(feat) + merge_preds_[s]->forward(pred);
      }
    }
    return torch::stack(outs, 1);
  }

 private:
  int stacks_;
  nn::Sequential stem_{nullptr}, stem_tail_{nullptr};
  std::vector<std::shared_ptr<HourglassImpl>> hourglasses_;
  std::vector<nn::Sequential> features_;
  std::vector<nn::Conv2d> heads_, merge_features_, merge_preds_;
};

class BasicBlockImpl : public nn::Module {
 public:
  BasicBlockImpl(int in, int out, int stride) {
    body_ = register_module("body", nn::Sequential(conv(in, out, 3, stride, 1, false), nn::BatchNorm2d(out),
                                                   nn::ReLU(), conv(out, out, 3, 1, 1, false),
                                                   nn::BatchNorm2d(out)));
    if (in != out || stride != 1) {
      skip_ = register_module("skip", nn::Sequential(conv(in, out, 1, stride, 0, false), nn::BatchNorm2d(out)));
    }
  }

  torch::Tensor forward(torch::Tensor x) {
    torch::Tensor identity = skip_ ? skip_->forward(x) : x;
    return torch::relu(body_->forward(x) + identity);
  }

 private:
  nn::Sequential body_{nullptr};
  nn::Sequential skip_{nullptr};
};
TORCH_MODULE(BasicBlock);

// Residual encoder down to stride 32, three x2 deconvolutions, 1x1 head.
class SimpleBaselineImpl : public PoseBackboneImpl {
 public:
  explicit SimpleBaselineImpl(const PoseNetConfig& cfg) {
    const int c = cfg.channels;
    nn::Sequential enc;
    enc->push_back(conv(1, c, 7, 2, 3, false));
    enc->push_back(nn::BatchNorm2d(c));
    enc->push_back(nn::ReLU());
    enc->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)));
    int in = c;
    for (int stage = 0; stage < 4; ++stage) {
      const int out = c << stage;
      for (int b = 0; b < cfg.encoder_depth; ++b) {
        enc->push_back(BasicBlock(in, out, (b == 0 && stage > 0) ? 2 : 1));
        in = out;
      }
    }
    encoder_ = register_module("encoder", enc);

    nn::Sequential dec;
    for (int i = 0; i < 3; ++i) {
      dec->push_back(nn::ConvTranspose2d(
          nn::ConvTranspose2dOptions(in, cfg.deconv_channels, 4).stride(2).padding(1).bias(false)));
      dec->push_back(nn::BatchNorm2d(cfg.deconv_channels));
      dec->push_back(nn::ReLU());
      in = cfg.deconv_channels;
    }
    dec->push_back(conv(in, cfg.joints, 1));
    decoder_ = register_module("decoder", dec);
  }

  torch::Tensor forward(torch::Tensor x) override { return decoder_->forward(encoder_->forward(x)); }

 private:
  nn::Sequential encoder_{nullptr}, decoder_{nullptr};
};

}  // namespace

PoseNet::PoseNet(const PoseNetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.backbone == Backbone::kHourglass) {
    impl_ = std::make_shared<StackedHourglassImpl>(cfg_);
  } else {
    impl_ = std::make_shared<SimpleBaselineImpl>(cfg_);
  }
}

PoseNet::PoseNet(const PoseNetConfig& cfg, std::shared_ptr<PoseBackboneImpl> impl)
    : cfg_(cfg), impl_(std::move(impl)) {
  cfg_.validate();
  if (!impl_) throw std::invalid_argument("PoseNet: null backbone");
}

void PoseNet::to(torch::Dtype dtype) { to_float_dtype(*impl_, dtype); }

torch::Tensor PoseNet::predict(const torch::Tensor& x) {
  torch::Tensor out = impl_->forward(x);
  if (out.dim() == 5) return out.select(1, out.size(1) - 1);
  return out;
}

PoseNet build_pose_net(const PoseNetConfig& cfg) { return PoseNet(cfg); }

PoseNet clone_pose_net(const PoseNet& net) {
  PoseNet copy(net.config());
  if (!net.parameters().empty()) to_float_dtype(copy.module(), net.parameters().front().scalar_type());
  copy_state(net.module(), copy.module());
  copy.module().train(net.module().is_training());
  return copy;
}

torch::Tensor sup_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.dim() == 4) {
    if (!pred.sizes().equals(target.sizes())) throw std::invalid_argument("sup_loss: shape mismatch");
    const double norm = static_cast<double>(pred.size(0) * pred.size(1));
    return (pred - target).pow(2).sum() / norm;
  }
  if (pred.dim() == 5) {
    torch::Tensor expanded;
    if (target.dim() == 4) {
      if (!pred.select(1, 0).sizes().equals(target.sizes())) throw std::invalid_argument("sup_loss: shape mismatch");
      expanded = target.unsqueeze(1);
    } else if (pred.sizes().equals(target.sizes())) {
      expanded = target;
    } else {
      throw std::invalid_argument("sup_loss: shape mismatch");
    }
    const double norm = static_cast<double>(pred.size(0) * pred.size(1) * pred.size(2));
    return (pred - expanded).pow(2).sum() / norm;
  }
  throw std::invalid_argument("sup_loss: prediction must be 4-D or 5-D");
}

void PoseTrainConfig::validate() const {
  if (!(lr >= 0.0)) throw std::invalid_argument("PoseTrainConfig: learning rate must be >= 0");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] <= decay_epochs[i - 1]) {
      throw std::invalid_argument("PoseTrainConfig: decay epochs must be strictly increasing");
    }
  }
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) {
    throw std::invalid_argument("PoseTrainConfig: decay factor must lie in (0, 1)");
  }
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("PoseTrainConfig: epochs and batch size must be >= 1");
  const auto w = mix.weights();
  if (std::any_of(w.begin(), w.end(), [](double v) { return v < 0.0; })) {
    throw std::invalid_argument("PoseTrainConfig: mix weights must be >= 0");
  }
  if (std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) > 1e-9) {
    throw std::invalid_argument("PoseTrainConfig: mix weights must sum to 1");
  }
  if (!(sigma > 0.0)) throw std::invalid_argument("PoseTrainConfig: sigma must be positive");
}

void to_json(nlohmann::json& j, const PoseTrainConfig& cfg) {
  j = {{"lr", cfg.lr},
       {"decay_epochs", cfg.decay_epochs},
       {"decay_factor", cfg.decay_factor},
       {"epochs", cfg.epochs},
       {"batch_size", cfg.batch_size},
       {"seed", cfg.seed},
       {"mix",
        {{"source", cfg.mix.source},
         {"gen_thin", cfg.mix.gen_thin},
         {"gen_thick", cfg.mix.gen_thick},
         {"extreme_aug", cfg.mix.extreme_aug}}},
       {"sigma", cfg.sigma},
       {"epoch_size", cfg.epoch_size},
       {"val_threshold", cfg.val_threshold}};
}

void from_json(const nlohmann::json& j, PoseTrainConfig& cfg) {
  cfg.lr = j.value("lr", cfg.lr);
  cfg.decay_epochs = j.value("decay_epochs", cfg.decay_epochs);
  cfg.decay_factor = j.value("decay_factor", cfg.decay_factor);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("mix")) {
    const auto& m = j.at("mix");
    cfg.mix.source = m.value("source", cfg.mix.source);
    cfg.mix.gen_thin = m.value("gen_thin", cfg.mix.gen_thin);
    cfg.mix.gen_thick = m.value("gen_thick", cfg.mix.gen_thick);
    cfg.mix.extreme_aug = m.value("extreme_aug", cfg.mix.extreme_aug);
  }
  cfg.sigma = j.value("sigma", cfg.sigma);
  cfg.epoch_size = j.value("epoch_size", cfg.epoch_size);
  cfg.val_threshold = j.value("val_threshold", cfg.val_threshold);
}

double lr_at_epoch(const PoseTrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int decay : cfg.decay_epochs) {
    if (decay <= epoch) lr *= cfg.decay_factor;
  }
  return lr;
}

PoseBatchCache prepare_pose_inputs(const PoseNetConfig& cfg, std::span<const Sample> samples, double sigma) {
  if (samples.empty()) throw std::invalid_argument("prepare_pose_inputs: no samples");
  std::vector<ThermalImage> images;
  images.reserve(samples.size());
  std::vector<torch::Tensor> targets;
  targets.reserve(samples.size());
  for (const Sample& s : samples) {
    images.push_back(s.image);
    if (s.keypoints) {
      const KeypointSet kps = rescale_keypoints(*s.keypoints, s.image.dims(), cfg.input_dims);
      targets.push_back(heatmaps_to_tensor(encode_heatmaps(kps, cfg.heatmap_dims, cfg.stride(), sigma)));
    } else {
      targets.push_back(torch::zeros({cfg.joints, cfg.heatmap_dims.height, cfg.heatmap_dims.width}));
    }
  }
  return {images_to_tensor(images, cfg.input_dims), torch::stack(targets, 0)};
}

namespace {

int domain_group(DomainTag tag) {
  switch (tag) {
    case DomainTag::kSourceUncover: return 0;
    case DomainTag::kGenThin: return 1;
    case DomainTag::kGenThick: return 2;
    case DomainTag::kExtremeAug: return 3;
    default: return -1;
  }
}

double validation_pckh(PoseNet& net, std::span<const Sample> val, double threshold) {
  std::vector<ThermalImage> images;
  std::vector<KeypointSet> gts;
  for (const Sample& s : val) {
    images.push_back(s.image);
    gts.push_back(*s.keypoints);
  }
  const std::vector<KeypointSet> preds = predict_keypoints(net, images);
  PckhOptions opts;
  opts.threshold = threshold;
  return pckh(preds, gts, opts).aggregate;
}

}  // namespace

PoseTrainResult train_pose(PoseNet& net, std::span<const Sample> train_set, const PoseTrainConfig& cfg,
                           std::span<const Sample> val_set, const PoseProgress& progress) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train_pose: empty training set");
  std::array<std::vector<int64_t>, 4> groups;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const Sample& s = train_set[i];
    const int g = domain_group(s.domain);
    if (!s.keypoints || g < 0) {
      throw std::invalid_argument("train_pose: unlabeled sample " + s.subject_id + "/" + s.frame_id + " (" +
                                  std::string(to_string(s.domain)) + ") in training set");
    }
    groups[static_cast<std::size_t>(g)].push_back(static_cast<int64_t>(i));
  }
  for (const Sample& s : val_set) {
    if (!s.keypoints) throw std::invalid_argument("train_pose: unlabeled sample in validation set");
  }
  const auto weights = cfg.mix.weights();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (weights[g] > 0.0 && groups[g].empty()) {
      throw std::invalid_argument("train_pose: mix weight on a domain with no samples");
    }
  }

  torch::manual_seed(cfg.seed);
  Rng rng = substream(cfg.seed, 0x7057);
  const PoseBatchCache cache = prepare_pose_inputs(net.config(), train_set, cfg.sigma);

  std::size_t largest = 0;
  for (const auto& g : groups) largest = std::max(largest, g.size());
  const int epoch_size = cfg.epoch_size > 0 ? cfg.epoch_size : static_cast<int>(largest);

  torch::optim::Adam optimizer(net.parameters(), torch::optim::AdamOptions(cfg.lr));
  std::array<std::size_t, 4> cursor{};
  std::discrete_distribution<int> pick_group(weights.begin(), weights.end());
  for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);

  PoseTrainResult result;
  PoseNet best = clone_pose_net(net);
  double best_score = -std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
    net.train(true);

    std::vector<int64_t> order(static_cast<std::size_t>(epoch_size));
    for (auto& idx : order) {
      const auto g = static_cast<std::size_t>(pick_group(rng));
      if (cursor[g] == groups[g].size()) {
        std::shuffle(groups[g].begin(), groups[g].end(), rng);
        cursor[g] = 0;
      }
      idx = groups[g][cursor[g]++];
    }

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const torch::Tensor index =
          torch::tensor(std::vector<int64_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(end)),
                        torch::kInt64);
      const torch::Tensor x = cache.images.index_select(0, index);
      const torch::Tensor y = cache.targets.index_select(0, index);
      // BatchNorm needs more than one value per channel in training mode.
      if (x.size(0) < 2) continue;
      const torch::Tensor loss = sup_loss(net.forward(x), y);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw TrainingFailureError("train_pose: non-finite loss in epoch " + std::to_string(epoch));
      }
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      loss_sum += value;
      ++batches;
    }

    PoseEpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = batches > 0 ? loss_sum / batches : 0.0;
    rec.val_pckh = val_set.empty() ? 0.0 : validation_pckh(net, val_set, cfg.val_threshold);
    result.history.push_back(rec);
    if (progress) progress(rec);

    const double score = val_set.empty() ? -rec.train_loss : rec.val_pckh;
    if (score > best_score) {
      best_score = score;
      result.best_epoch = epoch;
      result.best_val_pckh = rec.val_pckh;
      copy_state(net.module(), best.module());
    }
  }

  copy_state(best.module(), net.module());
  net.train(false);
  result.meta = pose_meta(net, cfg.seed, result.best_epoch,
                          val_set.empty() ? std::nullopt : std::optional<double>(result.best_val_pckh));
  return result;
}

std::vector<KeypointSet> predict_keypoints(PoseNet& net, std::span<const ThermalImage> images, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("predict_keypoints: batch size must be >= 1");
  const PoseNetConfig& cfg = net.config();
  torch::NoGradGuard no_grad;
  net.train(false);
  std::vector<KeypointSet> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto chunk = images.subspan(start, std::min(static_cast<std::size_t>(batch_size), images.size() - start));
    torch::Tensor x = images_to_tensor(chunk, cfg.input_dims);
    if (!net.parameters().empty()) x = x.to(net.parameters().front().scalar_type());
    const auto stacks = tensor_to_heatmaps(net.predict(x), cfg.stride());
    for (std::size_t i = 0; i < stacks.size(); ++i) {
      out.push_back(rescale_keypoints(decode_heatmaps(stacks[i]), cfg.input_dims, chunk[i].dims()));
    }
  }
  return out;
}

CheckpointMeta pose_meta(const PoseNet& net, std::uint64_t seed, int epoch, std::optional<double> val_pckh) {
  CheckpointMeta meta;
  meta.kind = "pose";
  meta.architecture = net.config();
  meta.config_hash = config_hash(meta.architecture);
  meta.seed = seed;
  meta.epoch = epoch;
  meta.val_pckh = val_pckh;
  meta.extra = {{"backbone", to_string(net.config().backbone)}};
  return meta;
}

void save_pose_checkpoint(const PoseNet& net, const CheckpointMeta& meta, const std::filesystem::path& path) {
  CheckpointMeta m = meta;
  m.kind = "pose";
  m.architecture = net.config();
  m.config_hash = config_hash(m.architecture);
  m.extra["backbone"] = to_string(net.config().backbone);
  save_checkpoint(net.module(), m, path);
}

PoseNet load_pose_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta_out) {
  const CheckpointMeta meta = read_checkpoint_meta(path);
  if (meta.kind != "pose") throw CheckpointIncompatibleError("checkpoint " + path.string() + " is not a pose checkpoint");
  PoseNetConfig cfg;
  try {
    cfg = meta.architecture.get<PoseNetConfig>();
  } catch (const std::exception& e) {
    throw CheckpointIncompatibleError("checkpoint " + path.string() + ": bad architecture record: " + e.what());
  }
  return load_pose_checkpoint(path, cfg, meta_out);
}

PoseNet load_pose_checkpoint(const std::filesystem::path& path, const PoseNetConfig& expected, CheckpointMeta* meta_out) {
  PoseNet net(expected);
  const CheckpointMeta loaded = load_checkpoint(path, net.module(), config_hash(nlohmann::json(expected)));
  net.train(false);
  if (meta_out != nullptr) *meta_out = loaded;
  return net;
}

}  // namespace coverpose
