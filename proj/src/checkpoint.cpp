#include "coverpose/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "coverpose/errors.hpp"

namespace coverpose {

namespace {

constexpr char kMagic[8] = {'C', 'P', 'C', 'K', 'P', 'T', '0', '1'};

enum class StoredType : std::uint8_t { kFloat32 = 0, kFloat64 = 1, kInt64 = 2 };

StoredType stored_type(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return StoredType::kFloat32;
    case torch::kFloat64: return StoredType::kFloat64;
    case torch::kInt64: return StoredType::kInt64;
    default: throw std::invalid_argument("save_checkpoint: unsupported tensor dtype");
  }
}

torch::ScalarType scalar_type(StoredType t) {
  switch (t) {
    case StoredType::kFloat32: return torch::kFloat32;
    case StoredType::kFloat64: return torch::kFloat64;
    case StoredType::kInt64: return torch::kInt64;
  }
  throw CheckpointIncompatibleError("checkpoint: unknown tensor dtype tag");
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointIncompatibleError("checkpoint: truncated parameter blob");
  return v;
}

void write_tensor(std::ostream& os, const std::string& name, const torch::Tensor& tensor) {
  torch::Tensor t = tensor.detach().to(torch::kCPU).contiguous();
  write_pod(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod(os, stored_type(t.scalar_type()));
  write_pod(os, static_cast<std::uint32_t>(t.dim()));
  for (int64_t d : t.sizes()) write_pod(os, d);
  os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
}

struct StoredTensor {
  std::string name;
  torch::Tensor value;
};

StoredTensor read_tensor(std::istream& is) {
  const auto name_len = read_pod<std::uint32_t>(is);
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  const auto type = read_pod<StoredType>(is);
  const auto ndim = read_pod<std::uint32_t>(is);
  std::vector<int64_t> sizes(ndim);
  for (auto& s : sizes) s = read_pod<int64_t>(is);
  torch::Tensor t = torch::empty(sizes, torch::TensorOptions().dtype(scalar_type(type)));
  is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
  if (!is) throw CheckpointIncompatibleError("checkpoint: truncated parameter blob");
  return {std::move(name), std::move(t)};
}

}  // namespace

std::string config_hash(const nlohmann::json& architecture) {
  const std::string text = architecture.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::filesystem::path sidecar_path(const std::filesystem::path& blob) {
  std::filesystem::path p = blob;
  p.replace_extension(".json");
  return p;
}

nlohmann::json meta_to_json(const CheckpointMeta& meta) {
  nlohmann::json j = meta.extra.is_object() ? meta.extra : nlohmann::json::object();
  j["kind"] = meta.kind;
  j["architecture"] = meta.architecture;
  j["config_hash"] = meta.config_hash;
  j["seed"] = meta.seed;
  if (meta.epoch >= 0) j["epoch"] = meta.epoch;
  if (meta.iteration >= 0) j["iteration"] = meta.iteration;
  if (meta.val_pckh) j["val_pckh"] = *meta.val_pckh;
  return j;
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta meta;
  meta.kind = j.value("kind", "");
  meta.architecture = j.value("architecture", nlohmann::json::object());
  meta.config_hash = j.value("config_hash", "");
  meta.seed = j.value("seed", std::uint64_t{0});
  meta.epoch = j.value("epoch", -1);
  meta.iteration = j.value("iteration", -1);
  if (j.contains("val_pckh") && j["val_pckh"].is_number()) meta.val_pckh = j["val_pckh"].get<double>();
  meta.extra = nlohmann::json::object();
  for (const auto& [key, value] : j.items()) {
    if (key == "kind" || key == "architecture" || key == "config_hash" || key == "seed" || key == "epoch" ||
        key == "iteration" || key == "val_pckh") {
      continue;
    }
    meta.extra[key] = value;
  }
  return meta;
}

std::filesystem::path save_checkpoint(const torch::nn::Module& module, const CheckpointMeta& meta,
                                      const std::filesystem::path& blob) {
  if (blob.has_parent_path()) std::filesystem::create_directories(blob.parent_path());
  {
    std::ofstream os(blob, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + blob.string());
    os.write(kMagic, sizeof(kMagic));
    auto params = module.named_parameters();
    auto buffers = module.named_buffers();
    write_pod(os, static_cast<std::uint32_t>(params.size() + buffers.size()));
    for (const auto& item : params) write_tensor(os, item.key(), item.value());
    for (const auto& item : buffers) write_tensor(os, item.key(), item.value());
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + blob.string());
  }
  std::ofstream js(sidecar_path(blob), std::ios::trunc);
  js << meta_to_json(meta).dump(2) << '\n';
  if (!js) throw std::runtime_error("save_checkpoint: cannot write sidecar for " + blob.string());
  return blob;
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& blob) {
  std::ifstream js(sidecar_path(blob));
  if (!js) throw CheckpointIncompatibleError("checkpoint: missing sidecar " + sidecar_path(blob).string());
  try {
    return meta_from_json(nlohmann::json::parse(js));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointIncompatibleError("checkpoint: unreadable sidecar " + sidecar_path(blob).string() + ": " +
                                      e.what());
  }
}

CheckpointMeta load_checkpoint(const std::filesystem::path& blob, torch::nn::Module& module,
                               const std::optional<std::string>& expected_hash) {
  CheckpointMeta meta = read_checkpoint_meta(blob);
  if (expected_hash && meta.config_hash != *expected_hash) {
    throw CheckpointIncompatibleError("checkpoint " + blob.string() + " was written for architecture " +
                                      meta.config_hash + ", expected " + *expected_hash);
  }
  std::ifstream is(blob, std::ios::binary);
  if (!is) throw CheckpointIncompatibleError("checkpoint: cannot open " + blob.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointIncompatibleError("checkpoint: bad magic in " + blob.string());
  }
  const auto count = read_pod<std::uint32_t>(is);

  auto params = module.named_parameters();
  auto buffers = module.named_buffers();
  if (count != params.size() + buffers.size()) {
    throw CheckpointIncompatibleError("checkpoint " + blob.string() + " holds " + std::to_string(count) +
                                      " tensors, module expects " +
                                      std::to_string(params.size() + buffers.size()));
  }
  torch::NoGradGuard no_grad;
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor stored = read_tensor(is);
    torch::Tensor* target = params.find(stored.name);
    if (target == nullptr) target = buffers.find(stored.name);
    if (target == nullptr) {
      throw CheckpointIncompatibleError("checkpoint: unexpected tensor " + stored.name);
    }
    if (!target->sizes().equals(stored.value.sizes()) || target->scalar_type() != stored.value.scalar_type()) {
      throw CheckpointIncompatibleError("checkpoint: shape or dtype mismatch at " + stored.name);
    }
    target->copy_(stored.value);
  }
  return meta;
}

}  // namespace coverpose
