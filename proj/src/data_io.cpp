#include "coverpose/data_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <regex>
#include <set>
#include <stdexcept>

#include "coverpose/errors.hpp"

namespace coverpose {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PNG

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ThermalImage read_png(const fs::path& path, Normalization norm) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("read_png: cannot open " + path.string());
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw std::runtime_error("read_png: not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng initialisation failed");
  }
  std::vector<png_byte> raw;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0;
  // libpng reports errors through longjmp; nothing with a destructor may be
  // created between here and the end of the decode.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: decode error in " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  if (bit_depth == 16) png_set_swap(png);  // little-endian uint16 in memory
  png_read_update_info(png, info);
  bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  raw.resize(rowbytes * height);
  rows.resize(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = raw.data() + r * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (bit_depth == 16) {
      std::uint16_t v = 0;
      std::memcpy(&v, raw.data() + 2 * i, 2);
      values[i] = v;
    } else {
      values[i] = raw[i];
    }
  }
  const double full_scale = bit_depth == 16 ? 65535.0 : 255.0;
  const bool min_max = norm == Normalization::kMinMax || (norm == Normalization::kAuto && bit_depth == 16);
  std::vector<float> pixels(n);
  if (min_max) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < n; ++i) {
      pixels[i] = range > 0 ? static_cast<float>((values[i] - *lo) / range) : 0.0f;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) pixels[i] = static_cast<float>(values[i] / full_scale);
  }
  return ThermalImage(static_cast<int>(height), static_cast<int>(width), std::move(pixels));
}

void write_png(const ThermalImage& img, const fs::path& path, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("write_png: bit depth must be 8 or 16");
  if (img.empty()) throw std::invalid_argument("write_png: empty image");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const int bytes = bit_depth / 8;
  const auto width = static_cast<std::size_t>(img.width());
  std::vector<png_byte> raw(width * static_cast<std::size_t>(img.height()) * bytes);
  const double full_scale = bit_depth == 16 ? 65535.0 : 255.0;
  const auto pixels = img.pixels();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto v = static_cast<unsigned>(std::lround(std::clamp(static_cast<double>(pixels[i]), 0.0, 1.0) * full_scale));
    if (bytes == 2) {
      raw[2 * i] = static_cast<png_byte>(v >> 8);  // PNG is big-endian
      raw[2 * i + 1] = static_cast<png_byte>(v & 0xff);
    } else {
      raw[i] = static_cast<png_byte>(v);
    }
  }

  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("write_png: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng initialisation failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height()));
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = raw.data() + r * width * bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: encode error for " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// Dataset

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrainSource: return "train_source";
    case Split::kTrainThin: return "train_thin";
    case Split::kTrainThick: return "train_thick";
    case Split::kTest: return "test";
  }
  return "unknown";
}

bool is_labeled_split(Split s) { return s == Split::kTrainSource || s == Split::kTest; }

const std::vector<SampleRecord>& DatasetManifest::records(Split s) const {
  static const std::vector<SampleRecord> kEmpty;
  auto it = splits.find(s);
  return it == splits.end() ? kEmpty : it->second;
}

std::vector<std::string> DatasetManifest::subjects(Split s) const {
  std::set<std::string> ids;
  for (const auto& r : records(s)) ids.insert(r.subject_id);
  return {ids.begin(), ids.end()};
}

std::size_t DatasetManifest::subject_count() const {
  std::size_t n = 0;
  for (Split s : kAllSplits) n += subjects(s).size();
  return n;
}

nlohmann::json keypoints_to_json(const KeypointSet& kps) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Joint& j : kps.joints) arr.push_back({j.x, j.y, j.visible ? 1 : 0});
  return arr;
}

KeypointSet keypoints_from_json(const nlohmann::json& j, int joints) {
  if (!j.is_array() || static_cast<int>(j.size()) != joints) {
    throw MalformedDatasetError("expected " + std::to_string(joints) + " joints, found " +
                                (j.is_array() ? std::to_string(j.size()) : std::string("a non-array")));
  }
  KeypointSet kps(joints);
  for (int i = 0; i < joints; ++i) {
    const auto& e = j[static_cast<std::size_t>(i)];
    if (!e.is_array() || e.size() != 3 || !e[0].is_number() || !e[1].is_number() || !e[2].is_number()) {
      throw MalformedDatasetError("joint " + std::to_string(i) + " must be [x, y, v]");
    }
    kps[i] = Joint{e[0].get<double>(), e[1].get<double>(), e[2].get<double>() > 0};
  }
  return kps;
}

namespace {

const std::regex kImageName(R"(image_\d{6}\.png)");

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

constexpr std::string_view kSingleImageKey = "*";

struct LabelEntry {
  KeypointSet keypoints;
  std::optional<std::string> cover;
};

std::map<std::string, LabelEntry> read_label_file(const fs::path& path, int joints) {
  std::ifstream is(path);
  if (!is) throw MalformedDatasetError("cannot open label file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedDatasetError("label file " + path.string() + " is not valid JSON: " + e.what());
  }
  std::map<std::string, LabelEntry> out;
  // A bare {"joints": [...]} labels the subject's single image.
  if (doc.is_object() && !doc.contains("frames") && doc.contains("joints")) {
    LabelEntry entry;
    try {
      entry.keypoints = keypoints_from_json(doc["joints"], joints);
    } catch (const MalformedDatasetError& e) {
      throw MalformedDatasetError("label file " + path.string() + ": " + e.what());
    }
    if (doc.contains("cover")) entry.cover = doc["cover"].get<std::string>();
    out[std::string(kSingleImageKey)] = std::move(entry);
    return out;
  }
  if (!doc.contains("frames") || !doc["frames"].is_array()) {
    throw MalformedDatasetError("label file " + path.string() + " has no \"frames\" array");
  }
  for (const auto& frame : doc["frames"]) {
    if (!frame.contains("image") || !frame.contains("joints")) {
      throw MalformedDatasetError("label file " + path.string() + ": frame entry needs \"image\" and \"joints\"");
    }
    LabelEntry entry;
    try {
      entry.keypoints = keypoints_from_json(frame["joints"], joints);
    } catch (const MalformedDatasetError& e) {
      throw MalformedDatasetError("label file " + path.string() + ", " + frame["image"].get<std::string>() + ": " +
                                  e.what());
    }
    if (frame.contains("cover")) entry.cover = frame["cover"].get<std::string>();
    out[frame["image"].get<std::string>()] = std::move(entry);
  }
  return out;
}

DomainTag split_domain(Split s) {
  switch (s) {
    case Split::kTrainThin: return DomainTag::kTargetThin;
    case Split::kTrainThick: return DomainTag::kTargetThick;
    default: return DomainTag::kSourceUncover;
  }
}

}  // namespace

DatasetManifest load_dataset(const fs::path& root, int joints) {
  if (!fs::is_directory(root)) throw MalformedDatasetError("dataset root " + root.string() + " is not a directory");
  DatasetManifest manifest;
  manifest.root = root;
  std::map<std::string, Split> owner;
  for (Split split : kAllSplits) {
    const fs::path split_dir = root / to_string(split);
    if (!fs::is_directory(split_dir)) {
      throw MalformedDatasetError("dataset " + root.string() + " is missing split directory " + split_dir.string());
    }
    auto& records = manifest.splits[split];
    for (const fs::path& subject_dir : sorted_entries(split_dir, true)) {
      const std::string subject = subject_dir.filename().string();
      if (auto [it, inserted] = owner.emplace(subject, split); !inserted) {
        throw MalformedDatasetError("subject " + subject + " appears in both " + std::string(to_string(it->second)) +
                                    " and " + std::string(to_string(split)));
      }
      const fs::path label_path = subject_dir / "joints.json";
      const bool has_labels = fs::exists(label_path);
      if (is_labeled_split(split) && !has_labels) {
        throw MalformedDatasetError("missing labels: " + label_path.string());
      }
      if (!is_labeled_split(split) && has_labels) {
        throw MalformedDatasetError("unlabeled split carries labels: " + label_path.string());
      }
      std::map<std::string, LabelEntry> labels;
      if (has_labels) labels = read_label_file(label_path, joints);

      std::vector<fs::path> images;
      for (const fs::path& file : sorted_entries(subject_dir, false)) {
        if (std::regex_match(file.filename().string(), kImageName)) images.push_back(file);
      }
      if (auto single = labels.find(std::string(kSingleImageKey)); single != labels.end()) {
        if (images.size() != 1) {
          throw MalformedDatasetError("label file " + label_path.string() +
                                      " holds one pose but the subject has " + std::to_string(images.size()) +
                                      " images; use the \"frames\" form");
        }
        LabelEntry entry = std::move(single->second);
        labels.clear();
        labels[images.front().filename().string()] = std::move(entry);
      }

      std::size_t matched = 0;
      for (const fs::path& file : images) {
        const std::string name = file.filename().string();
        SampleRecord rec;
        rec.image_path = file;
        rec.subject_id = subject;
        rec.frame_id = file.stem().string();
        rec.domain = split_domain(split);
        if (has_labels) {
          auto it = labels.find(name);
          if (it == labels.end()) {
            throw MalformedDatasetError("no label for " + file.string() + " in " + label_path.string());
          }
          rec.keypoints = it->second.keypoints;
          if (split == Split::kTest) {
            const std::string cover = it->second.cover.value_or("");
            if (cover == "thin") {
              rec.domain = DomainTag::kTargetThin;
            } else if (cover == "thick") {
              rec.domain = DomainTag::kTargetThick;
            } else {
              throw MalformedDatasetError("test label for " + file.string() + " needs cover \"thin\" or \"thick\"");
            }
          }
          ++matched;
        }
        records.push_back(std::move(rec));
      }
      if (has_labels && matched != labels.size()) {
        throw MalformedDatasetError("label file " + label_path.string() + " references missing images");
      }
    }
  }
  if (owner.empty()) throw MalformedDatasetError("dataset " + root.string() + " contains no subjects");
  return manifest;
}

std::vector<Sample> load_samples(const std::vector<SampleRecord>& records, Normalization norm) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const SampleRecord& rec : records) {
    Sample s;
    s.image = read_png(rec.image_path, norm);
    s.keypoints = rec.keypoints;
    s.domain = rec.domain;
    s.subject_id = rec.subject_id;
    s.frame_id = rec.frame_id;
    if (s.keypoints && !s.keypoints->within(s.image.dims())) {
      throw MalformedDatasetError("visible joints outside the frame in " + rec.image_path.string());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> load_split(const DatasetManifest& manifest, Split split, Normalization norm) {
  return load_samples(manifest.records(split), norm);
}

std::size_t write_labeled_samples(const std::vector<Sample>& samples, const fs::path& dir) {
  std::map<std::string, nlohmann::json> frames;
  for (const Sample& s : samples) {
    if (!s.keypoints) throw std::invalid_argument("write_labeled_samples: sample without keypoints");
    const std::string name = s.frame_id + ".png";
    write_png(s.image, dir / s.subject_id / name);
    frames[s.subject_id].push_back(
        {{"image", name}, {"cover", std::string(to_string(s.domain))}, {"joints", keypoints_to_json(*s.keypoints)}});
  }
  for (const auto& [subject, list] : frames) {
    std::ofstream os(dir / subject / "joints.json", std::ios::trunc);
    os << nlohmann::json{{"frames", list}}.dump() << '\n';
    if (!os) throw std::runtime_error("write_labeled_samples: cannot write labels for " + subject);
  }
  return samples.size();
}

std::vector<Sample> read_labeled_samples(const fs::path& dir, DomainTag domain, int joints, Normalization norm) {
  if (!fs::is_directory(dir)) throw MalformedDatasetError(dir.string() + " is not a directory");
  std::vector<SampleRecord> records;
  for (const fs::path& subject_dir : sorted_entries(dir, true)) {
    const fs::path label_path = subject_dir / "joints.json";
    if (!fs::exists(label_path)) throw MalformedDatasetError("missing labels: " + label_path.string());
    for (auto& [name, entry] : read_label_file(label_path, joints)) {
      SampleRecord rec;
      rec.image_path = subject_dir / name;
      if (!fs::exists(rec.image_path)) throw MalformedDatasetError("missing image " + rec.image_path.string());
      rec.subject_id = subject_dir.filename().string();
      rec.frame_id = rec.image_path.stem().string();
      rec.domain = domain;
      rec.keypoints = std::move(entry.keypoints);
      records.push_back(std::move(rec));
    }
  }
  return load_samples(records, norm);
}

}  // namespace coverpose
