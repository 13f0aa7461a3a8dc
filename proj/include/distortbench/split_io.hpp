#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "distortbench/binary_io.hpp"
#include "distortbench/classifier.hpp"
#include "distortbench/config.hpp"
#include "distortbench/errors.hpp"
#include "distortbench/generator.hpp"
#include "distortbench/tensor.hpp"

namespace distortbench {

namespace fs = std::filesystem;

// Canonical tensor file: "DBIMG1" | u32 C | u32 H | u32 W | C*H*W float32 LE.

inline std::vector<std::uint8_t> encode_dbimg(const ImageTensor& img) {
  ByteWriter w;
  w.bytes("DBIMG1");
  w.u32(static_cast<std::uint32_t>(img.shape().channels));
  w.u32(static_cast<std::uint32_t>(img.shape().height));
  w.u32(static_cast<std::uint32_t>(img.shape().width));
  for (double v : img.values()) w.f32(static_cast<float>(v));
  return std::move(w).take();
}

inline ImageTensor decode_dbimg(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.bytes(6) != "DBIMG1") throw InvalidArgument("dbimg: bad magic");
  const Shape s{r.u32(), r.u32(), r.u32()};
  if (!r.ok() || s.size() == 0 || r.remaining() != s.size() * 4) throw InvalidArgument("dbimg: truncated or bad dims");
  std::vector<double> v(s.size());
  for (double& x : v) x = r.f32();
  return ImageTensor(s, std::move(v));
}

inline void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline void save_dbimg(const fs::path& path, const ImageTensor& img) { write_bytes(path, encode_dbimg(img)); }

inline ImageTensor load_dbimg(const fs::path& path) {
  try {
    return decode_dbimg(read_file_bytes(path));
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

/// 8-bit preview. One channel is written as gray, three as RGB; other channel
/// counts preview the first channel only.
inline void save_png_preview(const fs::path& path, const ImageTensor& img) {
  const Shape& s = img.shape();
  const std::size_t out_channels = s.channels == 3 ? 3 : 1;
  std::vector<std::uint8_t> buf(s.plane() * out_channels);
  for (std::size_t y = 0; y < s.height; ++y)
    for (std::size_t x = 0; x < s.width; ++x)
      for (std::size_t c = 0; c < out_channels; ++c)
        buf[(y * s.width + x) * out_channels + c] =
            static_cast<std::uint8_t>(std::lround(img.at(c, y, x) * 255.0));
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(s.width);
  png.height = static_cast<png_uint_32>(s.height);
  png.format = out_channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw IoError("png write " + path.string() + ": " + msg);
  }
}

struct LevelRecord {
  std::size_t level = 1;
  /// Severity multiplier, or the probability threshold in threshold mode.
  double scale = 1.0;
  /// Relative to the manifest's directory.
  std::string path;
  double l2 = 0.0;
  std::size_t pred = 0;

  friend bool operator==(const LevelRecord&, const LevelRecord&) = default;
};

struct ManifestRecord {
  std::size_t index = 0;
  std::size_t label = 0;
  std::size_t clean_pred = 0;
  bool success = false;
  std::string reason;
  std::size_t steps = 0;
  std::uint64_t evaluations = 0;
  std::uint64_t batches = 0;
  double l2 = 0.0;
  std::vector<LevelRecord> levels;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

/// Line-delimited JSON manifest of one generated split.
struct SplitManifest {
  fs::path dir;
  std::string victim;
  std::string filter;
  std::string config_hash;
  std::vector<ManifestRecord> records;

  const ManifestRecord* find(std::size_t index) const {
    auto it = std::lower_bound(records.begin(), records.end(), index,
                               [](const ManifestRecord& r, std::size_t i) { return r.index < i; });
    return it != records.end() && it->index == index ? &*it : nullptr;
  }

  /// Indices that carry written level files.
  std::vector<std::size_t> indices_with_files() const {
    std::vector<std::size_t> out;
    for (const auto& r : records)
      if (!r.levels.empty()) out.push_back(r.index);
    return out;
  }

  std::size_t level_count() const {
    std::size_t n = 0;
    for (const auto& r : records) n = std::max(n, r.levels.size());
    return n;
  }
};

inline constexpr const char* kManifestName = "manifest.jsonl";
inline constexpr const char* kPartialMarker = "PARTIAL";

/// An episode outcome plus its severity images, ready to be written.
struct SplitEntry {
  ManifestRecord record;
  std::vector<ImageTensor> level_images;
};

/// Builds severity levels for a finished episode and queries the victim on
/// them. Failed or skipped episodes get no levels.
inline SplitEntry prepare_entry(const EpisodeResult& result, const RunConfig& config,
                                const ClassifierHandle& classifier) {
  SplitEntry e;
  ManifestRecord& r = e.record;
  r.index = result.index;
  r.label = result.label;
  r.clean_pred = result.clean_probs.size() ? result.clean_probs.argmax() : 0;
  r.success = result.success;
  r.reason = std::string(termination_name(result.reason));
  r.steps = result.steps;
  r.evaluations = result.queries.evaluations;
  r.batches = result.queries.batches;
  r.l2 = result.l2;
  if (!result.success) return e;

  std::vector<double> scales;
  if (!result.threshold_levels.empty()) {
    e.level_images = result.threshold_levels;
    scales = ordered_thresholds(config.mode, config.thresholds);
  } else {
    scales = config.severities;
    for (double s : scales) e.level_images.push_back(escalate_severity(result.original, result.adversarial, s));
  }
  const auto preds = classifier.predict(e.level_images);
  for (std::size_t i = 0; i < e.level_images.size(); ++i) {
    LevelRecord lv;
    lv.level = i + 1;
    lv.scale = scales[i];
    lv.path = "sev" + std::to_string(i + 1) + "/" + std::to_string(r.index) + ".dbimg";
    lv.l2 = l2_distance(e.level_images[i], result.original);
    lv.pred = preds[i].argmax();
    r.levels.push_back(lv);
  }
  return e;
}

inline nlohmann::ordered_json record_to_json(const ManifestRecord& r, const SplitManifest& m) {
  nlohmann::ordered_json j;
  j["index"] = r.index;
  j["label"] = r.label;
  j["clean_pred"] = r.clean_pred;
  j["success"] = r.success;
  j["reason"] = r.reason;
  j["steps"] = r.steps;
  j["evaluations"] = r.evaluations;
  j["batches"] = r.batches;
  j["l2"] = r.l2;
  j["victim"] = m.victim;
  j["filter"] = m.filter;
  j["config_hash"] = m.config_hash;
  j["levels"] = nlohmann::ordered_json::array();
  for (const auto& lv : r.levels) {
    j["levels"].push_back(
        {{"level", lv.level}, {"scale", lv.scale}, {"path", lv.path}, {"l2", lv.l2}, {"pred", lv.pred}});
  }
  return j;
}

/// Writes level tensors, PNG previews and the manifest under `out_dir`.
/// Entries are ordered by index. On any I/O failure a PARTIAL marker is left
/// in `out_dir` and IoError is raised.
inline SplitManifest write_split(std::vector<SplitEntry> entries, const fs::path& out_dir, std::string victim,
                                 std::string filter, std::string config_hash) {
  std::sort(entries.begin(), entries.end(),
            [](const SplitEntry& a, const SplitEntry& b) { return a.record.index < b.record.index; });
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].record.index == entries[i - 1].record.index) {
      throw InvalidArgument("write_split: duplicate sample index " + std::to_string(entries[i].record.index));
    }
  }
  SplitManifest m{out_dir, std::move(victim), std::move(filter), std::move(config_hash), {}};
  try {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    fs::remove(out_dir / kPartialMarker, ec);
    std::ostringstream lines;
    for (auto& e : entries) {
      for (std::size_t i = 0; i < e.record.levels.size(); ++i) {
        const fs::path file = out_dir / e.record.levels[i].path;
        fs::create_directories(file.parent_path(), ec);
        if (ec) throw IoError("cannot create " + file.parent_path().string() + ": " + ec.message());
        save_dbimg(file, e.level_images[i]);
        fs::path preview = file;
        preview.replace_extension(".png");
        save_png_preview(preview, e.level_images[i]);
      }
      lines << record_to_json(e.record, m).dump() << '\n';
      m.records.push_back(std::move(e.record));
    }
    const std::string text = lines.str();
    write_bytes(out_dir / kManifestName,
                std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  } catch (const std::exception& e) {
    std::ofstream marker(out_dir / kPartialMarker);
    marker << e.what() << '\n';
    if (dynamic_cast<const IoError*>(&e) != nullptr) throw;
    throw IoError(std::string("write_split: ") + e.what());
  }
  return m;
}

/// Loads `manifest.jsonl` from a split directory (or the file itself).
inline SplitManifest read_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / kManifestName : path;
  std::ifstream in(file);
  if (!in) throw IoError("cannot read manifest " + file.string());
  SplitManifest m;
  m.dir = file.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.index = j.at("index").get<std::size_t>();
      r.label = j.at("label").get<std::size_t>();
      r.clean_pred = j.at("clean_pred").get<std::size_t>();
      r.success = j.at("success").get<bool>();
      r.reason = j.at("reason").get<std::string>();
      r.steps = j.at("steps").get<std::size_t>();
      r.evaluations = j.at("evaluations").get<std::uint64_t>();
      r.batches = j.at("batches").get<std::uint64_t>();
      r.l2 = j.at("l2").get<double>();
      for (const auto& lv : j.at("levels")) {
        r.levels.push_back({lv.at("level").get<std::size_t>(), lv.at("scale").get<double>(),
                            lv.at("path").get<std::string>(), lv.at("l2").get<double>(),
                            lv.at("pred").get<std::size_t>()});
      }
      m.victim = j.at("victim").get<std::string>();
      m.filter = j.at("filter").get<std::string>();
      m.config_hash = j.at("config_hash").get<std::string>();
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::sort(m.records.begin(), m.records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) { return a.index < b.index; });
  for (std::size_t i = 1; i < m.records.size(); ++i) {
    if (m.records[i].index == m.records[i - 1].index) {
      throw InvalidArgument(file.string() + ": duplicate sample index " + std::to_string(m.records[i].index));
    }
  }
  return m;
}

inline ImageTensor load_level(const SplitManifest& m, const LevelRecord& lv) { return load_dbimg(m.dir / lv.path); }

/// Sorted indices present in every list.
inline std::vector<std::size_t> intersect_indices(const std::vector<std::vector<std::size_t>>& lists) {
  if (lists.empty()) return {};
  std::vector<std::size_t> acc = lists.front();
  std::sort(acc.begin(), acc.end());
  acc.erase(std::unique(acc.begin(), acc.end()), acc.end());
  for (std::size_t i = 1; i < lists.size(); ++i) {
    std::vector<std::size_t> other = lists[i];
    std::sort(other.begin(), other.end());
    std::vector<std::size_t> next;
    std::set_intersection(acc.begin(), acc.end(), other.begin(), other.end(), std::back_inserter(next));
    acc = std::move(next);
  }
  return acc;
}

/// Common indices with written files across all manifests.
inline std::vector<std::size_t> intersect_manifests(std::span<const SplitManifest> manifests) {
  std::vector<std::vector<std::size_t>> lists;
  for (const auto& m : manifests) lists.push_back(m.indices_with_files());
  return intersect_indices(lists);
}

// Datasets ---------------------------------------------------------------

struct Sample {
  std::size_t index = 0;
  std::size_t label = 0;
  ImageTensor image;
};

using Dataset = std::vector<Sample>;

inline constexpr const char* kLabelsName = "labels.csv";

/// Directory with labels.csv (`index,label,file`, header line) and one
/// .dbimg per sample.
inline Dataset load_dataset_dir(const fs::path& dir) {
  std::ifstream in(dir / kLabelsName);
  if (!in) throw IoError("cannot read " + (dir / kLabelsName).string());
  Dataset ds;
  std::string line;
  std::getline(in, line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto parts = detail::split_list(line);
    if (parts.size() != 3) throw InvalidArgument(kLabelsName + (":" + std::to_string(lineno)) + ": expected index,label,file");
    Sample s;
    s.index = detail::parse_uint("index", parts[0]);
    s.label = detail::parse_uint("label", parts[1]);
    s.image = load_dbimg(dir / parts[2]);
    ds.push_back(std::move(s));
  }
  std::sort(ds.begin(), ds.end(), [](const Sample& a, const Sample& b) { return a.index < b.index; });
  return ds;
}

inline void save_dataset_dir(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  std::ofstream out(dir / kLabelsName);
  if (!out) throw IoError("cannot write " + (dir / kLabelsName).string());
  out << "index,label,file\n";
  for (const auto& s : ds) {
    const std::string name = std::to_string(s.index) + ".dbimg";
    save_dbimg(dir / name, s.image);
    out << s.index << ',' << s.label << ',' << name << '\n';
  }
}

/// Uniform random images with values in [lo, hi]; labels left at 0.
inline Dataset synthetic_images(Shape shape, std::size_t count, std::uint64_t seed, double lo = 0.25,
                                double hi = 0.75) {
  Dataset ds;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed({seed, i, 0x5eedULL}));
    std::vector<double> v(shape.size());
    for (double& x : v) x = lo + (hi - lo) * rng.uniform();
    ds.push_back({i, 0, ImageTensor(shape, std::move(v))});
  }
  return ds;
}

/// Sets every label to the victim's clean prediction.
inline void label_by_victim(Dataset& ds, const ClassifierHandle& victim) {
  if (ds.empty()) return;
  std::vector<ImageTensor> images;
  for (const auto& s : ds) images.push_back(s.image);
  const auto probs = victim.predict(images);
  for (std::size_t i = 0; i < ds.size(); ++i) ds[i].label = probs[i].argmax();
}

}  // namespace distortbench
