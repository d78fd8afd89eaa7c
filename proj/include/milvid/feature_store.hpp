#pragma once

// Per-clip feature files and the dataset manifest.
//
// MIL1 layout (all integers little-endian):
//   bytes 0..3   ASCII "MIL1"
//   bytes 4..7   dim   (uint32)
//   bytes 8..11  count (uint32)
//   then count*dim IEEE-754 float32 values, row-major, one row per clip
//
// Files whose extension is .csv are parsed as one clip per line with dim
// comma-separated decimal values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string_view>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "milvid/binary_io.hpp"
#include "milvid/error.hpp"
#include "milvid/random.hpp"

namespace milvid {

inline constexpr std::uint32_t kDefaultFeatureDim = 4096;
inline constexpr std::size_t kFeatureHeaderBytes = 12;

// count x dim clip features in temporal order. Immutable once built.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;

  FeatureMatrix(std::uint32_t dim, std::uint32_t count, std::vector<float> values)
      : dim_(dim), count_(count), values_(std::move(values)) {
    if (dim_ == 0) throw validation_error("feature dim must be positive");
    if (static_cast<std::size_t>(dim_) * count_ != values_.size()) {
      throw validation_error("feature matrix holds " + std::to_string(values_.size()) +
                             " values, expected " + std::to_string(std::size_t{dim_} * count_));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        throw validation_error("non-finite feature value at row " + std::to_string(i / dim_) +
                               ", column " + std::to_string(i % dim_));
      }
    }
  }

  std::uint32_t dim() const { return dim_; }
  std::uint32_t count() const { return count_; }
  std::span<const float> values() const { return values_; }
  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(values_).subspan(r * dim_, dim_);
  }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::uint32_t dim_ = 1;
  std::uint32_t count_ = 0;
  std::vector<float> values_;
};

inline std::size_t feature_file_size(std::uint32_t dim, std::uint32_t count) {
  return kFeatureHeaderBytes + std::size_t{dim} * count * sizeof(float);
}

inline std::vector<unsigned char> encode_features(const FeatureMatrix& m) {
  io::ByteWriter w;
  w.tag("MIL1");
  w.u32(m.dim());
  w.u32(m.count());
  for (float v : m.values()) w.f32(v);
  return w.release();
}

inline FeatureMatrix decode_features(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MIL1", 4) != 0) {
    throw format_error("bad magic: not a MIL1 feature file");
  }
  if (bytes.size() < kFeatureHeaderBytes) {
    throw corruption_error("truncated MIL1 header: expected " + std::to_string(kFeatureHeaderBytes) +
                           " bytes, got " + std::to_string(bytes.size()));
  }
  io::ByteReader r(bytes.subspan(4));
  const auto dim = r.u32();
  const auto count = r.u32();
  if (dim == 0) throw format_error("MIL1 header declares dim 0");
  const auto expected = feature_file_size(dim, count);
  if (bytes.size() != expected) {
    throw corruption_error("MIL1 payload size mismatch: expected " + std::to_string(expected) +
                           " bytes, actual " + std::to_string(bytes.size()));
  }
  std::vector<float> values(std::size_t{dim} * count);
  for (auto& v : values) v = r.f32();
  return FeatureMatrix(dim, count, std::move(values));
}

inline FeatureMatrix parse_features_csv(const std::string& text) {
  std::vector<float> values;
  std::uint32_t dim = 0;
  std::uint32_t count = 0;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::uint32_t fields = 0;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      char* end = nullptr;
      const float v = std::strtof(cell.c_str(), &end);
      if (end == cell.c_str() || std::string_view(end).find_first_not_of(" \t") != std::string_view::npos) {
        throw format_error("CSV line " + std::to_string(lineno) + ": cannot parse '" + cell + "'");
      }
      values.push_back(v);
      ++fields;
    }
    if (dim == 0) {
      dim = fields;
    } else if (fields != dim) {
      throw format_error("CSV line " + std::to_string(lineno) + " has " + std::to_string(fields) +
                         " values, expected " + std::to_string(dim));
    }
    ++count;
  }
  if (dim == 0) throw format_error("CSV feature file has no rows");
  return FeatureMatrix(dim, count, std::move(values));
}

inline void write_features(const FeatureMatrix& m, const std::filesystem::path& dest) {
  io::write_file(dest, encode_features(m));
}

inline FeatureMatrix read_features(const std::filesystem::path& src) {
  auto bytes = io::read_file(src);
  auto ext = src.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  const bool has_magic = bytes.size() >= 4 && std::memcmp(bytes.data(), "MIL1", 4) == 0;
  if (!has_magic && ext == ".csv") {
    return parse_features_csv(std::string(bytes.begin(), bytes.end()));
  }
  return decode_features(bytes);
}

// ---------------------------------------------------------------------------
// Manifest: one JSON object per line, {"bag_id", "label", "path", "split"}.

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw validation_error("split must be 'train' or 'test', got '" + s + "'");
}

struct ManifestEntry {
  std::string bag_id;
  int label = -1;
  std::filesystem::path path;
  Split split = Split::train;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline void validate_manifest(const std::vector<ManifestEntry>& entries) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.label != 1 && e.label != -1) {
      throw validation_error("bag '" + e.bag_id + "': label must be +1 or -1");
    }
    if (!seen.insert(e.bag_id).second) throw validation_error("duplicate bag_id '" + e.bag_id + "'");
  }
}

inline std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  validate_manifest(entries);
  std::string out;
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["bag_id"] = e.bag_id;
    j["label"] = e.label;
    j["path"] = e.path.generic_string();
    j["split"] = to_string(e.split);
    out += j.dump();
    out += '\n';
  }
  return out;
}

// Relative paths are kept as written; resolve them with resolve_entry_path().
inline std::vector<ManifestEntry> parse_manifest(const std::string& text) {
  std::vector<ManifestEntry> entries;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw format_error("manifest line " + std::to_string(lineno) + ": " + ex.what());
    }
    ManifestEntry e;
    try {
      e.bag_id = j.at("bag_id").get<std::string>();
      const auto& lbl = j.at("label");
      if (!lbl.is_number_integer()) throw validation_error("label must be an integer");
      e.label = lbl.get<int>();
      e.path = j.at("path").get<std::string>();
      e.split = parse_split(j.at("split").get<std::string>());
    } catch (const nlohmann::json::exception& ex) {
      throw format_error("manifest line " + std::to_string(lineno) + ": " + ex.what());
    } catch (const validation_error& ex) {
      throw validation_error("manifest line " + std::to_string(lineno) + ": " + ex.what());
    }
    entries.push_back(std::move(e));
  }
  validate_manifest(entries);
  return entries;
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()));
}

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  const auto text = format_manifest(entries);
  io::write_file(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

inline std::filesystem::path resolve_entry_path(const ManifestEntry& e, const std::filesystem::path& manifest_path) {
  if (e.path.is_absolute()) return e.path;
  return manifest_path.parent_path() / e.path;
}

// ---------------------------------------------------------------------------
// Synthetic planted-witness datasets.

struct SynthConfig {
  std::uint32_t dim = 64;
  std::uint32_t n_pos_bags = 100;   // train split
  std::uint32_t n_neg_bags = 100;   // train split
  std::uint32_t n_test_pos_bags = 0;
  std::uint32_t n_test_neg_bags = 0;
  std::uint32_t instances_per_bag = 32;
  double witness_rate = 0.3;
  double shift_magnitude = 3.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
};

struct SyntheticBag {
  ManifestEntry entry;
  FeatureMatrix features;
  std::vector<std::uint32_t> witnesses;  // sorted row indices; empty for negative bags
};

inline std::uint32_t witness_count(double witness_rate, std::uint32_t instances) {
  // The small slack keeps exact products such as 0.3*10 from rounding up.
  const double raw = witness_rate * instances;
  const auto n = static_cast<std::uint32_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
  return std::clamp<std::uint32_t>(n, 1, instances);
}

inline void validate(const SynthConfig& cfg) {
  if (!(cfg.witness_rate > 0.0) || cfg.witness_rate > 1.0) {
    throw config_error("witness_rate must lie in (0, 1]");
  }
  if (cfg.dim == 0 || cfg.instances_per_bag == 0 || cfg.n_pos_bags == 0 || cfg.n_neg_bags == 0) {
    throw config_error("dim, instances_per_bag and train bag counts must be positive");
  }
  if (!std::isfinite(cfg.shift_magnitude) || !std::isfinite(cfg.noise_std) || cfg.noise_std < 0) {
    throw config_error("shift_magnitude must be finite and noise_std finite and non-negative");
  }
}

inline std::vector<SyntheticBag> synthesize(const SynthConfig& cfg) {
  validate(cfg);

  // Planted direction: a random unit vector.
  std::vector<double> direction(cfg.dim);
  {
    auto rng = seeded_rng(cfg.seed, {0});
    std::normal_distribution<double> gauss(0.0, 1.0);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& d : direction) {
        d = gauss(rng);
        norm += d * d;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& d : direction) d /= norm;
  }

  const auto n_witness = witness_count(cfg.witness_rate, cfg.instances_per_bag);

  struct Group {
    Split split;
    int label;
    std::uint32_t n;
    const char* prefix;
  };
  const Group groups[] = {
      {Split::train, +1, cfg.n_pos_bags, "train_pos_"},
      {Split::train, -1, cfg.n_neg_bags, "train_neg_"},
      {Split::test, +1, cfg.n_test_pos_bags, "test_pos_"},
      {Split::test, -1, cfg.n_test_neg_bags, "test_neg_"},
  };

  std::vector<SyntheticBag> bags;
  for (std::uint64_t g = 0; g < std::size(groups); ++g) {
    const auto& grp = groups[g];
    for (std::uint32_t b = 0; b < grp.n; ++b) {
      auto rng = seeded_rng(cfg.seed, {g + 1, b});
      std::normal_distribution<double> gauss(0.0, 1.0);

      std::vector<bool> is_witness(cfg.instances_per_bag, false);
      std::vector<std::uint32_t> witnesses;
      if (grp.label > 0) {
        std::vector<std::uint32_t> order(cfg.instances_per_bag);
        std::iota(order.begin(), order.end(), 0u);
        std::shuffle(order.begin(), order.end(), rng);
        witnesses.assign(order.begin(), order.begin() + n_witness);
        std::sort(witnesses.begin(), witnesses.end());
        for (auto w : witnesses) is_witness[w] = true;
      }

      std::vector<float> values(std::size_t{cfg.dim} * cfg.instances_per_bag);
      for (std::uint32_t i = 0; i < cfg.instances_per_bag; ++i) {
        const double shift = is_witness[i] ? cfg.shift_magnitude : 0.0;
        for (std::uint32_t d = 0; d < cfg.dim; ++d) {
          values[std::size_t{i} * cfg.dim + d] =
              static_cast<float>(cfg.noise_std * gauss(rng) + shift * direction[d]);
        }
      }

      char id[32];
      std::snprintf(id, sizeof id, "%s%04u", grp.prefix, b);
      SyntheticBag bag;
      bag.entry = {id, grp.label, std::string(id) + ".mil", grp.split};
      bag.features = FeatureMatrix(cfg.dim, cfg.instances_per_bag, std::move(values));
      bag.witnesses = std::move(witnesses);
      bags.push_back(std::move(bag));
    }
  }
  return bags;
}

// Writes <dir>/manifest.jsonl plus one MIL1 file per bag; returns the manifest path.
inline std::filesystem::path synthesize_dataset(const SynthConfig& cfg, const std::filesystem::path& dir) {
  const auto bags = synthesize(cfg);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  entries.reserve(bags.size());
  for (const auto& b : bags) {
    write_features(b.features, dir / b.entry.path);
    entries.push_back(b.entry);
  }
  const auto manifest = dir / "manifest.jsonl";
  write_manifest(entries, manifest);
  return manifest;
}

}  // namespace milvid
