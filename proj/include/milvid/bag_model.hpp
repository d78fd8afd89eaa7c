#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "milvid/error.hpp"
#include "milvid/feature_store.hpp"

namespace milvid {

using FeatureVector = std::vector<double>;

struct Instance {
  FeatureVector features;
  std::uint32_t temporal_index = 0;

  friend bool operator==(const Instance&, const Instance&) = default;
};

// A video: instances in temporal order plus the video-level label.
struct Bag {
  std::string bag_id;
  int label = -1;
  std::vector<Instance> instances;

  std::size_t size() const { return instances.size(); }
  std::size_t dim() const { return instances.empty() ? 0 : instances.front().features.size(); }
  bool positive() const { return label > 0; }

  friend bool operator==(const Bag&, const Bag&) = default;
};

struct Dataset {
  std::vector<Bag> bags;
  std::size_t dim = 0;

  std::size_t size() const { return bags.size(); }
  std::size_t count_label(int label) const {
    return static_cast<std::size_t>(std::count_if(bags.begin(), bags.end(),
                                                  [label](const Bag& b) { return b.label == label; }));
  }
};

inline void check_label(int label) {
  if (label != 1 && label != -1) throw validation_error("bag label must be +1 or -1");
}

inline Bag assemble_bag(const FeatureMatrix& m, int label, std::string bag_id) {
  check_label(label);
  if (m.count() == 0) throw empty_bag_error("bag '" + bag_id + "' has no instances");
  Bag bag{std::move(bag_id), label, {}};
  bag.instances.reserve(m.count());
  for (std::uint32_t r = 0; r < m.count(); ++r) {
    auto row = m.row(r);
    bag.instances.push_back({FeatureVector(row.begin(), row.end()), r});
  }
  return bag;
}

// Averages clips into exactly `segments` temporal segments. Segment j covers
// source rows [floor(j*n/S), floor((j+1)*n/S)); an empty range (n < S)
// copies row min(floor(j*n/S), n-1).
inline Bag pool_segments(const Bag& bag, std::size_t segments) {
  if (segments == 0) throw config_error("segment count must be positive");
  const std::size_t n = bag.size();
  if (n == 0) throw empty_bag_error("bag '" + bag.bag_id + "' has no instances");
  const std::size_t dim = bag.dim();

  Bag out{bag.bag_id, bag.label, {}};
  out.instances.reserve(segments);
  for (std::size_t j = 0; j < segments; ++j) {
    const std::size_t lo = j * n / segments;
    const std::size_t hi = (j + 1) * n / segments;
    FeatureVector f(dim, 0.0);
    if (lo == hi) {
      f = bag.instances[std::min(lo, n - 1)].features;
    } else {
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& src = bag.instances[i].features;
        for (std::size_t d = 0; d < dim; ++d) f[d] += src[d];
      }
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (auto& v : f) v *= inv;
    }
    out.instances.push_back({std::move(f), static_cast<std::uint32_t>(j)});
  }
  return out;
}

// +1 if any instance is positive, -1 iff all are negative.
inline int infer_bag_label(std::span<const int> instance_labels) {
  if (instance_labels.empty()) throw empty_bag_error("cannot infer the label of an empty bag");
  for (int y : instance_labels) check_label(y);
  return std::ranges::any_of(instance_labels, [](int y) { return y == 1; }) ? 1 : -1;
}

struct LoadOptions {
  std::optional<Split> split;           // nullopt: every entry
  std::optional<std::size_t> segments;  // pool each bag to this many segments
};

inline Dataset load_dataset(const std::filesystem::path& manifest_path, const LoadOptions& opts = {}) {
  const auto entries = read_manifest(manifest_path);
  Dataset ds;
  for (const auto& e : entries) {
    if (opts.split && e.split != *opts.split) continue;
    const auto m = read_features(resolve_entry_path(e, manifest_path));
    if (ds.dim == 0) {
      ds.dim = m.dim();
    } else if (m.dim() != ds.dim) {
      throw validation_error("bag '" + e.bag_id + "' has dim " + std::to_string(m.dim()) +
                             ", manifest uses dim " + std::to_string(ds.dim));
    }
    auto bag = assemble_bag(m, e.label, e.bag_id);
    if (opts.segments) bag = pool_segments(bag, *opts.segments);
    ds.bags.push_back(std::move(bag));
  }
  return ds;
}

inline Dataset make_dataset(std::vector<Bag> bags) {
  Dataset ds;
  for (const auto& b : bags) {
    if (b.instances.empty()) throw empty_bag_error("bag '" + b.bag_id + "' has no instances");
    if (ds.dim == 0) ds.dim = b.dim();
    if (b.dim() != ds.dim) throw validation_error("bag '" + b.bag_id + "' has mismatched dim");
  }
  ds.bags = std::move(bags);
  return ds;
}

}  // namespace milvid
