#pragma once

// Containers for embeddings and labels plus CSV / binary persistence.
//
// A FeatureSet is immutable once built: N rows of d float32 values, each row
// keyed by a unique string id. Every loader validates the whole file before
// returning, so callers never observe a partially loaded set.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace eigenshot {

/// Raised for malformed input files. `row()` is the zero-based data row the
/// problem was found on (header excluded), or npos for file-level problems.
class ParseError : public std::runtime_error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  ParseError(const std::string& what, std::size_t row = npos);

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

enum class FeatureFormat { kCsv, kBinary };

/// Picks the format from a file extension: ".csv" is CSV, anything else binary.
FeatureFormat format_from_path(const std::filesystem::path& path);

class FeatureSet {
 public:
  FeatureSet() = default;

  /// Throws std::invalid_argument if any invariant is violated: d >= 1,
  /// values.size() == ids.size() * d, unique ids, finite values.
  FeatureSet(std::vector<std::string> ids, std::vector<float> values, std::size_t dim);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return ids_.empty(); }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& id(std::size_t row) const { return ids_.at(row); }
  std::span<const float> row(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }
  std::span<const float> values() const noexcept { return values_; }

  std::optional<std::size_t> index_of(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.contains(id); }

  /// Rows in the given order, ids preserved.
  FeatureSet subset(std::span<const std::size_t> rows) const;

  friend bool operator==(const FeatureSet& a, const FeatureSet& b) {
    return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<float> values_;
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
};

class LabelSet {
 public:
  LabelSet() = default;

  /// Throws std::invalid_argument if num_classes < 2 or a label is outside
  /// [0, num_classes).
  LabelSet(std::map<std::string, int> labels, int num_classes);

  int num_classes() const noexcept { return num_classes_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }

  bool contains(const std::string& id) const { return labels_.contains(id); }
  int at(const std::string& id) const;
  std::optional<int> find(const std::string& id) const;

  const std::map<std::string, int>& entries() const noexcept { return labels_; }

  /// Returns a copy with one more entry; throws on duplicate id or bad label.
  LabelSet with(const std::string& id, int label) const;

  /// Throws std::invalid_argument if a labeled id is missing from `features`.
  void check_covered_by(const FeatureSet& features) const;

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  std::map<std::string, int> labels_;
  int num_classes_ = 2;
};

enum class DatasetRole { kSource, kTarget };

struct DatasetManifest {
  std::filesystem::path features;
  std::optional<std::filesystem::path> labels;
  DatasetRole role = DatasetRole::kTarget;
  std::map<std::string, std::string> assets;
};

FeatureSet load_features(const std::filesystem::path& path, FeatureFormat format);
FeatureSet load_features(const std::filesystem::path& path);

void save_features(const FeatureSet& features, const std::filesystem::path& path,
                   FeatureFormat format);
void save_features(const FeatureSet& features, const std::filesystem::path& path);

LabelSet load_labels(const std::filesystem::path& path, int num_classes);
void save_labels(const LabelSet& labels, const std::filesystem::path& path);

/// Relative paths inside the manifest are resolved against its directory.
/// Throws ParseError on bad JSON / role and std::runtime_error on missing files.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace eigenshot
