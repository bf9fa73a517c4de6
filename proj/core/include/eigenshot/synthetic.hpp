#pragma once

// Seeded Gaussian-blob generators standing in for source / target datasets.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "eigenshot/feature_store.hpp"

namespace eigenshot {

struct BlobConfig {
  std::size_t dim = 32;
  std::size_t source_blobs = 50;
  std::size_t source_per_blob = 40;
  int target_classes = 10;
  std::size_t target_per_class = 30;
  std::size_t test_per_class = 30;
  std::size_t source_subspace = 16;  // leading dims the source varies in
  double source_spread = 4.0;        // std of source blob centers
  double source_blob_std = 1.0;
  double source_off_std = 0.05;      // source noise outside its subspace
  double target_spread = 3.0;        // std of target class centers (complement dims)
  double target_class_std = 1.0;
  double target_nuisance_std = 1.5;  // target noise inside the source subspace
  double target_shift = 0.0;         // offset of the target inside the source subspace
  bool rotate = true;                // random orthogonal rotation of the whole space
};

/// "blobs-standard": target classes separable but overlapping enough that
/// which samples get labeled matters. "blobs-shifted": target classes live in
/// directions the source barely varies in (d = 32, 50 source blobs, 10 classes).
std::optional<BlobConfig> blob_preset(std::string_view name);

struct SyntheticData {
  FeatureSet source;
  LabelSet source_labels;
  FeatureSet target;  // unlabeled pool for the annotation loop
  LabelSet target_labels;
  FeatureSet test;    // held-out evaluation split, same classes
  LabelSet test_labels;
};

SyntheticData generate_blobs(const BlobConfig& config, std::uint64_t seed);

/// One uniformly chosen id per class from `labels`, restricted to ids in `pool`.
LabelSet pick_class_seeds(const FeatureSet& pool, const LabelSet& labels, std::uint64_t seed);

}  // namespace eigenshot
