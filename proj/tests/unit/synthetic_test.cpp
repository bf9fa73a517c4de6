#include <map>

#include <gtest/gtest.h>

#include "eigenshot/synthetic.hpp"

namespace eigenshot {
namespace {

std::map<int, int> class_counts(const LabelSet& labels) {
  std::map<int, int> counts;
  for (const auto& [id, label] : labels.entries()) ++counts[label];
  return counts;
}

TEST(Blobs, StandardPresetShapes) {
  const auto cfg = *blob_preset("blobs-standard");
  const auto data = generate_blobs(cfg, 1);
  EXPECT_EQ(data.target.dim(), cfg.dim);
  EXPECT_EQ(data.source.size(), cfg.source_blobs * cfg.source_per_blob);
  EXPECT_EQ(data.target.size(), static_cast<std::size_t>(cfg.target_classes) * cfg.target_per_class);
  const auto counts = class_counts(data.target_labels);
  EXPECT_EQ(counts.size(), 10U);
  for (const auto& [label, n] : counts) EXPECT_EQ(n, static_cast<int>(cfg.target_per_class));
  EXPECT_NO_THROW(data.target_labels.check_covered_by(data.target));
  EXPECT_NO_THROW(data.test_labels.check_covered_by(data.test));
}

TEST(Blobs, ShiftedPresetMatchesItsDescription) {
  const auto cfg = *blob_preset("blobs-shifted");
  EXPECT_EQ(cfg.dim, 32U);
  EXPECT_EQ(cfg.source_blobs, 50U);
  EXPECT_EQ(cfg.target_classes, 10);
  EXPECT_FALSE(blob_preset("blobs-none").has_value());
}

TEST(Blobs, SeedDeterminesData) {
  const auto cfg = *blob_preset("blobs-standard");
  const auto a = generate_blobs(cfg, 4);
  const auto b = generate_blobs(cfg, 4);
  const auto c = generate_blobs(cfg, 5);
  EXPECT_EQ(a.target, b.target);
  EXPECT_EQ(a.source, b.source);
  EXPECT_EQ(a.target_labels, b.target_labels);
  EXPECT_FALSE(a.target == c.target);
}

TEST(ClassSeeds, OnePerClassFromThePool) {
  const auto data = generate_blobs(*blob_preset("blobs-standard"), 2);
  const auto seeds = pick_class_seeds(data.target, data.target_labels, 2);
  EXPECT_EQ(seeds.size(), 10U);
  const auto counts = class_counts(seeds);
  EXPECT_EQ(counts.size(), 10U);
  for (const auto& [id, label] : seeds.entries()) {
    EXPECT_TRUE(data.target.contains(id));
    EXPECT_EQ(data.target_labels.at(id), label);
  }
}

}  // namespace
}  // namespace eigenshot
