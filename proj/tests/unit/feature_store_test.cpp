#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "eigenshot/feature_store.hpp"
#include "test_util.hpp"

namespace eigenshot {
namespace {

using testing::TempDir;
using testing::read_file;
using testing::write_file;

TEST(FeatureSet, RejectsBrokenInvariants) {
  EXPECT_THROW(FeatureSet({"a"}, {1.0F}, 0), std::invalid_argument);
  EXPECT_THROW(FeatureSet({"a", "b"}, {1.0F, 2.0F, 3.0F}, 2), std::invalid_argument);
  EXPECT_THROW(FeatureSet({"a", "a"}, {1.0F, 2.0F}, 1), std::invalid_argument);
  EXPECT_THROW(FeatureSet({"a"}, {std::numeric_limits<float>::infinity()}, 1), std::invalid_argument);
}

TEST(FeatureSet, LooksUpRowsById) {
  const FeatureSet fs({"p", "q"}, {1.0F, 2.0F, 3.0F, 4.0F}, 2);
  ASSERT_TRUE(fs.index_of("q").has_value());
  EXPECT_EQ(*fs.index_of("q"), 1U);
  EXPECT_FALSE(fs.index_of("r").has_value());
  EXPECT_EQ(fs.row(1)[0], 3.0F);
  const std::vector<std::size_t> order = {1, 0};
  const auto swapped = fs.subset(order);
  EXPECT_EQ(swapped.id(0), "q");
  EXPECT_EQ(swapped.row(1)[1], 2.0F);
}

TEST(LoadFeatures, ReadsThreeRowCsv) {
  TempDir dir;
  write_file(dir / "f.csv", "id,f0,f1\na,1,2\nb,3.5,-4\nc,0,1e-3\n");
  const auto fs = load_features(dir / "f.csv");
  EXPECT_EQ(fs.size(), 3U);
  EXPECT_EQ(fs.dim(), 2U);
  EXPECT_EQ(fs.ids(), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(fs.row(1)[0], 3.5F);
  EXPECT_EQ(fs.row(2)[1], 1e-3F);
}

TEST(LoadFeatures, NanRowIsNamed) {
  TempDir dir;
  write_file(dir / "f.csv", "id,f0\na,1\nb,NaN\n");
  try {
    load_features(dir / "f.csv");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 1U);
  }
}

TEST(LoadFeatures, RejectsMalformedCsv) {
  TempDir dir;
  write_file(dir / "short.csv", "id,f0,f1\na,1\n");
  EXPECT_THROW(load_features(dir / "short.csv"), ParseError);
  write_file(dir / "dup.csv", "id,f0\na,1\na,2\n");
  EXPECT_THROW(load_features(dir / "dup.csv"), ParseError);
  write_file(dir / "header.csv", "name,x0\na,1\n");
  EXPECT_THROW(load_features(dir / "header.csv"), ParseError);
  write_file(dir / "text.csv", "id,f0\na,one\n");
  EXPECT_THROW(load_features(dir / "text.csv"), ParseError);
  write_file(dir / "inf.csv", "id,f0\na,inf\n");
  EXPECT_THROW(load_features(dir / "inf.csv"), ParseError);
}

TEST(LoadFeatures, RejectsMalformedBinary) {
  TempDir dir;
  write_file(dir / "bad.eigf", "NOPE");
  EXPECT_THROW(load_features(dir / "bad.eigf"), ParseError);

  const FeatureSet fs({"a", "b"}, {1.0F, 2.0F}, 1);
  save_features(fs, dir / "ok.eigf");
  auto bytes = read_file(dir / "ok.eigf");
  write_file(dir / "truncated.eigf", bytes.substr(0, bytes.size() - 2));
  EXPECT_THROW(load_features(dir / "truncated.eigf"), ParseError);
  write_file(dir / "trailing.eigf", bytes + "x");
  EXPECT_THROW(load_features(dir / "trailing.eigf"), ParseError);

  auto nan_bytes = bytes;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan_bytes.data() + nan_bytes.size() - 4, &nan, 4);
  write_file(dir / "nan.eigf", nan_bytes);
  EXPECT_THROW(load_features(dir / "nan.eigf"), ParseError);
}

TEST(SaveFeatures, BinaryLayoutMatchesFormat) {
  TempDir dir;
  const FeatureSet fs({"ab"}, {1.5F, -2.0F}, 2);
  save_features(fs, dir / "x.eigf");
  const auto bytes = read_file(dir / "x.eigf");
  ASSERT_EQ(bytes.size(), 4U + 4U + 8U + 4U + (4U + 2U) + 8U);
  EXPECT_EQ(bytes.substr(0, 4), "EIGF");
  std::uint32_t version = 0;
  std::uint64_t n = 0;
  std::uint32_t d = 0;
  std::uint32_t len = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&n, bytes.data() + 8, 8);
  std::memcpy(&d, bytes.data() + 16, 4);
  std::memcpy(&len, bytes.data() + 20, 4);
  EXPECT_EQ(version, 1U);
  EXPECT_EQ(n, 1U);
  EXPECT_EQ(d, 2U);
  EXPECT_EQ(len, 2U);
  EXPECT_EQ(bytes.substr(24, 2), "ab");
  float v = 0;
  std::memcpy(&v, bytes.data() + 26, 4);
  EXPECT_EQ(v, 1.5F);
}

TEST(SaveFeatures, BinaryRoundTripIsBitExact) {
  TempDir dir;
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    std::uniform_int_distribution<std::size_t> n_dist(0, 40);
    std::uniform_int_distribution<std::size_t> d_dist(1, 9);
    const auto n = n_dist(rng);
    const auto d = d_dist(rng);
    std::vector<float> values(n * d);
    std::uniform_int_distribution<std::uint32_t> bits;
    for (auto& v : values) {
      // Any finite bit pattern, subnormals and negative zero included.
      do {
        const auto b = bits(rng);
        std::memcpy(&v, &b, 4);
      } while (!std::isfinite(v));
    }
    const FeatureSet fs(testing::make_ids(n, "id-é"), values, d);
    save_features(fs, dir / "r.eigf");
    const auto back = load_features(dir / "r.eigf");
    ASSERT_EQ(back.size(), fs.size());
    ASSERT_EQ(0, std::memcmp(back.values().data(), fs.values().data(), fs.values().size_bytes()));
    EXPECT_EQ(back.ids(), fs.ids());
  }
}

TEST(SaveFeatures, CsvRoundTripPreservesValues) {
  TempDir dir;
  std::mt19937_64 rng(11);
  const auto fs = testing::random_features(30, 5, rng, 1e3);
  save_features(fs, dir / "r.csv");
  EXPECT_EQ(load_features(dir / "r.csv"), fs);
}

TEST(SaveFeatures, EmptySetRoundTrips) {
  TempDir dir;
  const FeatureSet empty({}, {}, 4);
  for (const char* name : {"e.eigf", "e.csv"}) {
    save_features(empty, dir / name);
    const auto back = load_features(dir / name);
    EXPECT_EQ(back.size(), 0U);
    EXPECT_EQ(back.dim(), 4U);
  }
}

TEST(LoadLabels, ReadsAndValidates) {
  TempDir dir;
  write_file(dir / "l.csv", "id,label\na,0\nb,1\n");
  const auto labels = load_labels(dir / "l.csv", 2);
  EXPECT_EQ(labels.size(), 2U);
  EXPECT_EQ(labels.at("b"), 1);

  write_file(dir / "range.csv", "id,label\na,5\n");
  EXPECT_THROW(load_labels(dir / "range.csv", 2), ParseError);
  write_file(dir / "neg.csv", "id,label\na,-1\n");
  EXPECT_THROW(load_labels(dir / "neg.csv", 2), ParseError);
  write_file(dir / "dup.csv", "id,label\na,0\na,1\n");
  EXPECT_THROW(load_labels(dir / "dup.csv", 2), ParseError);
}

TEST(LoadLabels, EmptyFileGivesEmptySet) {
  TempDir dir;
  write_file(dir / "empty.csv", "");
  EXPECT_TRUE(load_labels(dir / "empty.csv", 3).empty());
  write_file(dir / "header.csv", "id,label\n");
  EXPECT_TRUE(load_labels(dir / "header.csv", 3).empty());
}

TEST(LabelSet, WithAndCoverage) {
  const LabelSet labels({{"a", 0}}, 2);
  const auto more = labels.with("b", 1);
  EXPECT_EQ(more.size(), 2U);
  EXPECT_EQ(labels.size(), 1U);
  EXPECT_THROW(labels.with("a", 1), std::invalid_argument);
  EXPECT_THROW(labels.with("c", 2), std::invalid_argument);
  const FeatureSet fs({"a"}, {0.0F}, 1);
  EXPECT_NO_THROW(labels.check_covered_by(fs));
  EXPECT_THROW(more.check_covered_by(fs), std::invalid_argument);
}

TEST(Manifest, RoundTripsAndResolvesRelativePaths) {
  TempDir dir;
  std::filesystem::create_directories(dir / "sub");
  save_features(FeatureSet({"a"}, {1.0F}, 1), dir / "sub/f.eigf");
  write_file(dir / "sub/l.csv", "id,label\na,1\n");
  save_manifest({"f.eigf", "l.csv", DatasetRole::kTarget, {{"a", "img/a.png"}}}, dir / "sub/m.json");
  const auto m = load_manifest(dir / "sub/m.json");
  EXPECT_EQ(m.features, dir / "sub/f.eigf");
  ASSERT_TRUE(m.labels.has_value());
  EXPECT_EQ(*m.labels, dir / "sub/l.csv");
  EXPECT_EQ(m.role, DatasetRole::kTarget);
  EXPECT_EQ(m.assets.at("a"), "img/a.png");
}

TEST(Manifest, RejectsBadRoleAndMissingFiles) {
  TempDir dir;
  save_features(FeatureSet({"a"}, {1.0F}, 1), dir / "f.eigf");
  write_file(dir / "role.json", R"({"features": "f.eigf", "role": "both"})");
  EXPECT_THROW(load_manifest(dir / "role.json"), ParseError);
  write_file(dir / "missing.json", R"({"features": "nope.eigf", "role": "source"})");
  EXPECT_THROW(load_manifest(dir / "missing.json"), std::runtime_error);
  write_file(dir / "json.json", "{not json");
  EXPECT_THROW(load_manifest(dir / "json.json"), ParseError);
}

}  // namespace
}  // namespace eigenshot
