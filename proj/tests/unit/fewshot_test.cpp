#include <algorithm>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "eigenshot/fewshot.hpp"
#include "eigenshot/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace eigenshot {
namespace {

FeatureSet two_blobs(std::size_t per_blob, std::mt19937_64& rng) {
  std::normal_distribution<float> noise(0.0F, 0.5F);
  std::vector<std::string> ids;
  std::vector<float> values;
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    ids.push_back("p" + std::to_string(i));
    const float center = i < per_blob ? -10.0F : 10.0F;
    values.push_back(center + noise(rng));
    values.push_back(noise(rng));
  }
  return FeatureSet(ids, values, 2);
}

TEST(Fit, NearestCentroidOneLabelPerBlob) {
  std::mt19937_64 rng(1);
  const auto fs = two_blobs(20, rng);
  const LabelSet seeds({{"p0", 0}, {"p20", 1}}, 2);
  const auto model = fit(fs, seeds, ClassifierKind::kNearestCentroid);
  const auto predicted = predict(model, fs);
  for (std::size_t i = 0; i < fs.size(); ++i) EXPECT_EQ(predicted[i], i < 20 ? 0 : 1);
}

TEST(Fit, IdenticalVectorsTieToLowestClass) {
  const FeatureSet fs({"a", "b", "c"}, {1.0F, 1.0F, 1.0F}, 1);
  const LabelSet labels({{"a", 1}, {"b", 0}}, 2);
  for (const auto kind : {ClassifierKind::kNearestCentroid, ClassifierKind::kLinearSoftmax}) {
    const auto model = fit(fs, labels, kind, {50, 0.1, 3});
    if (kind == ClassifierKind::kNearestCentroid) {
      EXPECT_EQ(predict(model, fs), (std::vector<int>{0, 0, 0}));
    }
  }
}

TEST(Fit, ClassWithoutLabelsIsNeverPredicted) {
  const FeatureSet fs({"a", "b", "z"}, {0.0F, 10.0F, 0.0F}, 1);
  const LabelSet labels({{"a", 2}, {"b", 1}}, 3);
  const auto model = fit(fs, labels, ClassifierKind::kNearestCentroid);
  EXPECT_FALSE(model.has_class[0]);
  // Class 0's zero centroid coincides with "z", but it is not a candidate.
  EXPECT_EQ(predict(model, fs), (std::vector<int>{2, 1, 2}));
}

TEST(Fit, CentroidIsPermutationInvariant) {
  std::mt19937_64 rng(2);
  const auto fs = testing::random_features(30, 3, rng);
  std::map<std::string, int> entries;
  for (std::size_t i = 0; i < 30; ++i) entries[fs.id(i)] = static_cast<int>(i % 3);
  const auto a = fit(fs, LabelSet(entries, 3), ClassifierKind::kNearestCentroid);
  std::vector<std::size_t> order(30);
  for (std::size_t i = 0; i < 30; ++i) order[i] = 29 - i;
  const auto b = fit(fs.subset(order), LabelSet(entries, 3), ClassifierKind::kNearestCentroid);
  EXPECT_LT((a.centroids - b.centroids).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fit, SoftmaxSeparatesLinearData) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> noise(0.0F, 0.3F);
  std::vector<std::string> ids;
  std::vector<float> values;
  std::map<std::string, int> entries;
  const float centers[3][2] = {{0, 4}, {-4, -2}, {4, -2}};
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 15; ++i) {
      const auto id = "c" + std::to_string(c) + "-" + std::to_string(i);
      ids.push_back(id);
      entries[id] = c;
      values.push_back(centers[c][0] + noise(rng));
      values.push_back(centers[c][1] + noise(rng));
    }
  }
  const FeatureSet fs(ids, values, 2);
  const LabelSet labels(entries, 3);
  const auto model = fit(fs, labels, ClassifierKind::kLinearSoftmax, {200, 0.1, 4});
  EXPECT_EQ(evaluate(model, fs, labels).top1_accuracy, 1.0);

  auto shifted = model;
  shifted.bias.array() += 17.0;
  EXPECT_EQ(predict(shifted, fs), predict(model, fs));
}

TEST(Fit, SoftmaxLossNeverIncreasesAtSmallStep) {
  const auto data = generate_blobs(*blob_preset("blobs-standard"), 6);
  const auto model = fit(data.target, data.target_labels, ClassifierKind::kLinearSoftmax, {100, 1e-3, 6});
  ASSERT_EQ(model.loss_history.size(), 101U);
  for (std::size_t e = 1; e < model.loss_history.size(); ++e) {
    EXPECT_LE(model.loss_history[e], model.loss_history[e - 1]);
  }
}

TEST(Fit, RejectsUnusableLabels) {
  const FeatureSet fs({"a"}, {0.0F}, 1);
  EXPECT_THROW(fit(fs, LabelSet({{"zz", 0}}, 2), ClassifierKind::kNearestCentroid), std::invalid_argument);
}

TEST(Predict, CentroidAndEquidistantSamples) {
  const FeatureSet fs({"a", "b"}, {0.0F, 2.0F}, 1);
  const auto model = fit(fs, LabelSet({{"a", 0}, {"b", 1}}, 2), ClassifierKind::kNearestCentroid);
  const float mid[] = {1.0F};
  const float at_b[] = {2.0F};
  EXPECT_EQ(predict_one(model, mid), 0);
  EXPECT_EQ(predict_one(model, at_b), 1);
  EXPECT_THROW(predict(model, FeatureSet({"x"}, {1.0F, 2.0F}, 2)), std::invalid_argument);
}

TEST(Evaluate, ImbalancedArithmetic) {
  std::vector<int> truth(12, 0);
  truth[10] = truth[11] = 1;
  std::vector<int> predicted(12, 0);
  const auto report = score_predictions(predicted, truth, 2);
  EXPECT_DOUBLE_EQ(report.top1_accuracy, 10.0 / 12.0);
  EXPECT_DOUBLE_EQ(report.mean_class_accuracy, 0.5);
  EXPECT_EQ(score_predictions(truth, truth, 2).top1_accuracy, 1.0);
  EXPECT_EQ(score_predictions(truth, truth, 2).mean_class_accuracy, 1.0);
}

TEST(Evaluate, MatchesBruteForceRecount) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> label(0, 4);
    std::uniform_int_distribution<std::size_t> size(1, 60);
    const auto n = size(rng);
    std::vector<int> truth(n), predicted(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = label(rng);
      predicted[i] = label(rng);
    }
    const auto report = score_predictions(predicted, truth, 5);
    const auto oracle = testing::recount_accuracy(predicted, truth);
    EXPECT_DOUBLE_EQ(report.top1_accuracy, oracle.top1);
    EXPECT_DOUBLE_EQ(report.mean_class_accuracy, oracle.mean_class);
    for (int c = 0; c < 5; ++c) {
      const bool present = std::find(truth.begin(), truth.end(), c) != truth.end();
      EXPECT_EQ(report.per_class_accuracy[static_cast<std::size_t>(c)].has_value(), present);
    }
  }
}

TEST(Evaluate, RejectsEmptyEvalSet) {
  const FeatureSet fs({"a"}, {0.0F}, 1);
  const auto model = fit(fs, LabelSet({{"a", 0}}, 2), ClassifierKind::kNearestCentroid);
  EXPECT_THROW(evaluate(model, fs, LabelSet({}, 2)), std::invalid_argument);
}

TEST(Serialization, ModelAndReportRoundTrip) {
  std::mt19937_64 rng(10);
  const auto fs = two_blobs(5, rng);
  const LabelSet labels({{"p0", 0}, {"p5", 2}}, 3);
  for (const auto kind : {ClassifierKind::kNearestCentroid, ClassifierKind::kLinearSoftmax}) {
    const auto model = fit(fs, labels, kind, {20, 0.1, 1});
    const auto back = classifier_from_json(to_json(model));
    EXPECT_EQ(predict(back, fs), predict(model, fs));
    EXPECT_EQ(to_json(back), to_json(model));
  }
  const auto report = evaluate(fit(fs, labels, ClassifierKind::kNearestCentroid), fs, labels);
  const auto back = eval_report_from_json(to_json(report));
  EXPECT_EQ(back.top1_accuracy, report.top1_accuracy);
  EXPECT_EQ(back.per_class_accuracy, report.per_class_accuracy);
  EXPECT_EQ(classifier_kind_from_string("linear-softmax"), ClassifierKind::kLinearSoftmax);
  EXPECT_FALSE(classifier_kind_from_string("svm").has_value());
}

}  // namespace
}  // namespace eigenshot
