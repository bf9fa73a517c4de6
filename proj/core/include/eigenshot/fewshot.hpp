#pragma once

// Classification heads fitted on frozen features, and the accuracy report.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "eigenshot/clustering.hpp"
#include "eigenshot/feature_store.hpp"

namespace eigenshot {

enum class ClassifierKind { kNearestCentroid, kLinearSoftmax };

std::string_view to_string(ClassifierKind kind);
std::optional<ClassifierKind> classifier_kind_from_string(std::string_view name);

struct FitParams {
  std::size_t epochs = 200;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
};

struct ClassifierModel {
  ClassifierKind kind = ClassifierKind::kNearestCentroid;
  int num_classes = 0;
  std::size_t dim = 0;
  // Nearest-centroid: one row per class; rows of classes without labeled
  // samples are zero and `has_class` is false for them.
  RowMatrix centroids;
  std::vector<bool> has_class;
  // Linear-softmax: scores = weights * x + bias.
  RowMatrix weights;
  Eigen::VectorXd bias;
  // Mean cross-entropy before each epoch's update plus the final value.
  std::vector<double> loss_history;
};

/// Throws std::invalid_argument if no labeled id is present in `features`.
ClassifierModel fit(const FeatureSet& features, const LabelSet& labels, ClassifierKind kind,
                    const FitParams& params = {});

/// Per-class scores; argmax wins, ties go to the lowest class index.
std::vector<int> predict(const ClassifierModel& model, const FeatureSet& features);
int predict_one(const ClassifierModel& model, std::span<const float> x);

struct EvalReport {
  double top1_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
  // Empty for classes absent from the evaluation set.
  std::vector<std::optional<double>> per_class_accuracy;
};

EvalReport evaluate(const ClassifierModel& model, const FeatureSet& features, const LabelSet& labels);
/// Metrics from parallel arrays of predictions and ground truth.
EvalReport score_predictions(std::span<const int> predicted, std::span<const int> truth,
                             int num_classes);

nlohmann::json to_json(const ClassifierModel& model);
ClassifierModel classifier_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& doc);

}  // namespace eigenshot
