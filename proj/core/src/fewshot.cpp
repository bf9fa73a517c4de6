#include "eigenshot/fewshot.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace eigenshot {

namespace {

struct LabeledRows {
  RowMatrix x;
  std::vector<int> y;
};

LabeledRows gather(const FeatureSet& features, const LabelSet& labels) {
  std::vector<std::size_t> rows;
  std::vector<int> y;
  for (const auto& [id, label] : labels.entries()) {
    if (const auto row = features.index_of(id)) {
      rows.push_back(*row);
      y.push_back(label);
    }
  }
  if (rows.empty()) throw std::invalid_argument("no labeled samples to fit on");
  LabeledRows out{RowMatrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(features.dim())), std::move(y)};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = features.row(rows[i]);
    for (std::size_t j = 0; j < src.size(); ++j) out.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = src[j];
  }
  return out;
}

// Row-wise softmax cross-entropy; fills `probs` and returns the mean loss.
double softmax_loss(const RowMatrix& scores, const std::vector<int>& y, RowMatrix& probs) {
  probs.resize(scores.rows(), scores.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double mx = scores.row(i).maxCoeff();
    probs.row(i) = (scores.row(i).array() - mx).exp();
    const double z = probs.row(i).sum();
    probs.row(i) /= z;
    total += mx + std::log(z) - scores(i, y[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(scores.rows());
}

ClassifierModel fit_centroids(const LabeledRows& data, int num_classes) {
  ClassifierModel model;
  model.kind = ClassifierKind::kNearestCentroid;
  model.num_classes = num_classes;
  model.dim = static_cast<std::size_t>(data.x.cols());
  model.centroids = RowMatrix::Zero(num_classes, data.x.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    const auto c = data.y[static_cast<std::size_t>(i)];
    model.centroids.row(c) += data.x.row(i);
    ++counts[static_cast<std::size_t>(c)];
  }
  model.has_class.assign(static_cast<std::size_t>(num_classes), false);
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) continue;
    model.centroids.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    model.has_class[static_cast<std::size_t>(c)] = true;
  }
  return model;
}

ClassifierModel fit_softmax(const LabeledRows& data, int num_classes, const FitParams& params) {
  if (params.epochs == 0 || !(params.learning_rate > 0.0)) {
    throw std::invalid_argument("linear-softmax needs positive epochs and learning rate");
  }
  ClassifierModel model;
  model.kind = ClassifierKind::kLinearSoftmax;
  model.num_classes = num_classes;
  model.dim = static_cast<std::size_t>(data.x.cols());
  model.weights.resize(num_classes, data.x.cols());
  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> normal(0.0, 0.01);
  for (Eigen::Index k = 0; k < model.weights.size(); ++k) model.weights.data()[k] = normal(rng);
  model.bias = Eigen::VectorXd::Zero(num_classes);

  const double inv_n = 1.0 / static_cast<double>(data.x.rows());
  RowMatrix probs;
  for (std::size_t epoch = 0; epoch <= params.epochs; ++epoch) {
    const RowMatrix scores = (data.x * model.weights.transpose()).rowwise() + model.bias.transpose();
    const double loss = softmax_loss(scores, data.y, probs);
    model.loss_history.push_back(loss);
    if (epoch == params.epochs) break;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) probs(i, data.y[static_cast<std::size_t>(i)]) -= 1.0;
    model.weights -= params.learning_rate * inv_n * (probs.transpose() * data.x);
    model.bias -= params.learning_rate * inv_n * probs.colwise().sum().transpose();
  }
  if (!model.weights.allFinite() || !model.bias.allFinite()) {
    throw std::runtime_error("linear-softmax training produced non-finite parameters");
  }
  return model;
}

}  // namespace

std::string_view to_string(ClassifierKind kind) {
  return kind == ClassifierKind::kNearestCentroid ? "nearest-centroid" : "linear-softmax";
}

std::optional<ClassifierKind> classifier_kind_from_string(std::string_view name) {
  if (name == "nearest-centroid") return ClassifierKind::kNearestCentroid;
  if (name == "linear-softmax") return ClassifierKind::kLinearSoftmax;
  return std::nullopt;
}

ClassifierModel fit(const FeatureSet& features, const LabelSet& labels, ClassifierKind kind,
                    const FitParams& params) {
  const auto data = gather(features, labels);
  return kind == ClassifierKind::kNearestCentroid ? fit_centroids(data, labels.num_classes())
                                                  : fit_softmax(data, labels.num_classes(), params);
}

int predict_one(const ClassifierModel& model, std::span<const float> x) {
  if (x.size() != model.dim) throw std::invalid_argument("feature dimension does not match classifier");
  const auto d = static_cast<Eigen::Index>(model.dim);
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < model.num_classes; ++c) {
    double score = 0.0;
    if (model.kind == ClassifierKind::kNearestCentroid) {
      if (!model.has_class[static_cast<std::size_t>(c)]) continue;
      for (Eigen::Index j = 0; j < d; ++j) {
        const double diff = x[static_cast<std::size_t>(j)] - model.centroids(c, j);
        score -= diff * diff;
      }
    } else {
      score = model.bias(c);
      for (Eigen::Index j = 0; j < d; ++j) score += model.weights(c, j) * x[static_cast<std::size_t>(j)];
    }
    if (best < 0 || score > best_score) {
      best = c;
      best_score = score;
    }
  }
  if (best < 0) throw std::logic_error("classifier has no predictable class");
  return best;
}

std::vector<int> predict(const ClassifierModel& model, const FeatureSet& features) {
  if (features.dim() != model.dim) throw std::invalid_argument("feature dimension does not match classifier");
  std::vector<int> out;
  out.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) out.push_back(predict_one(model, features.row(i)));
  return out;
}

EvalReport score_predictions(std::span<const int> predicted, std::span<const int> truth,
                             int num_classes) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("prediction/label length mismatch");
  if (truth.empty()) throw std::invalid_argument("empty evaluation set");
  std::vector<std::size_t> total(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::size_t> hit(static_cast<std::size_t>(num_classes), 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto c = static_cast<std::size_t>(truth[i]);
    ++total.at(c);
    if (predicted[i] == truth[i]) {
      ++hit[c];
      ++correct;
    }
  }
  EvalReport report;
  report.top1_accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  report.per_class_accuracy.resize(static_cast<std::size_t>(num_classes));
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < total.size(); ++c) {
    if (total[c] == 0) continue;
    const double acc = static_cast<double>(hit[c]) / static_cast<double>(total[c]);
    report.per_class_accuracy[c] = acc;
    sum += acc;
    ++present;
  }
  report.mean_class_accuracy = sum / static_cast<double>(present);
  return report;
}

EvalReport evaluate(const ClassifierModel& model, const FeatureSet& features, const LabelSet& labels) {
  std::vector<int> predicted;
  std::vector<int> truth;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (const auto label = labels.find(features.id(i))) {
      predicted.push_back(predict_one(model, features.row(i)));
      truth.push_back(*label);
    }
  }
  return score_predictions(predicted, truth, labels.num_classes());
}

namespace {

nlohmann::json rows_to_json(const RowMatrix& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(m.row(i).data(), m.row(i).data() + m.cols());
    rows.push_back(row);
  }
  return rows;
}

RowMatrix rows_from_json(const nlohmann::json& rows, Eigen::Index cols) {
  RowMatrix m(static_cast<Eigen::Index>(rows.size()), cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto row = rows[static_cast<std::size_t>(i)].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ParseError("classifier matrix has wrong width");
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = row[static_cast<std::size_t>(j)];
  }
  return m;
}

}  // namespace

nlohmann::json to_json(const ClassifierModel& model) {
  nlohmann::json doc;
  doc["kind"] = to_string(model.kind);
  doc["num_classes"] = model.num_classes;
  doc["dim"] = model.dim;
  if (model.kind == ClassifierKind::kNearestCentroid) {
    doc["centroids"] = rows_to_json(model.centroids);
    doc["has_class"] = model.has_class;
  } else {
    doc["weights"] = rows_to_json(model.weights);
    doc["bias"] = std::vector<double>(model.bias.data(), model.bias.data() + model.bias.size());
  }
  return doc;
}

ClassifierModel classifier_from_json(const nlohmann::json& doc) {
  try {
    ClassifierModel model;
    const auto kind = classifier_kind_from_string(doc.at("kind").get<std::string>());
    if (!kind) throw ParseError("unknown classifier kind");
    model.kind = *kind;
    model.num_classes = doc.at("num_classes").get<int>();
    model.dim = doc.at("dim").get<std::size_t>();
    const auto d = static_cast<Eigen::Index>(model.dim);
    if (model.kind == ClassifierKind::kNearestCentroid) {
      model.centroids = rows_from_json(doc.at("centroids"), d);
      model.has_class = doc.at("has_class").get<std::vector<bool>>();
    } else {
      model.weights = rows_from_json(doc.at("weights"), d);
      const auto bias = doc.at("bias").get<std::vector<double>>();
      model.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed classifier JSON: ") + e.what());
  }
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json doc;
  doc["top1_accuracy"] = report.top1_accuracy;
  doc["mean_class_accuracy"] = report.mean_class_accuracy;
  auto per_class = nlohmann::json::array();
  for (const auto& acc : report.per_class_accuracy) {
    per_class.push_back(acc ? nlohmann::json(*acc) : nlohmann::json(nullptr));
  }
  doc["per_class_accuracy"] = std::move(per_class);
  return doc;
}

EvalReport eval_report_from_json(const nlohmann::json& doc) {
  EvalReport report;
  report.top1_accuracy = doc.at("top1_accuracy").get<double>();
  report.mean_class_accuracy = doc.at("mean_class_accuracy").get<double>();
  for (const auto& v : doc.at("per_class_accuracy")) {
    report.per_class_accuracy.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
  }
  return report;
}

}  // namespace eigenshot
