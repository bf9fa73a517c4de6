#pragma once

// Lloyd KMeans, anchor-constrained KMeans and BCubed precision.
//
// ackmeans() keeps the first m centers (the anchors) frozen for the whole run
// and only moves the K free centers. Plain kmeans() is the m = 0 case.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "eigenshot/feature_store.hpp"

namespace eigenshot {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class KMeansInit { kRandomPick, kPlusPlus };

struct ClusterOptions {
  std::size_t max_iterations = 100;
  KMeansInit init = KMeansInit::kRandomPick;
  std::uint64_t seed = 0;
};

struct ClusterModel {
  std::size_t num_anchors = 0;  // m
  std::size_t num_free = 0;     // K
  RowMatrix centers;            // (m + K) x d, anchors first
  std::vector<std::size_t> assignment;
  std::uint64_t seed = 0;
  std::size_t iterations_run = 0;
  // Total SSE over all samples after each center update.
  std::vector<double> sse_trace;

  std::size_t num_centers() const noexcept { return num_anchors + num_free; }
};

struct ClusterQuality {
  double bcubed_precision = 0.0;
};

RowMatrix to_matrix(const FeatureSet& features);
FeatureSet from_matrix(const RowMatrix& values, std::vector<std::string> ids);

/// Rows scaled to unit L2 norm; all-zero rows are left unchanged.
FeatureSet l2_normalized(const FeatureSet& features);

/// Index of the nearest row of `centers` to `point`; ties go to the lowest index.
std::size_t nearest_center(std::span<const double> point, const RowMatrix& centers);

/// Row indices the free centers are seeded from. Samples lying exactly on an
/// anchor are skipped unless fewer than `k` others remain.
std::vector<std::size_t> initial_free_centers(const RowMatrix& points, const RowMatrix& anchors,
                                              std::size_t k, KMeansInit init, std::uint64_t seed);

ClusterModel kmeans(const FeatureSet& features, std::size_t k, const ClusterOptions& options = {});

ClusterModel ackmeans(const FeatureSet& features, const RowMatrix& anchors, std::size_t k,
                      const ClusterOptions& options = {});

/// Same as ackmeans() but with the free centers' starting positions given.
ClusterModel ackmeans_from(const FeatureSet& features, const RowMatrix& anchors,
                           const RowMatrix& initial_free, const ClusterOptions& options = {});

/// Inputs are parallel arrays over the labeled samples only.
double bcubed_precision(std::span<const std::size_t> clusters, std::span<const int> labels);

/// `assignment[i]` is the cluster of `ids[i]`; only ids present in `labels`
/// contribute. Throws std::invalid_argument if no id is labeled.
ClusterQuality bcubed_precision(std::span<const std::size_t> assignment,
                                std::span<const std::string> ids, const LabelSet& labels);

/// Mean-centered coordinates on the top `out_dims` principal components. Each
/// component's sign is fixed so its largest-magnitude loading is positive.
RowMatrix pca_coordinates(const FeatureSet& features, std::size_t out_dims);
FeatureSet pca_project(const FeatureSet& features, std::size_t out_dims);

nlohmann::json to_json(const ClusterModel& model, std::span<const std::string> ids);

}  // namespace eigenshot
