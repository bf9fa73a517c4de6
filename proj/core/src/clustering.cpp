#include "eigenshot/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>

namespace eigenshot {

namespace {

double squared_distance(std::span<const double> a, const RowMatrix& centers, Eigen::Index row) {
  double sum = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - centers(row, static_cast<Eigen::Index>(j));
    sum += diff * diff;
  }
  return sum;
}

std::span<const double> row_span(const RowMatrix& m, Eigen::Index row) {
  return {m.data() + row * m.cols(), static_cast<std::size_t>(m.cols())};
}

// Assigns every point to its nearest center; returns the total SSE.
double assign_points(const RowMatrix& points, const RowMatrix& centers,
                     std::vector<std::size_t>& assignment, std::vector<double>& distances) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const auto p = row_span(points, i);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
      const double d = squared_distance(p, centers, c);
      if (d < best_d) {
        best_d = d;
        best = static_cast<std::size_t>(c);
      }
    }
    assignment[static_cast<std::size_t>(i)] = best;
    distances[static_cast<std::size_t>(i)] = best_d;
    total += best_d;
  }
  return total;
}

double total_sse(const RowMatrix& points, const RowMatrix& centers,
                 const std::vector<std::size_t>& assignment) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    total += squared_distance(row_span(points, i), centers,
                              static_cast<Eigen::Index>(assignment[static_cast<std::size_t>(i)]));
  }
  return total;
}

// Moves free centers to the mean of their members, summing in row order.
// Empty free clusters are re-seeded at the sample farthest from its assigned
// center; returns true if any repair happened.
bool update_free_centers(const RowMatrix& points, RowMatrix& centers, std::size_t num_anchors,
                         const std::vector<std::size_t>& assignment,
                         const std::vector<double>& distances) {
  const auto d = points.cols();
  const auto num_free = static_cast<std::size_t>(centers.rows()) - num_anchors;
  RowMatrix sums = RowMatrix::Zero(static_cast<Eigen::Index>(num_free), d);
  std::vector<std::size_t> counts(num_free, 0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const auto c = assignment[static_cast<std::size_t>(i)];
    if (c < num_anchors) continue;
    sums.row(static_cast<Eigen::Index>(c - num_anchors)) += points.row(i);
    ++counts[c - num_anchors];
  }

  bool repaired = false;
  std::vector<bool> used(static_cast<std::size_t>(points.rows()), false);
  for (std::size_t f = 0; f < num_free; ++f) {
    const auto center_row = static_cast<Eigen::Index>(num_anchors + f);
    if (counts[f] > 0) {
      centers.row(center_row) = sums.row(static_cast<Eigen::Index>(f)) / static_cast<double>(counts[f]);
      continue;
    }
    std::size_t pick = 0;
    double farthest = -1.0;
    for (std::size_t i = 0; i < distances.size(); ++i) {
      if (!used[i] && distances[i] > farthest) {
        farthest = distances[i];
        pick = i;
      }
    }
    if (farthest <= 0.0) continue;  // every sample sits on a center: nothing to repair with
    used[pick] = true;
    centers.row(center_row) = points.row(static_cast<Eigen::Index>(pick));
    repaired = true;
  }
  return repaired;
}

ClusterModel run_lloyd(const RowMatrix& points, const RowMatrix& anchors, RowMatrix free_init,
                       const ClusterOptions& options) {
  if (options.max_iterations == 0) throw std::invalid_argument("max_iterations must be >= 1");
  const auto m = static_cast<std::size_t>(anchors.rows());
  const auto k = static_cast<std::size_t>(free_init.rows());
  const auto n = static_cast<std::size_t>(points.rows());

  ClusterModel model;
  model.num_anchors = m;
  model.num_free = k;
  model.seed = options.seed;
  model.centers.resize(static_cast<Eigen::Index>(m + k), points.cols());
  if (m > 0) model.centers.topRows(static_cast<Eigen::Index>(m)) = anchors;
  if (k > 0) model.centers.bottomRows(static_cast<Eigen::Index>(k)) = free_init;

  model.assignment.assign(n, 0);
  std::vector<std::size_t> next(n, 0);
  std::vector<double> distances(n, 0.0);
  for (std::size_t t = 1; t <= options.max_iterations; ++t) {
    assign_points(points, model.centers, next, distances);
    const bool changed = t == 1 || next != model.assignment;
    model.assignment.swap(next);
    const bool repaired = k > 0 && update_free_centers(points, model.centers, m, model.assignment, distances);
    model.iterations_run = t;
    model.sse_trace.push_back(total_sse(points, model.centers, model.assignment));
    if (!changed && !repaired) break;
  }
  return model;
}

void check_anchor_shape(const FeatureSet& features, const RowMatrix& anchors) {
  if (anchors.rows() > 0 && static_cast<std::size_t>(anchors.cols()) != features.dim()) {
    throw std::invalid_argument("anchor dimension does not match feature dimension");
  }
}

}  // namespace

RowMatrix to_matrix(const FeatureSet& features) {
  RowMatrix out(static_cast<Eigen::Index>(features.size()), static_cast<Eigen::Index>(features.dim()));
  const auto values = features.values();
  for (std::size_t k = 0; k < values.size(); ++k) out.data()[k] = static_cast<double>(values[k]);
  return out;
}

FeatureSet from_matrix(const RowMatrix& values, std::vector<std::string> ids) {
  std::vector<float> flat(static_cast<std::size_t>(values.size()));
  for (Eigen::Index k = 0; k < values.size(); ++k) flat[static_cast<std::size_t>(k)] = static_cast<float>(values.data()[k]);
  return FeatureSet(std::move(ids), std::move(flat), static_cast<std::size_t>(values.cols()));
}

FeatureSet l2_normalized(const FeatureSet& features) {
  RowMatrix m = to_matrix(features);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (norm > 0.0) m.row(i) /= norm;
  }
  return from_matrix(m, features.ids());
}

std::size_t nearest_center(std::span<const double> point, const RowMatrix& centers) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const double d = squared_distance(point, centers, c);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(c);
    }
  }
  return best;
}

std::vector<std::size_t> initial_free_centers(const RowMatrix& points, const RowMatrix& anchors,
                                              std::size_t k, KMeansInit init, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k > n) throw std::invalid_argument("more free centers than samples");
  std::mt19937_64 rng(seed);

  // Squared distance of each sample to its nearest anchor (infinity if none).
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = row_span(points, static_cast<Eigen::Index>(i));
    for (Eigen::Index a = 0; a < anchors.rows(); ++a) {
      nearest[i] = std::min(nearest[i], squared_distance(p, anchors, a));
    }
  }

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    if (nearest[i] > 0.0) candidates.push_back(i);
  }
  if (candidates.size() < k) {
    candidates.resize(n);
    std::iota(candidates.begin(), candidates.end(), std::size_t{0});
  }

  std::vector<std::size_t> picks;
  picks.reserve(k);
  if (init == KMeansInit::kRandomPick) {
    // Partial Fisher-Yates over the candidate list.
    for (std::size_t j = 0; j < k; ++j) {
      std::uniform_int_distribution<std::size_t> dist(j, candidates.size() - 1);
      std::swap(candidates[j], candidates[dist(rng)]);
      picks.push_back(candidates[j]);
    }
    return picks;
  }

  // k-means++: D^2 sampling where anchors count as already-chosen centers.
  std::vector<bool> taken(n, false);
  std::vector<double> weight(n, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double total = 0.0;
    for (const auto i : candidates) {
      weight[i] = taken[i] || std::isinf(nearest[i]) ? 0.0 : nearest[i];
      total += weight[i];
    }
    std::size_t pick = candidates.front();
    if (total > 0.0) {
      std::uniform_real_distribution<double> dist(0.0, total);
      double target = dist(rng);
      // Round-off can leave `pick` at the last positive-weight candidate.
      for (const auto i : candidates) {
        if (weight[i] <= 0.0) continue;
        target -= weight[i];
        pick = i;
        if (target < 0.0) break;
      }
    } else {
      std::vector<std::size_t> open;
      for (const auto i : candidates) {
        if (!taken[i]) open.push_back(i);
      }
      std::uniform_int_distribution<std::size_t> dist(0, open.size() - 1);
      pick = open[dist(rng)];
    }
    taken[pick] = true;
    picks.push_back(pick);
    const auto p = row_span(points, static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i) {
      double dd = 0.0;
      const auto q = row_span(points, static_cast<Eigen::Index>(i));
      for (std::size_t c = 0; c < q.size(); ++c) dd += (q[c] - p[c]) * (q[c] - p[c]);
      nearest[i] = std::min(nearest[i], dd);
    }
  }
  return picks;
}

ClusterModel kmeans(const FeatureSet& features, std::size_t k, const ClusterOptions& options) {
  if (k == 0) throw std::invalid_argument("kmeans needs K >= 1");
  return ackmeans(features, RowMatrix(0, static_cast<Eigen::Index>(features.dim())), k, options);
}

ClusterModel ackmeans(const FeatureSet& features, const RowMatrix& anchors, std::size_t k,
                      const ClusterOptions& options) {
  if (features.empty()) throw std::invalid_argument("cannot cluster an empty feature set");
  if (anchors.rows() + static_cast<Eigen::Index>(k) == 0) {
    throw std::invalid_argument("need at least one anchor or free center");
  }
  if (k > features.size()) throw std::invalid_argument("K exceeds the number of samples");
  check_anchor_shape(features, anchors);

  const RowMatrix points = to_matrix(features);
  const auto picks = initial_free_centers(points, anchors, k, options.init, options.seed);
  RowMatrix free_init(static_cast<Eigen::Index>(k), points.cols());
  for (std::size_t j = 0; j < k; ++j) free_init.row(static_cast<Eigen::Index>(j)) = points.row(static_cast<Eigen::Index>(picks[j]));
  return run_lloyd(points, anchors, std::move(free_init), options);
}

ClusterModel ackmeans_from(const FeatureSet& features, const RowMatrix& anchors,
                           const RowMatrix& initial_free, const ClusterOptions& options) {
  if (features.empty()) throw std::invalid_argument("cannot cluster an empty feature set");
  if (anchors.rows() + initial_free.rows() == 0) {
    throw std::invalid_argument("need at least one anchor or free center");
  }
  if (static_cast<std::size_t>(initial_free.rows()) > features.size()) {
    throw std::invalid_argument("K exceeds the number of samples");
  }
  check_anchor_shape(features, anchors);
  if (initial_free.rows() > 0 && static_cast<std::size_t>(initial_free.cols()) != features.dim()) {
    throw std::invalid_argument("initial center dimension does not match feature dimension");
  }
  return run_lloyd(to_matrix(features), anchors, initial_free, options);
}

double bcubed_precision(std::span<const std::size_t> clusters, std::span<const int> labels) {
  if (clusters.size() != labels.size()) throw std::invalid_argument("cluster/label length mismatch");
  if (clusters.empty()) throw std::invalid_argument("bcubed precision needs labeled samples");
  std::map<std::size_t, std::size_t> cluster_size;
  std::map<std::pair<std::size_t, int>, std::size_t> cell_size;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    ++cluster_size[clusters[i]];
    ++cell_size[{clusters[i], labels[i]}];
  }
  // Every sample in a (cluster, label) cell has precision cell / cluster.
  double sum = 0.0;
  for (const auto& [key, cell] : cell_size) {
    const auto total = cluster_size[key.first];
    sum += static_cast<double>(cell) * static_cast<double>(cell) / static_cast<double>(total);
  }
  return sum / static_cast<double>(clusters.size());
}

ClusterQuality bcubed_precision(std::span<const std::size_t> assignment,
                                std::span<const std::string> ids, const LabelSet& labels) {
  if (assignment.size() != ids.size()) throw std::invalid_argument("assignment/id length mismatch");
  std::vector<std::size_t> clusters;
  std::vector<int> truth;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (const auto label = labels.find(ids[i])) {
      clusters.push_back(assignment[i]);
      truth.push_back(*label);
    }
  }
  if (clusters.empty()) throw std::invalid_argument("bcubed precision needs labeled samples");
  return {bcubed_precision(clusters, truth)};
}

RowMatrix pca_coordinates(const FeatureSet& features, std::size_t out_dims) {
  if (out_dims == 0 || out_dims > features.dim()) {
    throw std::invalid_argument("out_dims must be in [1, d]");
  }
  RowMatrix x = to_matrix(features);
  if (x.rows() == 0) return RowMatrix(0, static_cast<Eigen::Index>(out_dims));
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(x.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("PCA eigen-decomposition failed");

  // Eigenvalues come back ascending; take the trailing columns in reverse.
  const auto d = static_cast<Eigen::Index>(features.dim());
  Eigen::MatrixXd basis(d, static_cast<Eigen::Index>(out_dims));
  for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(out_dims); ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    basis.col(c) = v;
  }
  return x * basis;
}

FeatureSet pca_project(const FeatureSet& features, std::size_t out_dims) {
  return from_matrix(pca_coordinates(features, out_dims), features.ids());
}

nlohmann::json to_json(const ClusterModel& model, std::span<const std::string> ids) {
  if (ids.size() != model.assignment.size()) throw std::invalid_argument("id count does not match assignment");
  nlohmann::json doc;
  doc["m"] = model.num_anchors;
  doc["K"] = model.num_free;
  auto centers = nlohmann::json::array();
  for (Eigen::Index r = 0; r < model.centers.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < model.centers.cols(); ++c) row.push_back(model.centers(r, c));
    centers.push_back(std::move(row));
  }
  doc["centers"] = std::move(centers);
  auto assignment = nlohmann::json::object();
  for (std::size_t i = 0; i < ids.size(); ++i) assignment[ids[i]] = model.assignment[i];
  doc["assignment"] = std::move(assignment);
  doc["seed"] = model.seed;
  doc["iterations_run"] = model.iterations_run;
  return doc;
}

}  // namespace eigenshot
