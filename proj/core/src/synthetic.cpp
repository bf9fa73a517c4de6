#include "eigenshot/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace eigenshot {

namespace {

std::string make_id(char prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%06zu", prefix, index);
  return buf;
}

struct Sampled {
  std::vector<Eigen::VectorXd> rows;
  std::vector<int> labels;
};

void shuffle_together(Sampled& s, std::mt19937_64& rng) {
  std::vector<std::size_t> order(s.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  Sampled out;
  for (const auto i : order) {
    out.rows.push_back(s.rows[i]);
    out.labels.push_back(s.labels[i]);
  }
  s = std::move(out);
}

std::pair<FeatureSet, LabelSet> materialize(const Sampled& s, const Eigen::MatrixXd& rotation,
                                            char prefix, int num_classes) {
  std::vector<std::string> ids;
  std::vector<float> values;
  std::map<std::string, int> labels;
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    ids.push_back(make_id(prefix, i));
    const Eigen::VectorXd v = rotation * s.rows[i];
    for (Eigen::Index j = 0; j < v.size(); ++j) values.push_back(static_cast<float>(v(j)));
    labels.emplace(ids.back(), s.labels[i]);
  }
  const auto dim = static_cast<std::size_t>(rotation.rows());
  return {FeatureSet(std::move(ids), std::move(values), dim), LabelSet(std::move(labels), num_classes)};
}

}  // namespace

std::optional<BlobConfig> blob_preset(std::string_view name) {
  if (name == "blobs-shifted") return BlobConfig{};
  if (name == "blobs-standard") {
    BlobConfig c;
    c.dim = 16;
    c.source_subspace = 8;
    c.target_spread = 1.6;
    c.target_class_std = 1.0;
    c.target_nuisance_std = 1.0;
    c.target_per_class = 40;
    c.test_per_class = 40;
    return c;
  }
  return std::nullopt;
}

SyntheticData generate_blobs(const BlobConfig& c, std::uint64_t seed) {
  if (c.dim == 0 || c.source_subspace > c.dim || c.target_classes < 2 || c.source_blobs == 0) {
    throw std::invalid_argument("invalid blob generator configuration");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto dim = static_cast<Eigen::Index>(c.dim);
  const auto sub = static_cast<Eigen::Index>(c.source_subspace);

  Eigen::MatrixXd rotation = Eigen::MatrixXd::Identity(dim, dim);
  if (c.rotate) {
    Eigen::MatrixXd g(dim, dim);
    for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = normal(rng);
    rotation = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  }

  Sampled source;
  for (std::size_t b = 0; b < c.source_blobs; ++b) {
    Eigen::VectorXd center = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index j = 0; j < sub; ++j) center(j) = c.source_spread * normal(rng);
    for (std::size_t s = 0; s < c.source_per_blob; ++s) {
      Eigen::VectorXd x = center;
      for (Eigen::Index j = 0; j < dim; ++j) {
        x(j) += (j < sub ? c.source_blob_std : c.source_off_std) * normal(rng);
      }
      source.rows.push_back(std::move(x));
      source.labels.push_back(static_cast<int>(b));
    }
  }

  // Target classes differ only outside the source subspace (all dims when
  // the source spans the whole space).
  const bool has_complement = sub < dim;
  std::vector<Eigen::VectorXd> centers;
  for (int k = 0; k < c.target_classes; ++k) {
    Eigen::VectorXd center = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index j = 0; j < dim; ++j) {
      if (j < sub) {
        center(j) = c.target_shift / std::sqrt(static_cast<double>(sub));
        if (!has_complement) center(j) += c.target_spread * normal(rng);
      } else {
        center(j) = c.target_spread * normal(rng);
      }
    }
    centers.push_back(std::move(center));
  }
  auto sample_target = [&](std::size_t per_class) {
    Sampled out;
    for (int k = 0; k < c.target_classes; ++k) {
      for (std::size_t s = 0; s < per_class; ++s) {
        Eigen::VectorXd x = centers[static_cast<std::size_t>(k)];
        for (Eigen::Index j = 0; j < dim; ++j) {
          const double sd = j < sub && has_complement ? c.target_nuisance_std : c.target_class_std;
          x(j) += sd * normal(rng);
        }
        out.rows.push_back(std::move(x));
        out.labels.push_back(k);
      }
    }
    shuffle_together(out, rng);
    return out;
  };
  Sampled target = sample_target(c.target_per_class);
  Sampled test = sample_target(c.test_per_class);
  shuffle_together(source, rng);

  SyntheticData data;
  std::tie(data.source, data.source_labels) =
      materialize(source, rotation, 's', static_cast<int>(std::max<std::size_t>(c.source_blobs, 2)));
  std::tie(data.target, data.target_labels) = materialize(target, rotation, 't', c.target_classes);
  std::tie(data.test, data.test_labels) = materialize(test, rotation, 'e', c.target_classes);
  return data;
}

LabelSet pick_class_seeds(const FeatureSet& pool, const LabelSet& labels, std::uint64_t seed) {
  std::vector<std::vector<std::string>> by_class(static_cast<std::size_t>(labels.num_classes()));
  for (const auto& id : pool.ids()) {
    if (const auto label = labels.find(id)) by_class[static_cast<std::size_t>(*label)].push_back(id);
  }
  std::mt19937_64 rng(seed);
  std::map<std::string, int> seeds;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    if (by_class[k].empty()) throw std::invalid_argument("class " + std::to_string(k) + " has no samples");
    std::uniform_int_distribution<std::size_t> pick(0, by_class[k].size() - 1);
    seeds.emplace(by_class[k][pick(rng)], static_cast<int>(k));
  }
  return LabelSet(std::move(seeds), labels.num_classes());
}

}  // namespace eigenshot
