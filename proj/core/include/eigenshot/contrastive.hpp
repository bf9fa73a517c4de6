#pragma once

// InfoNCE contrastive objective, a two-layer embedding encoder and the
// re-balanced source/target sample stream it is trained on.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "eigenshot/clustering.hpp"
#include "eigenshot/feature_store.hpp"

namespace eigenshot {

/// One query per row. `negatives[i]` holds the K negative keys of query i,
/// one per row (K may be 0). All embeddings are expected to be unit-norm.
struct ContrastiveBatch {
  RowMatrix queries;
  RowMatrix positives;
  std::vector<RowMatrix> negatives;
  double temperature = 0.2;
};

struct ContrastiveGrad {
  RowMatrix queries;
  RowMatrix positives;
  std::vector<RowMatrix> negatives;
};

/// Mean over queries of -log softmax(positive logit), logits = q.k / tau.
/// Throws std::invalid_argument on tau <= 0 or shape mismatch.
double info_nce_loss(const ContrastiveBatch& batch);

/// Analytic gradient of info_nce_loss() with respect to every embedding.
ContrastiveGrad info_nce_grad(const ContrastiveBatch& batch);

/// Loss and gradient from one pass over the logits.
double info_nce_loss_and_grad(const ContrastiveBatch& batch, ContrastiveGrad& grad);

// ---------------------------------------------------------------------------

class Encoder {
 public:
  Encoder() = default;
  /// Small Gaussian init (std 1/sqrt(fan_in)), zero biases.
  Encoder(std::size_t input_dim, std::size_t hidden_dim, std::size_t embed_dim, std::uint64_t seed);
  Encoder(RowMatrix w1, Eigen::VectorXd b1, RowMatrix w2, Eigen::VectorXd b2);

  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(w1_.cols()); }
  std::size_t hidden_dim() const noexcept { return static_cast<std::size_t>(w1_.rows()); }
  std::size_t embed_dim() const noexcept { return static_cast<std::size_t>(w2_.rows()); }

  const RowMatrix& w1() const noexcept { return w1_; }
  const Eigen::VectorXd& b1() const noexcept { return b1_; }
  const RowMatrix& w2() const noexcept { return w2_; }
  const Eigen::VectorXd& b2() const noexcept { return b2_; }

  /// Unit-norm embeddings, one row per input row.
  RowMatrix embed(const RowMatrix& inputs) const;
  FeatureSet embed(const FeatureSet& features) const;

  struct Cache {
    RowMatrix inputs;
    RowMatrix hidden;  // tanh activations
    RowMatrix raw;     // pre-normalization output
    Eigen::VectorXd norms;
    RowMatrix out;     // unit-norm embeddings
  };
  struct Grad {
    RowMatrix w1;
    Eigen::VectorXd b1;
    RowMatrix w2;
    Eigen::VectorXd b2;
  };

  const Cache& forward(const RowMatrix& inputs, Cache& cache) const;
  /// Accumulates parameter gradients given dLoss/dEmbedding for a cached pass.
  void backward(const Cache& cache, const RowMatrix& grad_out, Grad& grad) const;
  Grad zero_grad() const;
  void apply(const Grad& grad, double learning_rate);

  friend bool operator==(const Encoder& a, const Encoder& b) {
    return a.w1_ == b.w1_ && a.b1_ == b.b1_ && a.w2_ == b.w2_ && a.b2_ == b.b2_;
  }

 private:
  RowMatrix w1_;
  Eigen::VectorXd b1_;
  RowMatrix w2_;
  Eigen::VectorXd b2_;
};

nlohmann::json to_json(const Encoder& encoder);
Encoder encoder_from_json(const nlohmann::json& doc);

/// ".json" writes JSON; anything else writes the EIGE binary layout.
void save_encoder(const Encoder& encoder, const std::filesystem::path& path);
Encoder load_encoder(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct MixerConfig {
  double rebalance_percentage = 0.2;  // p, in (0, 1]
  std::uint64_t seed = 0;
};

enum class Origin { kSource, kTarget };

struct StreamDraw {
  std::span<const float> vector;
  Origin origin = Origin::kSource;
  std::size_t set_index = 0;  // which target set, 0 for source
  std::size_t row = 0;
};

/// Endless seeded stream mixing source and target rows. The target pool is
/// resampled with replacement to an effective size of p * M (M = source
/// size), split evenly across target sets, so a draw is a target draw with
/// probability p / (1 + p). With no targets the stream is source-only.
class MixedStream {
 public:
  MixedStream(FeatureSet source, std::vector<FeatureSet> targets, MixerConfig config);

  StreamDraw next();

  double target_probability() const noexcept { return target_probability_; }
  bool transductive() const noexcept { return !targets_.empty(); }
  std::size_t dim() const noexcept { return source_.dim(); }
  const FeatureSet& source() const noexcept { return source_; }
  const std::vector<FeatureSet>& targets() const noexcept { return targets_; }

  /// Per-dimension standard deviation over the source and all target rows.
  const Eigen::VectorXd& feature_std() const noexcept { return feature_std_; }

 private:
  FeatureSet source_;
  std::vector<FeatureSet> targets_;
  MixerConfig config_;
  double target_probability_ = 0.0;
  std::mt19937_64 rng_;
  Eigen::VectorXd feature_std_;
};

MixedStream make_mixed_stream(FeatureSet source, std::vector<FeatureSet> targets,
                              const MixerConfig& config);

// ---------------------------------------------------------------------------

struct TrainParams {
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  std::size_t negatives = 32;
  double temperature = 0.2;
  double learning_rate = 0.5;
  double augment_sigma = 0.1;  // jitter std as a fraction of per-dimension std
  std::size_t hidden_dim = 64;
  std::size_t embed_dim = 16;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Encoder encoder;
  std::vector<double> loss_trajectory;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, double loss);
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Plain SGD on the InfoNCE loss. Each drawn sample yields two views (the
/// vector plus independent Gaussian jitter); query i's negatives are the key
/// views of the next `negatives` batch members in cyclic order.
TrainResult train_encoder(MixedStream& stream, const TrainParams& params);

}  // namespace eigenshot
