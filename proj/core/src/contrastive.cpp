#include "eigenshot/contrastive.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace eigenshot {

namespace {

void check_batch(const ContrastiveBatch& batch) {
  if (!(batch.temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (batch.queries.rows() != batch.positives.rows() ||
      batch.queries.cols() != batch.positives.cols()) {
    throw std::invalid_argument("queries and positives must have the same shape");
  }
  if (static_cast<Eigen::Index>(batch.negatives.size()) != batch.queries.rows()) {
    throw std::invalid_argument("need one negative block per query");
  }
  for (const auto& neg : batch.negatives) {
    if (neg.rows() > 0 && neg.cols() != batch.queries.cols()) {
      throw std::invalid_argument("negative key dimension mismatch");
    }
  }
  if (batch.queries.rows() == 0) throw std::invalid_argument("empty contrastive batch");
}

constexpr std::array<char, 4> kEncoderMagic = {'E', 'I', 'G', 'E'};
constexpr std::uint32_t kEncoderVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xFF));
}
std::uint64_t get_bytes(std::istream& in, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw ParseError("truncated encoder checkpoint");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

RowMatrix matrix_from_json(const nlohmann::json& rows) {
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = r == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(rows.at(0).size());
  RowMatrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != c) throw ParseError("ragged matrix in checkpoint");
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rows[i][j].get<double>();
  }
  return m;
}

nlohmann::json matrix_to_json(const RowMatrix& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

double info_nce_loss_and_grad(const ContrastiveBatch& batch, ContrastiveGrad& grad) {
  check_batch(batch);
  const auto n = batch.queries.rows();
  const double inv_tau = 1.0 / batch.temperature;
  const double inv_n = 1.0 / static_cast<double>(n);

  grad.queries = RowMatrix::Zero(n, batch.queries.cols());
  grad.positives = RowMatrix::Zero(n, batch.queries.cols());
  grad.negatives.resize(static_cast<std::size_t>(n));

  double total = 0.0;
  std::vector<double> logits;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto q = batch.queries.row(i);
    const auto& neg = batch.negatives[static_cast<std::size_t>(i)];
    const auto k = neg.rows();

    logits.assign(static_cast<std::size_t>(k) + 1, 0.0);
    logits[0] = q.dot(batch.positives.row(i)) * inv_tau;
    double max_logit = logits[0];
    for (Eigen::Index j = 0; j < k; ++j) {
      logits[static_cast<std::size_t>(j) + 1] = q.dot(neg.row(j)) * inv_tau;
      max_logit = std::max(max_logit, logits[static_cast<std::size_t>(j) + 1]);
    }

    double others = 0.0;  // sum of exp(l - max) over every logit except the max-attaining positive
    double sum = 0.0;
    for (const double l : logits) sum += std::exp(l - max_logit);
    double loss = 0.0;
    if (logits[0] == max_logit) {
      for (std::size_t j = 1; j < logits.size(); ++j) others += std::exp(logits[j] - max_logit);
      loss = std::log1p(others);
    } else {
      loss = max_logit + std::log(sum) - logits[0];
    }
    total += loss;

    // Softmax weights: dL/dl_j = p_j - [j == 0].
    const double p0 = std::exp(logits[0] - max_logit) / sum;
    const double scale = inv_tau * inv_n;
    grad.queries.row(i) += (p0 - 1.0) * scale * batch.positives.row(i);
    grad.positives.row(i) = (p0 - 1.0) * scale * q;
    auto& gneg = grad.negatives[static_cast<std::size_t>(i)];
    gneg = RowMatrix::Zero(k, batch.queries.cols());
    for (Eigen::Index j = 0; j < k; ++j) {
      const double pj = std::exp(logits[static_cast<std::size_t>(j) + 1] - max_logit) / sum;
      grad.queries.row(i) += pj * scale * neg.row(j);
      gneg.row(j) = pj * scale * q;
    }
  }
  return total * inv_n;
}

double info_nce_loss(const ContrastiveBatch& batch) {
  ContrastiveGrad unused;
  return info_nce_loss_and_grad(batch, unused);
}

ContrastiveGrad info_nce_grad(const ContrastiveBatch& batch) {
  ContrastiveGrad grad;
  info_nce_loss_and_grad(batch, grad);
  return grad;
}

// ---------------------------------------------------------------------------

Encoder::Encoder(std::size_t input_dim, std::size_t hidden_dim, std::size_t embed_dim,
                 std::uint64_t seed) {
  if (input_dim == 0 || hidden_dim == 0 || embed_dim == 0) {
    throw std::invalid_argument("encoder dimensions must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto h = static_cast<Eigen::Index>(hidden_dim);
  const auto in = static_cast<Eigen::Index>(input_dim);
  const auto out = static_cast<Eigen::Index>(embed_dim);
  w1_.resize(h, in);
  w2_.resize(out, h);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (Eigen::Index k = 0; k < w1_.size(); ++k) w1_.data()[k] = s1 * normal(rng);
  for (Eigen::Index k = 0; k < w2_.size(); ++k) w2_.data()[k] = s2 * normal(rng);
  b1_ = Eigen::VectorXd::Zero(h);
  b2_ = Eigen::VectorXd::Zero(out);
}

Encoder::Encoder(RowMatrix w1, Eigen::VectorXd b1, RowMatrix w2, Eigen::VectorXd b2)
    : w1_(std::move(w1)), b1_(std::move(b1)), w2_(std::move(w2)), b2_(std::move(b2)) {
  if (w1_.rows() == 0 || w1_.cols() == 0 || w2_.rows() == 0 || b1_.size() != w1_.rows() ||
      w2_.cols() != w1_.rows() || b2_.size() != w2_.rows()) {
    throw std::invalid_argument("inconsistent encoder parameter shapes");
  }
  if (!w1_.allFinite() || !b1_.allFinite() || !w2_.allFinite() || !b2_.allFinite()) {
    throw std::invalid_argument("encoder parameters must be finite");
  }
}

const Encoder::Cache& Encoder::forward(const RowMatrix& inputs, Cache& cache) const {
  if (inputs.cols() != w1_.cols()) throw std::invalid_argument("encoder input dimension mismatch");
  cache.inputs = inputs;
  cache.hidden = ((inputs * w1_.transpose()).rowwise() + b1_.transpose()).array().tanh();
  cache.raw = (cache.hidden * w2_.transpose()).rowwise() + b2_.transpose();
  cache.norms = cache.raw.rowwise().norm();
  cache.out = cache.raw;
  for (Eigen::Index i = 0; i < cache.out.rows(); ++i) {
    // A zero raw output has no direction; keep the degenerate row finite.
    const double norm = std::max(cache.norms(i), std::numeric_limits<double>::min());
    cache.out.row(i) /= norm;
  }
  return cache;
}

void Encoder::backward(const Cache& cache, const RowMatrix& grad_out, Grad& grad) const {
  RowMatrix d_raw(grad_out.rows(), grad_out.cols());
  for (Eigen::Index i = 0; i < grad_out.rows(); ++i) {
    const double norm = std::max(cache.norms(i), std::numeric_limits<double>::min());
    const double along = grad_out.row(i).dot(cache.out.row(i));
    d_raw.row(i) = (grad_out.row(i) - along * cache.out.row(i)) / norm;
  }
  grad.w2 += d_raw.transpose() * cache.hidden;
  grad.b2 += d_raw.colwise().sum().transpose();
  const RowMatrix d_hidden = d_raw * w2_;
  const RowMatrix d_pre = d_hidden.array() * (1.0 - cache.hidden.array().square());
  grad.w1 += d_pre.transpose() * cache.inputs;
  grad.b1 += d_pre.colwise().sum().transpose();
}

Encoder::Grad Encoder::zero_grad() const {
  return {RowMatrix::Zero(w1_.rows(), w1_.cols()), Eigen::VectorXd::Zero(b1_.size()),
          RowMatrix::Zero(w2_.rows(), w2_.cols()), Eigen::VectorXd::Zero(b2_.size())};
}

void Encoder::apply(const Grad& grad, double learning_rate) {
  w1_ -= learning_rate * grad.w1;
  b1_ -= learning_rate * grad.b1;
  w2_ -= learning_rate * grad.w2;
  b2_ -= learning_rate * grad.b2;
}

RowMatrix Encoder::embed(const RowMatrix& inputs) const {
  Cache cache;
  return forward(inputs, cache).out;
}

FeatureSet Encoder::embed(const FeatureSet& features) const {
  if (features.dim() != input_dim()) throw std::invalid_argument("encoder input dimension mismatch");
  return from_matrix(embed(to_matrix(features)), features.ids());
}

nlohmann::json to_json(const Encoder& encoder) {
  nlohmann::json doc;
  doc["format"] = "eigenshot-encoder";
  doc["version"] = 1;
  doc["input_dim"] = encoder.input_dim();
  doc["hidden_dim"] = encoder.hidden_dim();
  doc["embed_dim"] = encoder.embed_dim();
  doc["w1"] = matrix_to_json(encoder.w1());
  doc["b1"] = std::vector<double>(encoder.b1().data(), encoder.b1().data() + encoder.b1().size());
  doc["w2"] = matrix_to_json(encoder.w2());
  doc["b2"] = std::vector<double>(encoder.b2().data(), encoder.b2().data() + encoder.b2().size());
  return doc;
}

Encoder encoder_from_json(const nlohmann::json& doc) {
  try {
    const auto b1 = doc.at("b1").get<std::vector<double>>();
    const auto b2 = doc.at("b2").get<std::vector<double>>();
    Encoder enc(matrix_from_json(doc.at("w1")),
                Eigen::Map<const Eigen::VectorXd>(b1.data(), static_cast<Eigen::Index>(b1.size())),
                matrix_from_json(doc.at("w2")),
                Eigen::Map<const Eigen::VectorXd>(b2.data(), static_cast<Eigen::Index>(b2.size())));
    if (doc.contains("input_dim") && doc["input_dim"].get<std::size_t>() != enc.input_dim()) {
      throw ParseError("encoder checkpoint input_dim does not match w1");
    }
    return enc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed encoder checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("malformed encoder checkpoint: ") + e.what());
  }
}

void save_encoder(const Encoder& encoder, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (path.extension() == ".json") {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << to_json(encoder).dump() << '\n';
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(kEncoderMagic.data(), kEncoderMagic.size());
  put_u32(out, kEncoderVersion);
  put_u32(out, static_cast<std::uint32_t>(encoder.input_dim()));
  put_u32(out, static_cast<std::uint32_t>(encoder.hidden_dim()));
  put_u32(out, static_cast<std::uint32_t>(encoder.embed_dim()));
  for (Eigen::Index k = 0; k < encoder.w1().size(); ++k) put_f64(out, encoder.w1().data()[k]);
  for (Eigen::Index k = 0; k < encoder.b1().size(); ++k) put_f64(out, encoder.b1()(k));
  for (Eigen::Index k = 0; k < encoder.w2().size(); ++k) put_f64(out, encoder.w2().data()[k]);
  for (Eigen::Index k = 0; k < encoder.b2().size(); ++k) put_f64(out, encoder.b2()(k));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Encoder load_encoder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in && magic == kEncoderMagic) {
    if (get_bytes(in, 4) != kEncoderVersion) throw ParseError("unsupported EIGE version");
    const auto d_in = static_cast<Eigen::Index>(get_bytes(in, 4));
    const auto h = static_cast<Eigen::Index>(get_bytes(in, 4));
    const auto d_z = static_cast<Eigen::Index>(get_bytes(in, 4));
    auto read = [&](double* dst, Eigen::Index count) {
      for (Eigen::Index k = 0; k < count; ++k) dst[k] = std::bit_cast<double>(get_bytes(in, 8));
    };
    RowMatrix w1(h, d_in), w2(d_z, h);
    Eigen::VectorXd b1(h), b2(d_z);
    read(w1.data(), w1.size());
    read(b1.data(), b1.size());
    read(w2.data(), w2.size());
    read(b2.data(), b2.size());
    return Encoder(std::move(w1), std::move(b1), std::move(w2), std::move(b2));
  }
  in.clear();
  in.seekg(0);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("encoder checkpoint is neither EIGE nor JSON: ") + e.what());
  }
  return encoder_from_json(doc);
}

// ---------------------------------------------------------------------------

MixedStream::MixedStream(FeatureSet source, std::vector<FeatureSet> targets, MixerConfig config)
    : source_(std::move(source)), targets_(std::move(targets)), config_(config), rng_(config.seed) {
  const double p = config_.rebalance_percentage;
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("rebalance percentage must be in (0, 1]");
  if (source_.empty()) throw std::invalid_argument("source set must be non-empty");
  for (const auto& t : targets_) {
    if (t.empty()) throw std::invalid_argument("target sets must be non-empty");
    if (t.dim() != source_.dim()) throw std::invalid_argument("target dimension differs from source");
  }
  target_probability_ = targets_.empty() ? 0.0 : p / (1.0 + p);

  const auto d = static_cast<Eigen::Index>(source_.dim());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
  double count = 0.0;
  auto accumulate = [&](const FeatureSet& fs) {
    for (std::size_t i = 0; i < fs.size(); ++i) {
      const auto row = fs.row(i);
      for (Eigen::Index j = 0; j < d; ++j) {
        const double v = row[static_cast<std::size_t>(j)];
        sum(j) += v;
        sq(j) += v * v;
      }
      count += 1.0;
    }
  };
  accumulate(source_);
  for (const auto& t : targets_) accumulate(t);
  const Eigen::VectorXd mean = sum / count;
  feature_std_ = (sq / count - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
}

StreamDraw MixedStream::next() {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (!targets_.empty() && unit(rng_) < target_probability_) {
    std::uniform_int_distribution<std::size_t> pick_set(0, targets_.size() - 1);
    const auto set = pick_set(rng_);
    std::uniform_int_distribution<std::size_t> pick_row(0, targets_[set].size() - 1);
    const auto row = pick_row(rng_);
    return {targets_[set].row(row), Origin::kTarget, set, row};
  }
  std::uniform_int_distribution<std::size_t> pick_row(0, source_.size() - 1);
  const auto row = pick_row(rng_);
  return {source_.row(row), Origin::kSource, 0, row};
}

MixedStream make_mixed_stream(FeatureSet source, std::vector<FeatureSet> targets,
                              const MixerConfig& config) {
  return MixedStream(std::move(source), std::move(targets), config);
}

// ---------------------------------------------------------------------------

TrainingDiverged::TrainingDiverged(std::size_t step, double loss)
    : std::runtime_error("training diverged at step " + std::to_string(step) + " (loss " +
                         std::to_string(loss) + ")"),
      step_(step) {}

TrainResult train_encoder(MixedStream& stream, const TrainParams& params) {
  if (params.steps == 0 || params.batch_size < 2 || params.temperature <= 0.0 ||
      params.learning_rate <= 0.0 || params.augment_sigma < 0.0) {
    throw std::invalid_argument("training hyperparameters must be positive (batch_size >= 2)");
  }
  if (params.negatives == 0 || params.negatives > params.batch_size - 1) {
    throw std::invalid_argument("negatives must be in [1, batch_size - 1]");
  }

  const auto b = static_cast<Eigen::Index>(params.batch_size);
  const auto d = static_cast<Eigen::Index>(stream.dim());
  const auto k = static_cast<Eigen::Index>(params.negatives);
  TrainResult result{Encoder(stream.dim(), params.hidden_dim, params.embed_dim, params.seed), {}};
  result.loss_trajectory.reserve(params.steps);

  std::mt19937_64 noise_rng(params.seed ^ 0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::VectorXd jitter = params.augment_sigma * stream.feature_std();

  RowMatrix clean(b, d), view_q(b, d), view_k(b, d);
  Encoder::Cache cache_q, cache_k;
  ContrastiveBatch batch;
  batch.temperature = params.temperature;
  batch.negatives.assign(params.batch_size, RowMatrix(k, static_cast<Eigen::Index>(params.embed_dim)));
  ContrastiveGrad grad;

  for (std::size_t step = 0; step < params.steps; ++step) {
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto draw = stream.next();
      for (Eigen::Index j = 0; j < d; ++j) clean(i, j) = draw.vector[static_cast<std::size_t>(j)];
    }
    for (Eigen::Index i = 0; i < b; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) view_q(i, j) = clean(i, j) + jitter(j) * normal(noise_rng);
      for (Eigen::Index j = 0; j < d; ++j) view_k(i, j) = clean(i, j) + jitter(j) * normal(noise_rng);
    }

    result.encoder.forward(view_q, cache_q);
    result.encoder.forward(view_k, cache_k);
    batch.queries = cache_q.out;
    batch.positives = cache_k.out;
    for (Eigen::Index i = 0; i < b; ++i) {
      auto& neg = batch.negatives[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < k; ++j) neg.row(j) = cache_k.out.row((i + 1 + j) % b);
    }

    const double loss = info_nce_loss_and_grad(batch, grad);
    if (!std::isfinite(loss)) throw TrainingDiverged(step, loss);
    result.loss_trajectory.push_back(loss);

    RowMatrix grad_keys = grad.positives;
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& gneg = grad.negatives[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < k; ++j) grad_keys.row((i + 1 + j) % b) += gneg.row(j);
    }
    auto param_grad = result.encoder.zero_grad();
    result.encoder.backward(cache_q, grad.queries, param_grad);
    result.encoder.backward(cache_k, grad_keys, param_grad);
    result.encoder.apply(param_grad, params.learning_rate);
  }
  return result;
}

}  // namespace eigenshot
