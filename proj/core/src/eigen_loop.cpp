#include "eigenshot/eigen_loop.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace eigenshot {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

RowMatrix rows_of(const FeatureSet& target, std::span<const std::string> ids) {
  RowMatrix out(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(target.dim()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = target.index_of(ids[i]);
    if (!row) throw std::invalid_argument("id '" + ids[i] + "' is not in the target pool");
    const auto src = target.row(*row);
    for (std::size_t j = 0; j < src.size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = src[j];
  }
  return out;
}

}  // namespace

BudgetLedger::BudgetLedger(int num_classes, int epsilon, int per_class_step, bool allow_remainder)
    : num_classes_(num_classes),
      epsilon_(epsilon),
      per_class_step_(per_class_step),
      allow_remainder_(allow_remainder) {
  if (num_classes < 2) throw BudgetError("ledger needs C >= 2");
  if (epsilon < 0) throw BudgetError("ledger needs epsilon >= 0");
  if (per_class_step < 1) throw BudgetError("ledger needs b >= 1");
  step_size_ = static_cast<std::size_t>(per_class_step) * static_cast<std::size_t>(num_classes);
  extra_budget_ = static_cast<std::size_t>(epsilon) * static_cast<std::size_t>(num_classes);
  if (extra_budget_ % step_size_ != 0 && !allow_remainder) {
    throw BudgetError("epsilon*C = " + std::to_string(extra_budget_) +
                      " is not a multiple of K = b*C = " + std::to_string(step_size_) +
                      " (enable the remainder policy to allow a short final step)");
  }
  max_steps_ = (extra_budget_ + step_size_ - 1) / step_size_;
}

std::size_t BudgetLedger::quota(std::size_t kappa) const noexcept {
  if (kappa >= max_steps_) return 0;
  return std::min(step_size_, extra_budget_ - kappa * step_size_);
}

void BudgetLedger::charge(std::size_t count) {
  if (spent_ + count > cap()) {
    throw BudgetError("annotation budget exceeded: " + std::to_string(spent_ + count) + " > cap " +
                      std::to_string(cap()));
  }
  spent_ += count;
}

std::string_view to_string(SamplingStrategy strategy) {
  switch (strategy) {
    case SamplingStrategy::kEigen:
      return "eigen";
    case SamplingStrategy::kRandom:
      return "random";
    case SamplingStrategy::kOracleBalanced:
      return "oracle-balanced";
  }
  return "unknown";
}

std::optional<SamplingStrategy> sampling_strategy_from_string(std::string_view name) {
  if (name == "eigen") return SamplingStrategy::kEigen;
  if (name == "random") return SamplingStrategy::kRandom;
  if (name == "oracle-balanced") return SamplingStrategy::kOracleBalanced;
  return std::nullopt;
}

bool operator==(const StepRecord& a, const StepRecord& b) {
  auto same_eval = [](const std::optional<EvalReport>& x, const std::optional<EvalReport>& y) {
    if (x.has_value() != y.has_value()) return false;
    if (!x) return true;
    return x->top1_accuracy == y->top1_accuracy && x->mean_class_accuracy == y->mean_class_accuracy &&
           x->per_class_accuracy == y->per_class_accuracy;
  };
  return a.kappa == b.kappa && a.selected == b.selected && a.bcubed_precision == b.bcubed_precision &&
         same_eval(a.eval, b.eval);
}

std::uint64_t step_seed(std::uint64_t run_seed, std::size_t kappa) {
  return splitmix64(splitmix64(run_seed) ^ static_cast<std::uint64_t>(kappa));
}

LoopState init_loop(const LoopContext& ctx, const LabelSet& seeds, BudgetLedger ledger,
                    std::uint64_t run_seed, SamplingStrategy strategy) {
  const int c = ledger.num_classes();
  if (seeds.num_classes() != c) throw std::invalid_argument("seed labels and ledger disagree on C");
  std::vector<std::string> by_class(static_cast<std::size_t>(c));
  for (const auto& [id, label] : seeds.entries()) {
    auto& slot = by_class[static_cast<std::size_t>(label)];
    if (!slot.empty()) throw std::invalid_argument("class " + std::to_string(label) + " has more than one seed");
    if (!ctx.target.contains(id)) throw std::invalid_argument("seed id '" + id + "' not in target pool");
    slot = id;
  }
  for (int k = 0; k < c; ++k) {
    if (by_class[static_cast<std::size_t>(k)].empty()) {
      throw std::invalid_argument("class " + std::to_string(k) + " has no seed");
    }
  }

  LoopState state;
  state.run_seed = run_seed;
  state.strategy = strategy;
  state.ledger = ledger;
  state.ledger.charge(static_cast<std::size_t>(c));
  state.anchor_ids = std::move(by_class);
  state.labels = seeds;
  state.classifier = fit(ctx.target, state.labels, ctx.head, ctx.fit_params);
  return state;
}

std::vector<std::string> unlabeled_ids(const LoopState& state, const FeatureSet& target) {
  const std::set<std::string> pending(state.pending.begin(), state.pending.end());
  std::vector<std::string> out;
  for (const auto& id : target.ids()) {
    if (!state.labels.contains(id) && !pending.contains(id)) out.push_back(id);
  }
  return out;
}

std::vector<std::string> select_eigen_samples(const LoopState& state, const FeatureSet& target,
                                              std::size_t count, std::uint64_t seed,
                                              const ClusterOptions& options) {
  const auto pool = unlabeled_ids(state, target);
  if (count > pool.size()) {
    throw std::invalid_argument("only " + std::to_string(pool.size()) + " unlabeled samples for " +
                                std::to_string(count) + " eigen-samples");
  }
  if (count == 0) return {};

  ClusterOptions opts = options;
  opts.seed = seed;
  const RowMatrix anchors = rows_of(target, state.anchor_ids);
  const auto model = ackmeans(target, anchors, count, opts);

  const RowMatrix candidates = rows_of(target, pool);
  std::vector<bool> taken(pool.size(), false);
  std::vector<std::string> chosen;
  for (std::size_t f = 0; f < count; ++f) {
    const auto center = model.centers.row(static_cast<Eigen::Index>(model.num_anchors + f));
    std::size_t best = pool.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (taken[i]) continue;
      const double d = (candidates.row(static_cast<Eigen::Index>(i)) - center).squaredNorm();
      if (d < best_d || (d == best_d && best < pool.size() && pool[i] < pool[best])) {
        best_d = d;
        best = i;
      }
    }
    if (best == pool.size()) throw std::runtime_error("no unlabeled sample left for a free cluster");
    taken[best] = true;
    chosen.push_back(pool[best]);
  }
  return chosen;
}

std::vector<std::string> select_random(const LoopState& state, const FeatureSet& target,
                                       std::size_t count, std::uint64_t seed) {
  auto pool = unlabeled_ids(state, target);
  if (count > pool.size()) throw std::invalid_argument("not enough unlabeled samples");
  std::mt19937_64 rng(seed);
  for (std::size_t j = 0; j < count; ++j) {
    std::uniform_int_distribution<std::size_t> dist(j, pool.size() - 1);
    std::swap(pool[j], pool[dist(rng)]);
  }
  pool.resize(count);
  return pool;
}

std::vector<std::string> select_oracle_balanced(const LoopState& state, const FeatureSet& target,
                                                const LabelSet& class_membership, int per_class,
                                                std::size_t count, std::uint64_t seed) {
  const auto pool = unlabeled_ids(state, target);
  if (count > pool.size()) throw std::invalid_argument("not enough unlabeled samples");
  std::vector<std::vector<std::string>> by_class(static_cast<std::size_t>(class_membership.num_classes()));
  for (const auto& id : pool) {
    if (const auto label = class_membership.find(id)) by_class[static_cast<std::size_t>(*label)].push_back(id);
  }
  std::mt19937_64 rng(seed);
  std::vector<std::string> chosen;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto take = std::min(members.size(), static_cast<std::size_t>(per_class));
    chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  if (chosen.size() > count) {
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(count);
  }
  return chosen;
}

std::vector<std::string> select_next(const LoopState& state, const LoopContext& ctx,
                                     const LabelSet* class_membership) {
  if (!state.pending.empty()) throw std::logic_error("previous step still has pending annotations");
  const auto available = unlabeled_ids(state, ctx.target).size();
  const auto count = std::min(state.ledger.quota(state.kappa), available);
  if (count == 0) return {};
  const auto seed = step_seed(state.run_seed, state.kappa);
  switch (state.strategy) {
    case SamplingStrategy::kEigen:
      return select_eigen_samples(state, ctx.target, count, seed, ctx.cluster_options);
    case SamplingStrategy::kRandom:
      return select_random(state, ctx.target, count, seed);
    case SamplingStrategy::kOracleBalanced:
      if (class_membership == nullptr) {
        throw std::invalid_argument("oracle-balanced sampling needs class membership of the pool");
      }
      return select_oracle_balanced(state, ctx.target, *class_membership,
                                    state.ledger.per_class_step(), count, seed);
  }
  return {};
}

LoopState begin_step(LoopState state, std::span<const std::string> ids) {
  if (!state.pending.empty()) throw std::logic_error("previous step still has pending annotations");
  if (state.kappa >= state.ledger.max_steps()) throw BudgetError("all evolution steps are used up");
  std::set<std::string> seen;
  for (const auto& id : ids) {
    if (state.labels.contains(id)) throw std::invalid_argument("id '" + id + "' is already labeled");
    if (!seen.insert(id).second) throw std::invalid_argument("id '" + id + "' queued twice");
  }
  if (state.ledger.spent() + ids.size() > state.ledger.cap()) {
    throw BudgetError("queueing " + std::to_string(ids.size()) + " ids would exceed the annotation cap");
  }
  state.pending.assign(ids.begin(), ids.end());
  return state;
}

LoopState submit_labels(const LoopState& state, const LoopContext& ctx,
                        const std::map<std::string, int>& answers) {
  if (state.pending.empty()) throw std::logic_error("nothing is pending annotation");
  if (answers.size() != state.pending.size()) {
    throw std::invalid_argument("expected answers for " + std::to_string(state.pending.size()) +
                                " pending ids, got " + std::to_string(answers.size()));
  }
  LabelSet labels = state.labels;
  for (const auto& id : state.pending) {
    const auto it = answers.find(id);
    if (it == answers.end()) throw std::invalid_argument("missing answer for pending id '" + id + "'");
    if (it->second < 0 || it->second >= state.ledger.num_classes()) {
      throw std::invalid_argument("label " + std::to_string(it->second) + " out of range");
    }
    labels = labels.with(id, it->second);
  }

  LoopState next = state;
  next.ledger.charge(state.pending.size());
  next.labels = std::move(labels);
  next.anchor_ids.insert(next.anchor_ids.end(), state.pending.begin(), state.pending.end());
  next.pending.clear();
  next.classifier = fit(ctx.target, next.labels, ctx.head, ctx.fit_params);
  next.kappa = state.kappa + 1;

  StepRecord record;
  record.kappa = next.kappa;
  record.selected = state.pending;
  record.bcubed_precision = anchor_bcubed(next, ctx, ctx.quality_labels ? *ctx.quality_labels : next.labels);
  record.eval = current_eval(next, ctx);
  next.history.push_back(std::move(record));
  return next;
}

bool loop_finished(const LoopState& state, const LoopContext& ctx) {
  if (!state.pending.empty()) return false;
  return state.kappa >= state.ledger.max_steps() || unlabeled_ids(state, ctx.target).empty();
}

double anchor_bcubed(const LoopState& state, const LoopContext& ctx, const LabelSet& labels) {
  const RowMatrix anchors = rows_of(ctx.target, state.anchor_ids);
  const RowMatrix points = to_matrix(ctx.target);
  std::vector<std::size_t> assignment(ctx.target.size());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    assignment[static_cast<std::size_t>(i)] =
        nearest_center({points.data() + i * points.cols(), static_cast<std::size_t>(points.cols())}, anchors);
  }
  return bcubed_precision(assignment, ctx.target.ids(), labels).bcubed_precision;
}

std::optional<EvalReport> current_eval(const LoopState& state, const LoopContext& ctx) {
  if (!state.classifier) return std::nullopt;
  if (ctx.eval) return evaluate(*state.classifier, ctx.eval->features, ctx.eval->labels);
  if (ctx.quality_labels) return evaluate(*state.classifier, ctx.target, *ctx.quality_labels);
  return std::nullopt;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t kappa) {
  return dir / ("step-" + std::to_string(kappa) + ".json");
}

LoopState run_loop(const LoopContext& ctx, LoopState state, Annotator& annotator,
                   const RunOptions& options) {
  if (options.checkpoint_dir && state.pending.empty()) {
    write_checkpoint(state, checkpoint_path(*options.checkpoint_dir, state.kappa));
  }
  while (true) {
    if (state.pending.empty()) {
      if (loop_finished(state, ctx)) break;
      const auto ids = select_next(state, ctx, options.class_membership);
      if (ids.empty()) break;
      state = begin_step(std::move(state), ids);
    }

    std::map<std::string, int> answers;
    for (const auto& id : state.pending) {
      std::optional<std::string> asset;
      if (const auto it = ctx.assets.find(id); it != ctx.assets.end()) asset = it->second;
      try {
        answers[id] = annotator.annotate(id, asset);
      } catch (const std::exception& e) {
        std::filesystem::path saved;
        if (options.checkpoint_dir) {
          saved = *options.checkpoint_dir / ("step-" + std::to_string(state.kappa) + "-aborted.json");
          write_checkpoint(state, saved);
        }
        throw AnnotatorFailure(std::string("annotator failed on '") + id + "': " + e.what(), saved);
      }
    }
    state = submit_labels(state, ctx, answers);
    if (options.checkpoint_dir) {
      write_checkpoint(state, checkpoint_path(*options.checkpoint_dir, state.kappa));
    }
  }
  return state;
}

nlohmann::json to_json(const LoopState& state) {
  nlohmann::json doc;
  doc["kappa"] = state.kappa;
  doc["ledger"] = {{"C", state.ledger.num_classes()},
                   {"epsilon", state.ledger.epsilon()},
                   {"b", state.ledger.per_class_step()},
                   {"allow_remainder", state.ledger.allow_remainder()},
                   {"spent", state.ledger.spent()},
                   {"kappa_max", state.ledger.max_steps()},
                   {"cap", state.ledger.cap()}};
  doc["anchor_ids"] = state.anchor_ids;
  doc["labels"] = state.labels.entries();
  doc["pending"] = state.pending;
  doc["classifier"] = state.classifier ? to_json(*state.classifier) : nlohmann::json(nullptr);
  auto history = nlohmann::json::array();
  for (const auto& rec : state.history) {
    nlohmann::json r;
    r["kappa"] = rec.kappa;
    r["selected"] = rec.selected;
    r["bcubed_precision"] = rec.bcubed_precision;
    r["eval"] = rec.eval ? to_json(*rec.eval) : nlohmann::json(nullptr);
    history.push_back(std::move(r));
  }
  doc["history"] = std::move(history);
  doc["run_seed"] = state.run_seed;
  doc["strategy"] = to_string(state.strategy);
  return doc;
}

LoopState loop_state_from_json(const nlohmann::json& doc) {
  try {
    LoopState state;
    state.kappa = doc.at("kappa").get<std::size_t>();
    const auto& l = doc.at("ledger");
    state.ledger = BudgetLedger(l.at("C").get<int>(), l.at("epsilon").get<int>(), l.at("b").get<int>(),
                                l.at("allow_remainder").get<bool>());
    state.ledger.charge(l.at("spent").get<std::size_t>());
    state.anchor_ids = doc.at("anchor_ids").get<std::vector<std::string>>();
    state.labels = LabelSet(doc.at("labels").get<std::map<std::string, int>>(), state.ledger.num_classes());
    state.pending = doc.at("pending").get<std::vector<std::string>>();
    if (!doc.at("classifier").is_null()) state.classifier = classifier_from_json(doc["classifier"]);
    for (const auto& r : doc.at("history")) {
      StepRecord rec;
      rec.kappa = r.at("kappa").get<std::size_t>();
      rec.selected = r.at("selected").get<std::vector<std::string>>();
      rec.bcubed_precision = r.at("bcubed_precision").get<double>();
      if (!r.at("eval").is_null()) rec.eval = eval_report_from_json(r["eval"]);
      state.history.push_back(std::move(rec));
    }
    state.run_seed = doc.at("run_seed").get<std::uint64_t>();
    const auto strategy = sampling_strategy_from_string(doc.at("strategy").get<std::string>());
    if (!strategy) throw ParseError("unknown sampling strategy in checkpoint");
    state.strategy = *strategy;
    if (state.anchor_ids.size() != state.labels.size()) {
      throw ParseError("checkpoint anchors and labels disagree");
    }
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed loop checkpoint: ") + e.what());
  }
}

void write_checkpoint(const LoopState& state, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a temporary file, then rename over the target.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + tmp.string() + "'");
    out << to_json(state).dump(1) << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot write checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

LoopState read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  return loop_state_from_json(doc);
}

}  // namespace eigenshot
