#pragma once

// The annotation loop: cluster the target pool around the samples labeled so
// far, pick the sample nearest each new cluster center, have it labeled,
// refit the classifier head, repeat until the 1+epsilon budget is spent.
//
// State transitions are value-in / value-out: a failed submit_labels() throws
// and leaves the caller's LoopState untouched.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "eigenshot/clustering.hpp"
#include "eigenshot/feature_store.hpp"
#include "eigenshot/fewshot.hpp"

namespace eigenshot {

class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Annotation budget for C classes: one seed label per class, then
/// epsilon * C extra labels spent K = b * C at a time over kappa_max steps.
class BudgetLedger {
 public:
  BudgetLedger() = default;
  /// Throws BudgetError when epsilon * C is not a multiple of b * C unless
  /// `allow_remainder` is set, in which case the last step takes the rest.
  BudgetLedger(int num_classes, int epsilon, int per_class_step, bool allow_remainder = false);

  int num_classes() const noexcept { return num_classes_; }
  int epsilon() const noexcept { return epsilon_; }
  int per_class_step() const noexcept { return per_class_step_; }
  bool allow_remainder() const noexcept { return allow_remainder_; }

  std::size_t step_size() const noexcept { return step_size_; }      // K = b * C
  std::size_t max_steps() const noexcept { return max_steps_; }      // kappa_max
  std::size_t extra_budget() const noexcept { return extra_budget_; }  // epsilon * C
  std::size_t cap() const noexcept { return extra_budget_ + static_cast<std::size_t>(num_classes_); }
  std::size_t spent() const noexcept { return spent_; }
  std::size_t remaining() const noexcept { return cap() - spent_; }

  /// Annotations scheduled for evolution step `kappa` (0 once kappa >= kappa_max).
  std::size_t quota(std::size_t kappa) const noexcept;

  /// Throws BudgetError if the charge would exceed the cap.
  void charge(std::size_t count);

  friend bool operator==(const BudgetLedger&, const BudgetLedger&) = default;

 private:
  int num_classes_ = 2;
  int epsilon_ = 0;
  int per_class_step_ = 1;
  bool allow_remainder_ = false;
  std::size_t step_size_ = 2;
  std::size_t max_steps_ = 0;
  std::size_t extra_budget_ = 0;
  std::size_t spent_ = 0;
};

enum class SamplingStrategy { kEigen, kRandom, kOracleBalanced };

std::string_view to_string(SamplingStrategy strategy);
std::optional<SamplingStrategy> sampling_strategy_from_string(std::string_view name);

struct StepRecord {
  std::size_t kappa = 0;  // value after the step completed
  std::vector<std::string> selected;
  double bcubed_precision = 0.0;
  std::optional<EvalReport> eval;

  friend bool operator==(const StepRecord& a, const StepRecord& b);
};

struct LoopState {
  std::size_t kappa = 0;
  BudgetLedger ledger;
  std::vector<std::string> anchor_ids;  // in annotation order
  LabelSet labels;                      // over anchor_ids
  std::vector<std::string> pending;
  std::optional<ClassifierModel> classifier;
  std::vector<StepRecord> history;
  std::uint64_t run_seed = 0;
  SamplingStrategy strategy = SamplingStrategy::kEigen;
};

struct EvalSet {
  FeatureSet features;
  LabelSet labels;
};

/// Everything the loop reads but never changes.
struct LoopContext {
  FeatureSet target;  // already embedded (encoder output or raw features)
  // Ground truth for the pool, used only for the per-step BCubed metric.
  std::optional<LabelSet> quality_labels;
  std::optional<EvalSet> eval;
  ClassifierKind head = ClassifierKind::kNearestCentroid;
  FitParams fit_params;
  ClusterOptions cluster_options;
  std::map<std::string, std::string> assets;
};

/// Seed derived per evolution step so any step can be replayed on its own.
std::uint64_t step_seed(std::uint64_t run_seed, std::size_t kappa);

/// `seeds` must hold exactly one id per class, all present in the pool.
LoopState init_loop(const LoopContext& ctx, const LabelSet& seeds, BudgetLedger ledger,
                    std::uint64_t run_seed = 0,
                    SamplingStrategy strategy = SamplingStrategy::kEigen);

std::vector<std::string> unlabeled_ids(const LoopState& state, const FeatureSet& target);

/// Runs ackmeans with the labeled samples as anchors and `count` free
/// centers, then returns, per free cluster, the nearest still-unchosen
/// unlabeled sample (ties to the lexicographically lowest id).
std::vector<std::string> select_eigen_samples(const LoopState& state, const FeatureSet& target,
                                              std::size_t count, std::uint64_t seed,
                                              const ClusterOptions& options = {});

/// `count` unlabeled ids uniformly without replacement.
std::vector<std::string> select_random(const LoopState& state, const FeatureSet& target,
                                       std::size_t count, std::uint64_t seed);

/// b unlabeled ids per class drawn uniformly inside each class (fewer when a
/// class runs dry), trimmed at random to `count`. Reads only class membership.
std::vector<std::string> select_oracle_balanced(const LoopState& state, const FeatureSet& target,
                                                const LabelSet& class_membership, int per_class,
                                                std::size_t count, std::uint64_t seed);

/// Picks the next step's ids with the state's strategy; the count is the
/// ledger quota clamped to the unlabeled pool. Empty when the loop is done.
std::vector<std::string> select_next(const LoopState& state, const LoopContext& ctx,
                                     const LabelSet* class_membership = nullptr);

/// Queues ids for annotation. Throws on overlap with labeled / pending ids,
/// unknown ids or budget overrun.
LoopState begin_step(LoopState state, std::span<const std::string> ids);

/// Consumes answers for exactly the pending queue and advances one step.
LoopState submit_labels(const LoopState& state, const LoopContext& ctx,
                        const std::map<std::string, int>& answers);

bool loop_finished(const LoopState& state, const LoopContext& ctx);

/// Label partition induced by nearest-anchor assignment, scored against the
/// pool ground truth when known, otherwise against the loop's own labels.
double anchor_bcubed(const LoopState& state, const LoopContext& ctx, const LabelSet& labels);

/// Top-1 / mean-class metrics of the current head on the eval set, or on the
/// pool's ground truth when no eval set is configured.
std::optional<EvalReport> current_eval(const LoopState& state, const LoopContext& ctx);

class Annotator {
 public:
  virtual ~Annotator() = default;
  virtual int annotate(const std::string& sample_id, const std::optional<std::string>& asset_uri) = 0;
};

class OracleAnnotator : public Annotator {
 public:
  explicit OracleAnnotator(LabelSet truth) : truth_(std::move(truth)) {}
  int annotate(const std::string& sample_id, const std::optional<std::string>&) override {
    return truth_.at(sample_id);
  }
  const LabelSet& truth() const noexcept { return truth_; }

 private:
  LabelSet truth_;
};

class AnnotatorFailure : public std::runtime_error {
 public:
  AnnotatorFailure(const std::string& what, std::filesystem::path checkpoint)
      : std::runtime_error(what), checkpoint_(std::move(checkpoint)) {}
  const std::filesystem::path& checkpoint() const noexcept { return checkpoint_; }

 private:
  std::filesystem::path checkpoint_;
};

struct RunOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  const LabelSet* class_membership = nullptr;  // required by oracle-balanced
};

/// Runs steps until the ledger or the pool is exhausted. Resumes from any
/// state, including one with a non-empty pending queue.
LoopState run_loop(const LoopContext& ctx, LoopState state, Annotator& annotator,
                   const RunOptions& options = {});

nlohmann::json to_json(const LoopState& state);
LoopState loop_state_from_json(const nlohmann::json& doc);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t kappa);
void write_checkpoint(const LoopState& state, const std::filesystem::path& path);
LoopState read_checkpoint(const std::filesystem::path& path);

}  // namespace eigenshot
