#pragma once

// Multi-seed experiment runner: scenario description, per-seed loop runs and
// the aggregated comparison report.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eigenshot/contrastive.hpp"
#include "eigenshot/eigen_loop.hpp"
#include "eigenshot/synthetic.hpp"

namespace eigenshot {

struct LedgerParams {
  int num_classes = 10;
  int epsilon = 5;
  int per_class_step = 1;
  bool allow_remainder = false;
};

/// Either a synthetic generator (data regenerated from each run seed) or
/// files on disk named by dataset manifests.
struct Scenario {
  std::string name = "unnamed";
  std::optional<BlobConfig> generator;

  std::optional<std::filesystem::path> target_manifest;  // labels = pool ground truth
  std::optional<std::filesystem::path> seed_labels;
  std::optional<std::filesystem::path> eval_manifest;
  std::optional<std::filesystem::path> encoder;

  // Generator scenarios only: pretrain an encoder per seed on the mixed
  // source/target stream before running the loop.
  std::optional<TrainParams> pretrain;
  double rebalance_percentage = 0.2;

  LedgerParams ledger;
  ClassifierKind head = ClassifierKind::kNearestCentroid;
  FitParams fit_params;
  ClusterOptions cluster_options;
  bool l2_normalize = false;

  SamplingStrategy strategy = SamplingStrategy::kEigen;
  std::vector<std::uint64_t> seeds = {0};
};

/// Parses a run manifest. Relative paths resolve against `base_dir`.
/// Throws ParseError on unknown strategies / heads / presets.
Scenario scenario_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
Scenario load_scenario(const std::filesystem::path& path);

struct PreparedRun {
  LoopContext ctx;
  LabelSet seeds;
  std::optional<LabelSet> pool_truth;
};

PreparedRun prepare_run(const Scenario& scenario, std::uint64_t seed);

struct HistoryPoint {
  std::size_t kappa = 0;
  double bcubed = 0.0;
  std::optional<double> top1;

  friend bool operator==(const HistoryPoint&, const HistoryPoint&) = default;
};

struct SeedResult {
  std::uint64_t seed = 0;
  double top1 = 0.0;
  double mean_class = 0.0;
  std::size_t spent = 0;
  std::vector<HistoryPoint> history;

  friend bool operator==(const SeedResult&, const SeedResult&) = default;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single seed
};

struct RunReport {
  std::string scenario;
  std::string strategy;
  std::vector<SeedResult> per_seed;

  MeanStd top1() const;
  MeanStd mean_class() const;
};

SeedResult summarize(const LoopState& terminal, const LoopContext& ctx, std::uint64_t seed);

/// Runs one seed from scratch (or from `resume_from`) with the oracle annotator.
LoopState run_seed(const Scenario& scenario, const PreparedRun& prepared, std::uint64_t seed,
                   const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt,
                   std::optional<LoopState> resume_from = std::nullopt);
LoopState run_seed(const Scenario& scenario, std::uint64_t seed,
                   const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt,
                   std::optional<LoopState> resume_from = std::nullopt);

RunReport run_scenario(const Scenario& scenario);

nlohmann::json to_json(const RunReport& report);
RunReport run_report_from_json(const nlohmann::json& doc);

struct ComparisonReport {
  std::string scenario;
  std::vector<RunReport> runs;
};

/// Each strategy over the same seeds 0..n_seeds-1 (offset by the scenario's
/// first seed).
ComparisonReport run_comparison(const Scenario& scenario, std::span<const SamplingStrategy> strategies,
                                std::size_t n_seeds);

nlohmann::json to_json(const ComparisonReport& report);
/// Aligned text table, one row per run.
std::string format_table(std::span<const RunReport> runs);

}  // namespace eigenshot
