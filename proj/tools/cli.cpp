#include "cli.hpp"

#include <climits>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "eigenshot/clustering.hpp"
#include "eigenshot/contrastive.hpp"
#include "eigenshot/harness.hpp"
#include "eigenshot/labeling_service.hpp"
#include "eigenshot/synthetic.hpp"
#include "log.hpp"

namespace eigenshot::cli {

namespace {

struct GlobalFlags {
  std::uint64_t seed = 0;
  std::string log_level = "info";
  std::string out_dir;
};

std::filesystem::path under(const GlobalFlags& g, const std::string& name) {
  const std::filesystem::path p(name);
  return p.is_absolute() ? p : std::filesystem::path(g.out_dir) / p;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return nlohmann::json::parse(in);
}

LabelSet load_labels_infer(const std::filesystem::path& path, int classes) {
  if (classes > 0) return load_labels(path, classes);
  const auto wide = load_labels(path, INT_MAX);
  int max_label = 1;
  for (const auto& [id, label] : wide.entries()) max_label = std::max(max_label, label);
  return LabelSet(wide.entries(), max_label + 1);
}

// ---------------------------------------------------------------------------

struct GenFlags {
  std::string preset;
  std::string out = "data";
  std::string format = "binary";
};

int cmd_gen(const GlobalFlags& g, const GenFlags& f) {
  const auto config = blob_preset(f.preset);
  if (!config) throw std::invalid_argument("unknown preset " + f.preset);
  const auto data = generate_blobs(*config, g.seed);
  const auto dir = under(g, f.out);
  std::filesystem::create_directories(dir);
  const std::string ext = f.format == "csv" ? ".csv" : ".eigf";

  save_features(data.source, dir / ("source" + ext));
  save_labels(data.source_labels, dir / "source_labels.csv");
  save_features(data.target, dir / ("target" + ext));
  save_labels(data.target_labels, dir / "target_labels.csv");
  save_features(data.test, dir / ("test" + ext));
  save_labels(data.test_labels, dir / "test_labels.csv");
  save_labels(pick_class_seeds(data.target, data.target_labels, g.seed), dir / "seeds.csv");

  save_manifest({"source" + ext, "source_labels.csv", DatasetRole::kSource, {}}, dir / "source.json");
  save_manifest({"target" + ext, "target_labels.csv", DatasetRole::kTarget, {}}, dir / "target.json");
  save_manifest({"test" + ext, "test_labels.csv", DatasetRole::kTarget, {}}, dir / "test.json");
  write_json(dir / "run.json", {{"scenario", f.preset},
                                {"target", "target.json"},
                                {"seed_labels", "seeds.csv"},
                                {"eval", "test.json"},
                                {"ledger", {{"C", config->target_classes}, {"epsilon", 5}, {"b", 1}}},
                                {"strategy", "eigen"},
                                {"seeds", {g.seed}}});
  log_info("generated synthetic data", {{"preset", f.preset},
                                        {"dir", dir.string()},
                                        {"classes", config->target_classes},
                                        {"target_rows", data.target.size()},
                                        {"source_rows", data.source.size()}});
  return 0;
}

// ---------------------------------------------------------------------------

struct PretrainFlags {
  std::string source;
  std::vector<std::string> targets;
  double p = 0.2;
  TrainParams params;
  std::string out_encoder = "encoder.json";
  std::string log_file = "train_log.jsonl";
};

int cmd_pretrain(const GlobalFlags& g, PretrainFlags f) {
  auto source = load_features(f.source);
  std::vector<FeatureSet> targets;
  for (const auto& t : f.targets) targets.push_back(load_features(t));
  auto stream = make_mixed_stream(std::move(source), std::move(targets), {f.p, g.seed});
  log_info("pretraining encoder", {{"mode", stream.transductive() ? "transductive" : "inductive"},
                                   {"p", f.p},
                                   {"target_probability", stream.target_probability()},
                                   {"steps", f.params.steps}});
  f.params.seed = g.seed;
  const auto result = train_encoder(stream, f.params);

  const auto log_path = under(g, f.log_file);
  if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
  std::ofstream log_out(log_path, std::ios::trunc);
  for (std::size_t i = 0; i < result.loss_trajectory.size(); ++i) {
    log_out << nlohmann::json{{"step", i}, {"loss", result.loss_trajectory[i]}}.dump() << '\n';
  }
  if (!log_out) throw std::runtime_error("cannot write training log");
  save_encoder(result.encoder, under(g, f.out_encoder));
  log_info("encoder saved", {{"path", under(g, f.out_encoder).string()},
                             {"final_loss", result.loss_trajectory.back()}});
  return 0;
}

// ---------------------------------------------------------------------------

struct ClusterFlags {
  std::string features;
  std::string anchors;
  std::size_t k = 0;
  std::string labels;
  int classes = 0;
  std::size_t t_max = 100;
  std::string init = "random-pick";
  bool l2_normalize = false;
  std::string out = "clusters.json";
};

int cmd_cluster(const GlobalFlags& g, const ClusterFlags& f) {
  auto features = load_features(f.features);
  RowMatrix anchors(0, static_cast<Eigen::Index>(features.dim()));
  if (!f.anchors.empty()) {
    auto anchor_set = load_features(f.anchors);
    if (f.l2_normalize) anchor_set = l2_normalized(anchor_set);
    anchors = to_matrix(anchor_set);
  }
  if (f.l2_normalize) features = l2_normalized(features);
  ClusterOptions options;
  options.max_iterations = f.t_max;
  options.init = f.init == "kmeanspp" ? KMeansInit::kPlusPlus : KMeansInit::kRandomPick;
  options.seed = g.seed;
  const auto model = ackmeans(features, anchors, f.k, options);
  auto doc = to_json(model, features.ids());
  if (!f.labels.empty()) {
    const auto labels = load_labels_infer(f.labels, f.classes);
    doc["bcubed_precision"] = bcubed_precision(model.assignment, features.ids(), labels).bcubed_precision;
  }
  write_json(under(g, f.out), doc);
  log_info("clustering done", {{"m", model.num_anchors},
                               {"K", model.num_free},
                               {"iterations", model.iterations_run},
                               {"out", under(g, f.out).string()}});
  return 0;
}

// ---------------------------------------------------------------------------

struct LoopFlags {
  std::string manifest;
  std::string strategy;
  std::string annotator = "oracle";
  std::string resume;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string ui_dir;
  std::string out = "report.json";
};

int run_service(const GlobalFlags& g, const LoopFlags& f, const Scenario& scenario) {
  const auto seed = scenario.seeds.front();
  const auto prepared = prepare_run(scenario, seed);
  const auto ckpt = under(g, "checkpoints") / ("seed-" + std::to_string(seed));
  std::unique_ptr<LabelingSession> session;
  if (!f.resume.empty()) {
    session = LabelingSession::restore(prepared.ctx, f.resume);
  } else {
    const BudgetLedger ledger(scenario.ledger.num_classes, scenario.ledger.epsilon,
                              scenario.ledger.per_class_step, scenario.ledger.allow_remainder);
    session = std::make_unique<LabelingSession>(
        prepared.ctx, init_loop(prepared.ctx, prepared.seeds, ledger, seed, scenario.strategy), ckpt);
  }
  std::optional<std::filesystem::path> ui;
  if (!f.ui_dir.empty()) ui = f.ui_dir;
  LabelingServer server(*session, ui);
  const int port = server.start(f.host, f.port);
  log_info("labeling service listening", {{"host", f.host}, {"port", port}, {"checkpoints", ckpt.string()}});
  session->wait_until_finished();
  server.stop();

  RunReport report;
  report.scenario = scenario.name;
  report.strategy = std::string(to_string(scenario.strategy));
  report.per_seed.push_back(summarize(session->snapshot(), prepared.ctx, seed));
  write_json(under(g, f.out), to_json(report));
  log_info("annotation budget exhausted", {{"report", under(g, f.out).string()}});
  return 0;
}

int cmd_loop(const GlobalFlags& g, const LoopFlags& f) {
  auto scenario = load_scenario(f.manifest);
  if (!f.strategy.empty()) scenario.strategy = *sampling_strategy_from_string(f.strategy);
  if (f.annotator == "service") return run_service(g, f, scenario);

  std::optional<LoopState> resumed;
  if (!f.resume.empty()) resumed = read_checkpoint(f.resume);

  RunReport report;
  report.scenario = scenario.name;
  report.strategy = std::string(to_string(scenario.strategy));
  for (const auto seed : scenario.seeds) {
    const auto ckpt = under(g, "checkpoints") / ("seed-" + std::to_string(seed));
    std::optional<LoopState> start;
    if (resumed && resumed->run_seed == seed) {
      start = resumed;
      log_info("resuming from checkpoint", {{"seed", seed}, {"kappa", resumed->kappa}});
    }
    Scenario single = scenario;
    if (start) single.strategy = start->strategy;
    const auto prepared = prepare_run(single, seed);
    const auto terminal = run_seed(single, prepared, seed, ckpt, std::move(start));
    report.per_seed.push_back(summarize(terminal, prepared.ctx, seed));
    log_info("seed finished", {{"seed", seed}, {"kappa", terminal.kappa}, {"spent", terminal.ledger.spent()}});
  }
  write_json(under(g, f.out), to_json(report));
  log_info("report written", {{"path", under(g, f.out).string()}});
  return 0;
}

// ---------------------------------------------------------------------------

struct ReportFlags {
  std::vector<std::string> runs;
  std::string format = "table";
  std::string out;
};

int cmd_report(const GlobalFlags& g, const ReportFlags& f) {
  std::vector<RunReport> runs;
  std::vector<nlohmann::json> raw;
  for (const auto& path : f.runs) {
    raw.push_back(read_json(path));
    runs.push_back(run_report_from_json(raw.back()));
  }
  std::set<std::string> scenarios;
  for (const auto& r : runs) scenarios.insert(r.scenario);
  if (scenarios.size() > 1) {
    log_warn("runs come from different scenarios", {{"scenarios", scenarios}});
  }

  const auto out = under(g, f.out.empty() ? (f.format == "json" ? "comparison.json" : "comparison.txt") : f.out);
  if (f.format == "json") {
    if (raw.size() == 1) {
      write_json(out, raw.front());
    } else {
      nlohmann::json doc;
      doc["runs"] = nlohmann::json::array();
      for (const auto& r : runs) {
        doc["runs"].push_back({{"scenario", r.scenario},
                               {"strategy", r.strategy},
                               {"n_seeds", r.per_seed.size()},
                               {"top1", {{"mean", r.top1().mean}, {"std", r.top1().std}}},
                               {"mean_class", {{"mean", r.mean_class().mean}, {"std", r.mean_class().std}}}});
      }
      doc["mismatched_scenarios"] = scenarios.size() > 1;
      write_json(out, doc);
    }
  } else {
    write_text(out, format_table(runs));
  }
  log_info("comparison written", {{"path", out.string()}, {"runs", runs.size()}});
  return 0;
}

// ---------------------------------------------------------------------------

struct ProjectFlags {
  std::string features;
  std::string out = "projection.csv";
};

int cmd_project(const GlobalFlags& g, const ProjectFlags& f) {
  const auto features = load_features(f.features);
  if (features.dim() < 2) throw std::invalid_argument("projection needs at least 2 input dimensions");
  save_features(pca_project(features, 2), under(g, f.out), FeatureFormat::kCsv);
  log_info("projection written", {{"path", under(g, f.out).string()}, {"rows", features.size()}});
  return 0;
}

CLI::Validator open_unit_interval() {
  return CLI::Validator(
      [](std::string& value) -> std::string {
        double v = 0.0;
        try {
          v = std::stod(value);
        } catch (const std::exception&) {
          return "not a number: " + value;
        }
        return v > 0.0 && v <= 1.0 ? std::string() : "value " + value + " outside (0, 1]";
      },
      "(0,1]");
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"eigenshot: fewer-label few-shot transfer toolkit", "eigenshot"};
  app.require_subcommand(1);
  app.allow_extras(false);

  GlobalFlags global;
  if (const char* env = std::getenv("EIGENSHOT_OUT_DIR")) global.out_dir = env;
  if (global.out_dir.empty()) global.out_dir = ".";
  app.add_option("--seed", global.seed, "Random seed")->capture_default_str();
  app.add_option("--log-level", global.log_level, "Log level")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}))
      ->capture_default_str();
  app.add_option("--out-dir", global.out_dir, "Directory all outputs go to (env EIGENSHOT_OUT_DIR)")
      ->capture_default_str();

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen", "Write a synthetic source/target dataset");
  gen_cmd->add_option("--preset", gen.preset, "Generator preset")
      ->required()
      ->check(CLI::IsMember({"blobs-standard", "blobs-shifted"}));
  gen_cmd->add_option("--out", gen.out, "Output directory (under --out-dir)")->capture_default_str();
  gen_cmd->add_option("--format", gen.format, "Feature file format")
      ->check(CLI::IsMember({"csv", "binary"}))
      ->capture_default_str();

  PretrainFlags pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Train the contrastive encoder on a mixed stream");
  pre_cmd->add_option("--source", pre.source, "Source feature file")->required()->check(CLI::ExistingFile);
  pre_cmd->add_option("--target", pre.targets, "Target feature file(s); omit for inductive training")
      ->check(CLI::ExistingFile);
  pre_cmd->add_option("--p", pre.p, "Target re-balancing percentage")->check(open_unit_interval())->capture_default_str();
  pre_cmd->add_option("--steps", pre.params.steps)->check(CLI::PositiveNumber)->capture_default_str();
  pre_cmd->add_option("--batch-size", pre.params.batch_size)->capture_default_str();
  pre_cmd->add_option("--negatives", pre.params.negatives)->capture_default_str();
  pre_cmd->add_option("--tau", pre.params.temperature)->check(CLI::PositiveNumber)->capture_default_str();
  pre_cmd->add_option("--lr", pre.params.learning_rate)->check(CLI::PositiveNumber)->capture_default_str();
  pre_cmd->add_option("--sigma", pre.params.augment_sigma, "Jitter std as a fraction of feature std")
      ->capture_default_str();
  pre_cmd->add_option("--hidden", pre.params.hidden_dim)->capture_default_str();
  pre_cmd->add_option("--embed-dim", pre.params.embed_dim)->capture_default_str();
  pre_cmd->add_option("--out-encoder", pre.out_encoder, ".json or binary EIGE checkpoint")->capture_default_str();
  pre_cmd->add_option("--log", pre.log_file, "Training log (JSON lines)")->capture_default_str();

  ClusterFlags clu;
  auto* clu_cmd = app.add_subcommand("cluster", "Run (anchor-constrained) KMeans");
  clu_cmd->add_option("--features", clu.features)->required()->check(CLI::ExistingFile);
  clu_cmd->add_option("--anchors", clu.anchors, "Feature file of frozen anchor centers")->check(CLI::ExistingFile);
  clu_cmd->add_option("--k", clu.k, "Number of free centers")->required();
  clu_cmd->add_option("--labels", clu.labels, "Labels CSV for BCubed precision")->check(CLI::ExistingFile);
  clu_cmd->add_option("--classes", clu.classes, "Class count for --labels (0 = infer)")->capture_default_str();
  clu_cmd->add_option("--t-max", clu.t_max)->check(CLI::PositiveNumber)->capture_default_str();
  clu_cmd->add_option("--init", clu.init)->check(CLI::IsMember({"random-pick", "kmeanspp"}))->capture_default_str();
  clu_cmd->add_flag("--l2-normalize", clu.l2_normalize, "L2-normalize features before clustering");
  clu_cmd->add_option("--out", clu.out)->capture_default_str();

  LoopFlags loop;
  auto* loop_cmd = app.add_subcommand("loop", "Run the annotation loop from a run manifest");
  loop_cmd->add_option("--manifest", loop.manifest)->required()->check(CLI::ExistingFile);
  loop_cmd->add_option("--strategy", loop.strategy)->check(CLI::IsMember({"eigen", "random", "oracle-balanced"}));
  loop_cmd->add_option("--annotator", loop.annotator)->check(CLI::IsMember({"oracle", "service"}))->capture_default_str();
  loop_cmd->add_option("--resume", loop.resume, "Checkpoint file (oracle) or checkpoint dir (service)")
      ->check(CLI::ExistingPath);
  loop_cmd->add_option("--host", loop.host)->capture_default_str();
  loop_cmd->add_option("--port", loop.port, "Service port (0 = any)")->capture_default_str();
  loop_cmd->add_option("--ui-dir", loop.ui_dir, "Static UI bundle served at /")->check(CLI::ExistingDirectory);
  loop_cmd->add_option("--out", loop.out, "Report file")->capture_default_str();

  ReportFlags rep;
  auto* rep_cmd = app.add_subcommand("report", "Aggregate run reports");
  rep_cmd->add_option("--runs", rep.runs)->required()->check(CLI::ExistingFile);
  rep_cmd->add_option("--format", rep.format)->check(CLI::IsMember({"json", "table"}))->capture_default_str();
  rep_cmd->add_option("--out", rep.out);

  ProjectFlags proj;
  auto* proj_cmd = app.add_subcommand("project", "2-D PCA projection for plotting");
  proj_cmd->add_option("--features", proj.features)->required()->check(CLI::ExistingFile);
  proj_cmd->add_option("--out", proj.out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::map<std::string, LogLevel> levels = {
      {"debug", LogLevel::kDebug}, {"info", LogLevel::kInfo}, {"warn", LogLevel::kWarn}, {"error", LogLevel::kError}};
  log_threshold() = levels.at(global.log_level);

  try {
    if (*gen_cmd) return cmd_gen(global, gen);
    if (*pre_cmd) return cmd_pretrain(global, pre);
    if (*clu_cmd) return cmd_cluster(global, clu);
    if (*loop_cmd) return cmd_loop(global, loop);
    if (*rep_cmd) return cmd_report(global, rep);
    if (*proj_cmd) return cmd_project(global, proj);
  } catch (const std::exception& e) {
    log_error(e.what());
    return 1;
  }
  return 2;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("eigenshot");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace eigenshot::cli
