#include "eigenshot/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace eigenshot {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path fp(p);
  return fp.is_absolute() ? fp : base / fp;
}

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  double sum = 0.0;
  for (const double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double sq = 0.0;
    for (const double x : xs) sq += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(sq / static_cast<double>(xs.size() - 1));
  }
  return out;
}

nlohmann::json mean_std_json(const MeanStd& a, const MeanStd& b) {
  return {{"mean", {{"top1", a.mean}, {"mean_class", b.mean}}},
          {"std", {{"top1", a.std}, {"mean_class", b.std}}}};
}

}  // namespace

Scenario scenario_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  try {
    Scenario s;
    s.name = doc.value("scenario", std::string("unnamed"));
    if (doc.contains("generator") && !doc["generator"].is_null()) {
      const auto preset = doc["generator"].get<std::string>();
      s.generator = blob_preset(preset);
      if (!s.generator) throw ParseError("unknown generator preset '" + preset + "'");
    }
    auto path_field = [&](const char* key) -> std::optional<std::filesystem::path> {
      if (!doc.contains(key) || doc[key].is_null()) return std::nullopt;
      return resolve(base_dir, doc[key].get<std::string>());
    };
    s.target_manifest = path_field("target");
    s.seed_labels = path_field("seed_labels");
    s.eval_manifest = path_field("eval");
    s.encoder = path_field("encoder");
    if (!s.generator && !(s.target_manifest && s.seed_labels)) {
      throw ParseError("scenario needs either 'generator' or both 'target' and 'seed_labels'");
    }

    if (doc.contains("pretrain") && !doc["pretrain"].is_null()) {
      const auto& p = doc["pretrain"];
      TrainParams tp;
      tp.steps = p.value("steps", tp.steps);
      tp.batch_size = p.value("batch_size", tp.batch_size);
      tp.negatives = p.value("negatives", tp.negatives);
      tp.temperature = p.value("tau", tp.temperature);
      tp.learning_rate = p.value("learning_rate", tp.learning_rate);
      tp.augment_sigma = p.value("augment_sigma", tp.augment_sigma);
      tp.hidden_dim = p.value("hidden_dim", tp.hidden_dim);
      tp.embed_dim = p.value("embed_dim", tp.embed_dim);
      s.pretrain = tp;
      s.rebalance_percentage = p.value("p", s.rebalance_percentage);
    }

    const auto& l = doc.at("ledger");
    s.ledger.num_classes = l.at("C").get<int>();
    s.ledger.epsilon = l.at("epsilon").get<int>();
    s.ledger.per_class_step = l.value("b", 1);
    s.ledger.allow_remainder = l.value("allow_remainder", false);

    const auto strategy = sampling_strategy_from_string(doc.value("strategy", std::string("eigen")));
    if (!strategy) throw ParseError("unknown strategy '" + doc.value("strategy", std::string()) + "'");
    s.strategy = *strategy;
    const auto head = classifier_kind_from_string(doc.value("head", std::string("nearest-centroid")));
    if (!head) throw ParseError("unknown classifier head");
    s.head = *head;
    s.l2_normalize = doc.value("l2_normalize", false);
    s.cluster_options.max_iterations = doc.value("t_max", s.cluster_options.max_iterations);
    if (doc.value("init", std::string("random-pick")) == "kmeanspp") s.cluster_options.init = KMeansInit::kPlusPlus;

    if (doc.contains("seeds")) {
      s.seeds = doc["seeds"].is_array() ? doc["seeds"].get<std::vector<std::uint64_t>>()
                                        : std::vector<std::uint64_t>{doc["seeds"].get<std::uint64_t>()};
    }
    if (s.seeds.empty()) throw ParseError("scenario needs at least one seed");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed run manifest: ") + e.what());
  }
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open run manifest '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("run manifest is not valid JSON: ") + e.what());
  }
  return scenario_from_json(doc, path.parent_path());
}

PreparedRun prepare_run(const Scenario& scenario, std::uint64_t seed) {
  const int c = scenario.ledger.num_classes;
  PreparedRun run;
  std::optional<Encoder> encoder;
  if (scenario.encoder) encoder = load_encoder(*scenario.encoder);

  FeatureSet target;
  std::optional<FeatureSet> eval_features;
  std::optional<LabelSet> eval_labels;

  if (scenario.generator) {
    if (scenario.generator->target_classes != c) {
      throw std::invalid_argument("ledger C does not match the generator's class count");
    }
    auto data = generate_blobs(*scenario.generator, seed);
    run.seeds = pick_class_seeds(data.target, data.target_labels, seed);
    if (scenario.pretrain && !encoder) {
      auto stream = make_mixed_stream(data.source, {data.target},
                                      {scenario.rebalance_percentage, seed});
      auto params = *scenario.pretrain;
      params.seed = seed;
      encoder = train_encoder(stream, params).encoder;
    }
    target = std::move(data.target);
    run.pool_truth = std::move(data.target_labels);
    eval_features = std::move(data.test);
    eval_labels = std::move(data.test_labels);
  } else {
    const auto manifest = load_manifest(*scenario.target_manifest);
    target = load_features(manifest.features);
    if (manifest.labels) {
      run.pool_truth = load_labels(*manifest.labels, c);
      run.pool_truth->check_covered_by(target);
    }
    run.ctx.assets = manifest.assets;
    run.seeds = load_labels(*scenario.seed_labels, c);
    if (scenario.eval_manifest) {
      const auto em = load_manifest(*scenario.eval_manifest);
      if (!em.labels) throw std::invalid_argument("eval manifest needs a labels file");
      eval_features = load_features(em.features);
      eval_labels = load_labels(*em.labels, c);
    }
  }

  if (encoder) {
    target = encoder->embed(target);
    if (eval_features) eval_features = encoder->embed(*eval_features);
  }
  if (scenario.l2_normalize) {
    target = l2_normalized(target);
    if (eval_features) eval_features = l2_normalized(*eval_features);
  }

  run.ctx.target = std::move(target);
  run.ctx.quality_labels = run.pool_truth;
  if (eval_features) run.ctx.eval = EvalSet{std::move(*eval_features), std::move(*eval_labels)};
  run.ctx.head = scenario.head;
  run.ctx.fit_params = scenario.fit_params;
  run.ctx.cluster_options = scenario.cluster_options;
  return run;
}

MeanStd RunReport::top1() const {
  std::vector<double> xs;
  for (const auto& r : per_seed) xs.push_back(r.top1);
  return mean_std(xs);
}

MeanStd RunReport::mean_class() const {
  std::vector<double> xs;
  for (const auto& r : per_seed) xs.push_back(r.mean_class);
  return mean_std(xs);
}

SeedResult summarize(const LoopState& terminal, const LoopContext& ctx, std::uint64_t seed) {
  SeedResult out;
  out.seed = seed;
  out.spent = terminal.ledger.spent();
  if (const auto eval = current_eval(terminal, ctx)) {
    out.top1 = eval->top1_accuracy;
    out.mean_class = eval->mean_class_accuracy;
  }
  for (const auto& rec : terminal.history) {
    HistoryPoint p{rec.kappa, rec.bcubed_precision, std::nullopt};
    if (rec.eval) p.top1 = rec.eval->top1_accuracy;
    out.history.push_back(p);
  }
  return out;
}

LoopState run_seed(const Scenario& scenario, const PreparedRun& prepared, std::uint64_t seed,
                   const std::optional<std::filesystem::path>& checkpoint_dir,
                   std::optional<LoopState> resume_from) {
  if (!prepared.pool_truth) {
    throw std::invalid_argument("the oracle annotator needs ground-truth labels for the target pool");
  }
  LoopState state = resume_from
                        ? std::move(*resume_from)
                        : init_loop(prepared.ctx, prepared.seeds,
                                    BudgetLedger(scenario.ledger.num_classes, scenario.ledger.epsilon,
                                                 scenario.ledger.per_class_step,
                                                 scenario.ledger.allow_remainder),
                                    seed, scenario.strategy);
  OracleAnnotator oracle(*prepared.pool_truth);
  RunOptions options;
  options.checkpoint_dir = checkpoint_dir;
  options.class_membership = &*prepared.pool_truth;
  return run_loop(prepared.ctx, std::move(state), oracle, options);
}

LoopState run_seed(const Scenario& scenario, std::uint64_t seed,
                   const std::optional<std::filesystem::path>& checkpoint_dir,
                   std::optional<LoopState> resume_from) {
  return run_seed(scenario, prepare_run(scenario, seed), seed, checkpoint_dir, std::move(resume_from));
}

RunReport run_scenario(const Scenario& scenario) {
  RunReport report;
  report.scenario = scenario.name;
  report.strategy = std::string(to_string(scenario.strategy));
  for (const auto seed : scenario.seeds) {
    const auto prepared = prepare_run(scenario, seed);
    const auto terminal = run_seed(scenario, prepared, seed);
    report.per_seed.push_back(summarize(terminal, prepared.ctx, seed));
  }
  return report;
}

nlohmann::json to_json(const RunReport& report) {
  nlohmann::json doc;
  doc["scenario"] = report.scenario;
  doc["strategy"] = report.strategy;
  auto seeds = nlohmann::json::array();
  auto per_seed = nlohmann::json::object();
  for (const auto& r : report.per_seed) {
    seeds.push_back(r.seed);
    auto history = nlohmann::json::array();
    for (const auto& h : r.history) {
      history.push_back({{"kappa", h.kappa},
                         {"bcubed", h.bcubed},
                         {"top1", h.top1 ? nlohmann::json(*h.top1) : nlohmann::json(nullptr)}});
    }
    per_seed[std::to_string(r.seed)] = {
        {"top1", r.top1}, {"mean_class", r.mean_class}, {"spent", r.spent}, {"history", std::move(history)}};
  }
  doc["seeds"] = std::move(seeds);
  doc["per_seed"] = std::move(per_seed);
  doc["aggregate"] = mean_std_json(report.top1(), report.mean_class());
  return doc;
}

RunReport run_report_from_json(const nlohmann::json& doc) {
  try {
    RunReport report;
    report.scenario = doc.at("scenario").get<std::string>();
    report.strategy = doc.at("strategy").get<std::string>();
    for (const auto& seed_json : doc.at("seeds")) {
      const auto seed = seed_json.get<std::uint64_t>();
      const auto& r = doc.at("per_seed").at(std::to_string(seed));
      SeedResult res;
      res.seed = seed;
      res.top1 = r.at("top1").get<double>();
      res.mean_class = r.at("mean_class").get<double>();
      res.spent = r.value("spent", std::size_t{0});
      for (const auto& h : r.at("history")) {
        HistoryPoint p;
        p.kappa = h.at("kappa").get<std::size_t>();
        p.bcubed = h.at("bcubed").get<double>();
        if (!h.at("top1").is_null()) p.top1 = h["top1"].get<double>();
        res.history.push_back(p);
      }
      report.per_seed.push_back(std::move(res));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed run report: ") + e.what());
  }
}

ComparisonReport run_comparison(const Scenario& scenario, std::span<const SamplingStrategy> strategies,
                                std::size_t n_seeds) {
  if (strategies.empty() || n_seeds == 0) throw std::invalid_argument("comparison needs strategies and seeds");
  const std::uint64_t base = scenario.seeds.empty() ? 0 : scenario.seeds.front();
  ComparisonReport out;
  out.scenario = scenario.name;
  for (const auto strategy : strategies) {
    Scenario s = scenario;
    s.strategy = strategy;
    s.seeds.clear();
    for (std::size_t i = 0; i < n_seeds; ++i) s.seeds.push_back(base + i);
    out.runs.push_back(run_scenario(s));
  }
  return out;
}

nlohmann::json to_json(const ComparisonReport& report) {
  nlohmann::json doc;
  doc["scenario"] = report.scenario;
  auto runs = nlohmann::json::array();
  for (const auto& r : report.runs) runs.push_back(to_json(r));
  doc["runs"] = std::move(runs);
  return doc;
}

std::string format_table(std::span<const RunReport> runs) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-18s %-16s %6s  %-17s  %-17s\n", "scenario", "strategy", "seeds",
                "top1 (mean+-std)", "mean-class");
  out << line;
  for (const auto& r : runs) {
    const auto t = r.top1();
    const auto m = r.mean_class();
    std::snprintf(line, sizeof(line), "%-18s %-16s %6zu  %7.4f +- %6.4f  %7.4f +- %6.4f\n", r.scenario.c_str(),
                  r.strategy.c_str(), r.per_seed.size(), t.mean, t.std, m.mean, m.std);
    out << line;
  }
  return out.str();
}

}  // namespace eigenshot
