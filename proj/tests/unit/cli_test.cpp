#include <cmath>
#include <fstream>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "cli.hpp"
#include "eigenshot/clustering.hpp"
#include "eigenshot/harness.hpp"
#include "test_util.hpp"

// Must follow the Eigen includes.
#include <httplib.h>

namespace eigenshot {
namespace {

using testing::TempDir;

int cli(const TempDir& dir, std::vector<std::string> args) {
  args.insert(args.begin(), {"--out-dir", dir.path().string(), "--log-level", "error"});
  return cli::run(args);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  return nlohmann::json::parse(in);
}

std::size_t count_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

// Bind an ephemeral port, release it, and hand the number to the CLI.
int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  socklen_t len = sizeof(addr);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

TEST(Cli, UsageErrorsExitTwo) {
  TempDir dir;
  EXPECT_EQ(cli(dir, {}), 2);
  EXPECT_EQ(cli(dir, {"gen", "--preset", "spirals"}), 2);
  EXPECT_EQ(cli(dir, {"gen", "--preset", "blobs-standard", "--bogus"}), 2);
  EXPECT_EQ(cli(dir, {"cluster", "--k", "3"}), 2);
  EXPECT_EQ(cli(dir, {"--help"}), 0);
}

TEST(Cli, GenIsBalancedAndReproducible) {
  TempDir dir;
  ASSERT_EQ(cli(dir, {"--seed", "4", "gen", "--preset", "blobs-standard", "--out", "a"}), 0);
  ASSERT_EQ(cli(dir, {"--seed", "4", "gen", "--preset", "blobs-standard", "--out", "b"}), 0);
  for (const char* name : {"target.eigf", "source.eigf", "test.eigf", "target_labels.csv", "seeds.csv", "run.json"}) {
    EXPECT_EQ(testing::read_file(dir / "a" / name), testing::read_file(dir / "b" / name)) << name;
  }
  const auto labels = load_labels(dir / "a/target_labels.csv", 10);
  std::map<int, int> counts;
  for (const auto& [id, label] : labels.entries()) ++counts[label];
  EXPECT_EQ(counts.size(), 10U);
  for (const auto& [label, n] : counts) EXPECT_EQ(n, counts.begin()->second);
  const auto manifest = load_manifest(dir / "a/target.json");
  EXPECT_EQ(load_features(manifest.features).size(), labels.size());
}

TEST(Cli, GenCsvFormat) {
  TempDir dir;
  ASSERT_EQ(cli(dir, {"gen", "--preset", "blobs-shifted", "--format", "csv"}), 0);
  EXPECT_EQ(load_features(dir / "data/target.csv").dim(), 32U);
}

TEST(Cli, OutDirFromEnvironment) {
  TempDir dir;
  ::setenv("EIGENSHOT_OUT_DIR", dir.path().c_str(), 1);
  const int rc = cli::run({"--log-level", "error", "gen", "--preset", "blobs-standard"});
  ::unsetenv("EIGENSHOT_OUT_DIR");
  EXPECT_EQ(rc, 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "data/run.json"));
}

TEST(Cli, PretrainModesAndLog) {
  TempDir dir;
  ASSERT_EQ(cli(dir, {"gen", "--preset", "blobs-standard"}), 0);
  const auto src = (dir / "data/source.eigf").string();
  const auto tgt = (dir / "data/target.eigf").string();
  EXPECT_EQ(cli(dir, {"pretrain", "--source", src, "--target", tgt, "--p", "0"}), 2);
  EXPECT_EQ(cli(dir, {"pretrain", "--source", src, "--target", tgt, "--p", "1.5"}), 2);
  ASSERT_EQ(cli(dir, {"pretrain", "--source", src, "--target", tgt, "--steps", "40", "--batch-size", "16",
                      "--negatives", "8", "--out-encoder", "enc.bin"}),
            0);
  EXPECT_EQ(count_lines(dir / "train_log.jsonl"), 40U);
  EXPECT_NO_THROW(load_encoder(dir / "enc.bin"));
  ASSERT_EQ(cli(dir, {"pretrain", "--source", src, "--steps", "15", "--batch-size", "8", "--negatives", "4",
                      "--log", "inductive.jsonl"}),
            0);
  EXPECT_EQ(count_lines(dir / "inductive.jsonl"), 15U);
}

TEST(Cli, ClusterWithAnchorsAndLabels) {
  TempDir dir;
  save_features(FeatureSet({"a", "b", "c", "d", "e"}, {0, 0.2F, 5, 5.2F, 9}, 1), dir / "f.csv");
  save_features(FeatureSet({"anchor"}, {0.1F}, 1), dir / "anchors.csv");
  testing::write_file(dir / "l.csv", "id,label\na,0\nb,0\nc,1\nd,1\ne,2\n");
  ASSERT_EQ(cli(dir, {"cluster", "--features", (dir / "f.csv").string(), "--anchors", (dir / "anchors.csv").string(),
                      "--k", "2", "--labels", (dir / "l.csv").string(), "--init", "kmeanspp"}),
            0);
  const auto doc = read_json(dir / "clusters.json");
  EXPECT_EQ(doc["m"], 1);
  EXPECT_EQ(doc["K"], 2);
  EXPECT_EQ(doc["centers"][0][0].get<double>(), static_cast<double>(0.1F));
  EXPECT_EQ(doc["bcubed_precision"], 1.0);
  EXPECT_EQ(doc["assignment"]["a"], 0);
}

TEST(Cli, ClusterMatchesLibraryWithoutAnchors) {
  TempDir dir;
  std::mt19937_64 rng(3);
  const auto fs = testing::random_features(60, 3, rng);
  save_features(fs, dir / "f.eigf");
  ASSERT_EQ(cli(dir, {"--seed", "9", "cluster", "--features", (dir / "f.eigf").string(), "--k", "4"}), 0);
  const auto model = kmeans(fs, 4, {100, KMeansInit::kRandomPick, 9});
  EXPECT_EQ(read_json(dir / "clusters.json"), to_json(model, fs.ids()));
}

TEST(Cli, LoopResumeAndReport) {
  TempDir dir;
  ASSERT_EQ(cli(dir, {"--seed", "2", "gen", "--preset", "blobs-standard"}), 0);
  const auto manifest = (dir / "data/run.json").string();
  ASSERT_EQ(cli(dir, {"loop", "--manifest", manifest, "--out", "eigen.json"}), 0);
  const auto eigen = read_json(dir / "eigen.json");
  EXPECT_EQ(eigen["per_seed"]["2"]["history"].size(), 5U);

  const auto step2 = dir / "checkpoints/seed-2/step-2.json";
  ASSERT_TRUE(std::filesystem::exists(step2));
  ASSERT_EQ(cli(dir, {"loop", "--manifest", manifest, "--resume", step2.string(), "--out", "resumed.json"}), 0);
  EXPECT_EQ(read_json(dir / "resumed.json"), eigen);

  ASSERT_EQ(cli(dir, {"loop", "--manifest", manifest, "--strategy", "random", "--out", "random.json"}), 0);
  ASSERT_EQ(cli(dir, {"report", "--runs", (dir / "eigen.json").string(), "--format", "json", "--out", "one.json"}), 0);
  EXPECT_EQ(read_json(dir / "one.json"), eigen);
  ASSERT_EQ(cli(dir, {"report", "--runs", (dir / "eigen.json").string(), (dir / "random.json").string()}), 0);
  const auto table = testing::read_file(dir / "comparison.txt");
  EXPECT_NE(table.find("mean+-std"), std::string::npos);
  EXPECT_NE(table.find("random"), std::string::npos);
  EXPECT_NE(table.find("eigen"), std::string::npos);
}

TEST(Cli, ReportWarnsOnMixedScenarios) {
  TempDir dir;
  RunReport a{"alpha", "eigen", {{1, 0.5, 0.5, 10, {}}}};
  RunReport b{"beta", "random", {{1, 0.4, 0.4, 10, {}}}};
  std::ofstream(dir / "a.json") << to_json(a).dump();
  std::ofstream(dir / "b.json") << to_json(b).dump();
  ::testing::internal::CaptureStderr();
  const int rc = cli::run({"--out-dir", dir.path().string(), "report", "--runs", (dir / "a.json").string(),
                           (dir / "b.json").string(), "--format", "json"});
  const auto err = ::testing::internal::GetCapturedStderr();
  EXPECT_EQ(rc, 0);
  EXPECT_NE(err.find("\"level\":\"warn\""), std::string::npos);
  EXPECT_TRUE(read_json(dir / "comparison.json")["mismatched_scenarios"].get<bool>());
}

TEST(Cli, ProjectIsRigidForPlanarInput) {
  TempDir dir;
  std::mt19937_64 rng(5);
  const auto fs = testing::random_features(25, 2, rng);
  save_features(fs, dir / "f.eigf");
  ASSERT_EQ(cli(dir, {"project", "--features", (dir / "f.eigf").string()}), 0);
  const auto out = load_features(dir / "projection.csv");
  EXPECT_EQ(out.dim(), 2U);
  EXPECT_EQ(out.ids(), fs.ids());
  const auto a = to_matrix(fs);
  const auto b = to_matrix(out);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.rows(); ++j) {
      EXPECT_NEAR((a.row(i) - a.row(j)).norm(), (b.row(i) - b.row(j)).norm(), 1e-5);
    }
  }
  save_features(FeatureSet({"a"}, {1.0F}, 1), dir / "one.eigf");
  EXPECT_EQ(cli(dir, {"project", "--features", (dir / "one.eigf").string()}), 1);
}

TEST(Cli, MissingInputIsRuntimeError) {
  TempDir dir;
  testing::write_file(dir / "bad.json", "{\"scenario\": \"x\"}");
  EXPECT_EQ(cli(dir, {"loop", "--manifest", (dir / "bad.json").string()}), 1);
}

TEST(Cli, ServiceModeBlocksUntilBudgetIsSpent) {
  TempDir dir;
  ASSERT_EQ(cli(dir, {"--seed", "3", "gen", "--preset", "blobs-standard"}), 0);
  auto doc = read_json(dir / "data/run.json");
  doc["ledger"]["epsilon"] = 1;
  std::ofstream(dir / "data/run.json") << doc.dump();
  const auto truth = load_labels(dir / "data/target_labels.csv", 10);

  const int port = free_port();
  std::atomic<int> rc{-1};
  std::thread runner([&] {
    rc = cli(dir, {"loop", "--manifest", (dir / "data/run.json").string(), "--annotator", "service", "--port",
                   std::to_string(port), "--out", "service.json"});
  });

  httplib::Client client("127.0.0.1", port);
  nlohmann::json items;
  for (int attempt = 0; attempt < 200; ++attempt) {
    if (auto res = client.Get("/api/queue")) {
      items = nlohmann::json::parse(res->body)["items"];
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
  ASSERT_EQ(items.size(), 10U);
  EXPECT_EQ(rc.load(), -1);
  for (const auto& item : items) {
    const std::string id = item["sample_id"];
    const nlohmann::json body = {{"sample_id", id}, {"label", truth.at(id)}};
    const auto res = client.Post("/api/labels", body.dump(), "application/json");
    ASSERT_TRUE(res) << httplib::to_string(res.error());
    EXPECT_EQ(res->status, 200) << res->body;
  }
  runner.join();
  EXPECT_EQ(rc.load(), 0);
  const auto report = read_json(dir / "service.json");
  EXPECT_EQ(report["per_seed"]["3"]["spent"], 20);
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints/seed-3/session.json"));
}

}  // namespace
}  // namespace eigenshot
