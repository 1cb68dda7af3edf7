// Runs the built `grok` binary end to end in scratch directories.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome run(const std::string& args, const fs::path& dir) {
  const fs::path so = dir / "stdout.txt", se = dir / "stderr.txt";
  const std::string cmd = std::string(GROK_CLI_PATH) + " " + args + " >" + so.string() + " 2>" +
                          se.string();
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = slurp(so);
  o.err = slurp(se);
  return o;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

std::size_t line_count(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

const char* kSmallTrain =
    " --set sbm_blocks=15,15 --set max_epochs=30 --set patience=30 --set num_repeats=2"
    " --set d_model=8 --set M=8 --quiet";

}  // namespace

TEST(Cli, GenGridWritesEdgesAndManifest) {
  const auto dir = oracle::scratch_dir("cli_gen_grid");
  const auto o = run("gen-grid --out " + dir.string() + " --set grid_rows=3 --set grid_cols=4", dir);
  ASSERT_EQ(o.code, 0) << o.err;
  const auto g = grok::load_graph((dir / "graph.edges").string());
  EXPECT_EQ(g.num_nodes, 12u);
  EXPECT_EQ(g.edges.size(), 17u);
  const auto m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["verb"], "gen-grid");
  EXPECT_EQ(m["config"]["grid_cols"], "4");
}

TEST(Cli, GenSbmWritesGraphFiles) {
  const auto dir = oracle::scratch_dir("cli_gen_sbm");
  const auto o = run("gen-sbm --out " + dir.string() + " --seed 3 --set sbm_blocks=10,10 --quiet", dir);
  ASSERT_EQ(o.code, 0) << o.err;
  const auto g = grok::load_graph((dir / "graph.edges").string(), 0, (dir / "features.txt").string(),
                                  (dir / "labels.txt").string());
  EXPECT_EQ(g.num_nodes, 20u);
  EXPECT_EQ(g.num_classes(), 2);
  EXPECT_EQ(read_json(dir / "graph_stats.json")["num_nodes"], 20);
  EXPECT_EQ(read_json(dir / "manifest.json")["seed"], 3);
}

TEST(Cli, DecomposeReportsCacheHitOnSecondRun) {
  const auto dir = oracle::scratch_dir("cli_decompose");
  const std::string args = "decompose --out " + dir.string() + " --set grid_rows=4 --set grid_cols=4";
  const auto first = run(args, dir);
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_NE(first.out.find("cache written"), std::string::npos);
  EXPECT_EQ(first.out.find("cache hit"), std::string::npos);
  const auto second = run(args, dir);
  ASSERT_EQ(second.code, 0) << second.err;
  EXPECT_NE(second.out.find("cache hit"), std::string::npos);

  const auto cached = grok::read_decomposition((dir / "spectrum.grokspec").string());
  EXPECT_EQ(cached.hash, grok::content_hash(grok::normalized_laplacian(grok::grid_graph(4, 4))));

  // A different graph misses and rewrites.
  const auto third = run("decompose --out " + dir.string() + " --set grid_rows=5 --set grid_cols=4", dir);
  ASSERT_EQ(third.code, 0) << third.err;
  EXPECT_NE(third.out.find("cache written"), std::string::npos);
}

TEST(Cli, FitFilterWritesSixPairs) {
  const auto dir = oracle::scratch_dir("cli_fit_filter");
  ASSERT_EQ(run("decompose --out " + dir.string() + " --set grid_rows=6 --set grid_cols=6", dir).code, 0);
  const auto o = run("fit-filter --out " + dir.string() +
                         " --set grid_rows=6 --set grid_cols=6 --set fit_steps=50 --set M=8"
                         " --set cache=" + (dir / "spectrum.grokspec").string(),
                     dir);
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_NE(o.err.find("cache hit"), std::string::npos);
  const auto m = read_json(dir / "metrics.json");
  ASSERT_EQ(m["filters"].size(), 6u);
  for (const auto& f : m["filters"]) {
    EXPECT_TRUE(f["sse"].is_number());
    EXPECT_TRUE(f["r2"].is_number());
    EXPECT_LE(f["oracle_sse"].get<double>(), f["sse"].get<double>() + 1e-9);
    const std::string name = f["filter"];
    EXPECT_EQ(line_count(dir / ("response_" + name + ".csv")), 513u);
    std::ifstream params(dir / ("filter_" + name + ".grokfilt"));
    EXPECT_NO_THROW(grok::read_filter_params(params));
  }
}

TEST(Cli, ManifestRerunReproducesMetrics) {
  const auto a = oracle::scratch_dir("cli_rerun_a");
  const auto b = oracle::scratch_dir("cli_rerun_b");
  const auto first = run("train-node --out " + a.string() + " --seed 5" + kSmallTrain, a);
  ASSERT_EQ(first.code, 0) << first.err;
  const auto second = run("train-node --config " + (a / "manifest.json").string() + " --out " + b.string(), b);
  ASSERT_EQ(second.code, 0) << second.err;
  auto ma = read_json(a / "metrics.json"), mb = read_json(b / "metrics.json");
  ma.erase("wall_seconds");
  mb.erase("wall_seconds");
  EXPECT_EQ(ma, mb);
  EXPECT_EQ(read_json(a / "manifest.json")["config"], read_json(b / "manifest.json")["config"]);
  EXPECT_EQ(slurp(a / "model_r1.ckpt"), slurp(b / "model_r1.ckpt"));
  EXPECT_EQ(line_count(a / "trace_r0.jsonl"), 30u);
}

TEST(Cli, ExportsFromCheckpoint) {
  const auto dir = oracle::scratch_dir("cli_exports");
  ASSERT_EQ(run("train-node --out " + dir.string() + std::string(kSmallTrain) + " --set layers=2 --set K=3", dir).code, 0);
  const std::string ckpt = " --set checkpoint=" + (dir / "model_r0.ckpt").string();
  const auto resp = run("export-response --out " + dir.string() + ckpt + " --set layer_index=1", dir);
  ASSERT_EQ(resp.code, 0) << resp.err;
  EXPECT_EQ(line_count(dir / "response_layer1.csv"), 513u);
  const auto ord = run("export-orders --out " + dir.string() + ckpt, dir);
  ASSERT_EQ(ord.code, 0) << ord.err;
  EXPECT_EQ(line_count(dir / "order_weights.csv"), 7u);

  const auto bad_layer = run("export-response --out " + dir.string() + ckpt + " --set layer_index=2", dir);
  EXPECT_EQ(bad_layer.code, 1);
  const auto missing = run("export-orders --out " + dir.string() + " --set checkpoint=/nonexistent.ckpt", dir);
  EXPECT_EQ(missing.code, 3);
}

TEST(Cli, UnknownKeyExitsTwoAndListsKeys) {
  const auto dir = oracle::scratch_dir("cli_unknown_key");
  const auto o = run("gen-grid --out " + dir.string() + " --set colour=blue", dir);
  EXPECT_EQ(o.code, 2);
  EXPECT_EQ(o.err.rfind("error: code=2 kind=unknown_key", 0), 0u) << o.err;
  EXPECT_NE(o.err.find("grid_rows"), std::string::npos);
  EXPECT_EQ(std::count(o.err.begin(), o.err.end(), '\n'), 1);
}

TEST(Cli, MissingFilesExitThree) {
  const auto dir = oracle::scratch_dir("cli_missing");
  const auto cfg = run("gen-grid --config " + (dir / "nope.cfg").string() + " --out " + dir.string(), dir);
  EXPECT_EQ(cfg.code, 3);
  EXPECT_EQ(cfg.err.rfind("error: code=3 kind=io", 0), 0u) << cfg.err;
  const auto graph = run("decompose --out " + dir.string() + " --set graph=" + (dir / "nope.edges").string(), dir);
  EXPECT_EQ(graph.code, 3);
  const auto cache = run("fit-filter --out " + dir.string() + " --set cache=" + (dir / "nope.grokspec").string(), dir);
  EXPECT_EQ(cache.code, 3);
}

TEST(Cli, NumericalFailureExitsFour) {
  const auto dir = oracle::scratch_dir("cli_numerical");
  const auto o = run("fit-filter --out " + dir.string() +
                         " --set grid_rows=3 --set grid_cols=3 --set K=1 --set M=8 --set ridge=0"
                         " --set fit_steps=1 --set filter=comb --quiet",
                     dir);
  EXPECT_EQ(o.code, 4);
  EXPECT_EQ(o.err.rfind("error: code=4 kind=numerical", 0), 0u) << o.err;
}

TEST(Cli, InvalidValueAndVerb) {
  const auto dir = oracle::scratch_dir("cli_invalid");
  EXPECT_EQ(run("gen-grid --out " + dir.string() + " --set split=0.5,0.6,0.1", dir).code, 1);
  EXPECT_NE(run("frobnicate", dir).code, 0);
}

TEST(Cli, ConfigFileAndSetPrecedence) {
  const auto dir = oracle::scratch_dir("cli_precedence");
  {
    std::ofstream f(dir / "run.cfg");
    f << "grid_rows = 2\ngrid_cols = 2\nseed = 4\n";
  }
  const auto o = run("gen-grid --config " + (dir / "run.cfg").string() + " --out " + dir.string() +
                         " --set grid_cols=5 --seed 9",
                     dir);
  ASSERT_EQ(o.code, 0) << o.err;
  const auto m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["config"]["grid_rows"], "2");
  EXPECT_EQ(m["config"]["grid_cols"], "5");
  EXPECT_EQ(m["seed"], 9);
}

TEST(Cli, SelftestPasses) {
  const auto dir = oracle::scratch_dir("cli_selftest");
  const auto o = run("selftest --out " + dir.string(), dir);
  EXPECT_EQ(o.code, 0) << o.out;
  EXPECT_EQ(o.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(std::count(o.out.begin(), o.out.end(), '\n'), 7);
}
