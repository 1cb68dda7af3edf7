// grok: command-line driver for graph generation, decomposition caching,
// filter fitting, node-classification training, and exports.
//
//   grok <verb> [--config PATH] [--out DIR] [--seed N] [--set key=value]... [--quiet]
//
// Exit status: 0 ok, 1 other failure, 2 unknown config key, 3 missing or
// unreadable input, 4 numerical failure. Failures print one line to stderr:
//   error: code=<n> kind=<kind> detail=<message>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "grok/grok.hpp"
#include "grok/selftest.hpp"

namespace fs = std::filesystem;
using namespace grok;

namespace {

const std::vector<std::string> kVerbs = {"gen-grid",  "gen-sbm",        "decompose",
                                         "fit-filter", "train-node",     "export-response",
                                         "export-orders", "selftest"};

struct Command {
  std::string verb;
  std::string config_path;
  fs::path out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool quiet = false;
};

class Runner {
 public:
  explicit Runner(Command cmd) : cmd_(std::move(cmd)) {}

  int run() {
    if (!cmd_.config_path.empty()) {
      if (!fs::exists(cmd_.config_path)) throw IoError("config file '" + cmd_.config_path + "' not found");
      load_config_file(cfg_, cmd_.config_path);
    }
    for (const auto& o : cmd_.overrides) apply_override(cfg_, o);
    if (cmd_.seed) cfg_.seed = *cmd_.seed;
    if (cmd_.verb == "fit-filter") cfg_.task = "fit_filter";
    if (cmd_.verb == "train-node") cfg_.task = "node_classify";
    cfg_.validate();

    fs::create_directories(cmd_.out_dir);
    write_manifest();

    if (cmd_.verb == "gen-grid") return gen_grid();
    if (cmd_.verb == "gen-sbm") return gen_sbm_files();
    if (cmd_.verb == "decompose") return decompose();
    if (cmd_.verb == "fit-filter") return fit_filter();
    if (cmd_.verb == "train-node") return train_node();
    if (cmd_.verb == "export-response") return export_response();
    if (cmd_.verb == "export-orders") return export_orders();
    if (cmd_.verb == "selftest") return selftest();
    throw PreconditionError("unknown verb '" + cmd_.verb + "'");
  }

 private:
  void info(const std::string& msg) const {
    if (!cmd_.quiet) std::clog << "info: " << msg << '\n';
  }

  fs::path out(const std::string& name) const { return cmd_.out_dir / name; }

  static void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw IoError(std::string(what) + " '" + path + "' not found");
  }

  void write_manifest() const {
    nlohmann::ordered_json m;
    m["verb"] = cmd_.verb;
    m["seed"] = cfg_.seed;
    m["config"] = config_to_json(cfg_);
    std::ofstream f(out("manifest.json"));
    if (!f) throw IoError("cannot write manifest in '" + cmd_.out_dir.string() + "'");
    f << m.dump(2) << '\n';
  }

  void write_json(const std::string& name, const nlohmann::ordered_json& j) const {
    std::ofstream f(out(name));
    if (!f) throw IoError("cannot write '" + out(name).string() + "'");
    f << j.dump(2) << '\n';
    info("wrote " + out(name).string());
  }

  std::ofstream open(const std::string& name) const {
    std::ofstream f(out(name));
    if (!f) throw IoError("cannot write '" + out(name).string() + "'");
    return f;
  }

  // The graph a command operates on: `graph` (+features/labels) files if
  // given, else the grid for fit_filter or the SBM for node_classify.
  Graph input_graph() const {
    if (!cfg_.graph.empty()) {
      require_file(cfg_.graph, "edge list");
      if (!cfg_.features.empty()) require_file(cfg_.features, "feature file");
      if (!cfg_.labels.empty()) require_file(cfg_.labels, "label file");
      return load_graph(cfg_.graph, 0, cfg_.features, cfg_.labels);
    }
    if (cfg_.task == "node_classify") return classification_graph(cfg_);
    return grid_graph(cfg_.grid_rows, cfg_.grid_cols);
  }

  // Uses the `cache` file when its hash matches the Laplacian; never
  // rewrites it.
  SpectralDecomposition decomposition_for(const Graph& g) const {
    const Matrix lap = normalized_laplacian(g);
    const std::string hash = content_hash(lap);
    if (!cfg_.cache.empty()) {
      require_file(cfg_.cache, "decomposition cache");
      auto cached = read_decomposition(cfg_.cache);
      if (cached.hash == hash && cached.decomposition.is_full()) {
        info("cache hit " + cfg_.cache);
        return std::move(cached.decomposition);
      }
      info("cache miss " + cfg_.cache + " (hash " + cached.hash + " != " + hash + ")");
    }
    return eig_sym(lap);
  }

  int gen_grid() {
    const Graph g = grid_graph(cfg_.grid_rows, cfg_.grid_cols);
    write_edge_list(out("graph.edges").string(), g);
    info("grid " + std::to_string(cfg_.grid_rows) + "x" + std::to_string(cfg_.grid_cols) + ": " +
         std::to_string(g.num_nodes) + " nodes, " + std::to_string(g.edges.size()) + " edges");
    return 0;
  }

  int gen_sbm_files() {
    const Graph g = gen_sbm(cfg_.sbm_blocks, cfg_.p_intra, cfg_.p_inter, cfg_.seed,
                            cfg_.feature_dim, cfg_.feature_noise);
    write_edge_list(out("graph.edges").string(), g);
    write_features(out("features.txt").string(), *g.features);
    write_labels(out("labels.txt").string(), *g.labels);
    nlohmann::ordered_json j;
    j["num_nodes"] = g.num_nodes;
    j["num_edges"] = g.edges.size();
    j["homophily"] = g.edges.empty() ? nlohmann::ordered_json(nullptr)
                                     : nlohmann::ordered_json(homophily_ratio(g));
    write_json("graph_stats.json", j);
    return 0;
  }

  int decompose() {
    const Graph g = input_graph();
    const Matrix lap = normalized_laplacian(g);
    const std::string hash = content_hash(lap);
    const std::string path = cfg_.cache.empty() ? out("spectrum.grokspec").string() : cfg_.cache;
    if (fs::exists(path)) {
      const auto cached = read_decomposition(path);
      if (cached.hash == hash) {
        std::cout << "cache hit " << path << '\n';
        return 0;
      }
    }
    const auto d = eig_sym(lap);
    write_decomposition(path, d, hash);
    std::cout << "cache written " << path << " (N=" << d.full_size << ", hash " << hash << ")\n";
    return 0;
  }

  int fit_filter() {
    const Graph g = grid_graph(cfg_.grid_rows, cfg_.grid_cols);
    const SpectralDecomposition d = decomposition_for(g);
    const auto run = run_filter_fitting(cfg_, &d);
    for (const auto& fit : run.fits) {
      const std::string name(filter_name(fit.filter));
      auto csv = open("response_" + name + ".csv");
      write_response_csv(csv, fit.trained, cfg_.grid_points);
      auto params = open("filter_" + name + ".grokfilt");
      write_filter_params(params, fit.trained);
      info(name + ": sse=" + std::to_string(fit.trained_metrics.sse) +
           " r2=" + std::to_string(fit.trained_metrics.r2.value_or(NAN)) +
           " oracle_sse=" + std::to_string(fit.oracle_metrics.sse));
    }
    write_json("metrics.json", to_json(run.report));
    return 0;
  }

  int train_node() {
    const Graph g = input_graph();
    if (!g.features || !g.labels)
      throw PreconditionError("train-node: graph needs features and labels");
    const SpectralDecomposition d = decomposition_for(g);
    const auto run = run_node_classification(cfg_, g, d);
    for (std::size_t r = 0; r < run.repeats.size(); ++r) {
      const std::string tag = "_r" + std::to_string(r);
      auto trace = open("trace" + tag + ".jsonl");
      write_trace_jsonl(trace, run.repeats[r].trace);
      auto ckpt = open("model" + tag + ".ckpt");
      ckpt.precision(17);
      write_checkpoint(ckpt, run.repeats[r].model);
      info("repeat " + std::to_string(r) + ": test accuracy " +
           std::to_string(run.report.per_repeat[r]) + " after " +
           std::to_string(run.repeats[r].trace.size()) + " epochs");
    }
    write_json("metrics.json", to_json(run.report));
    return 0;
  }

  GrokFormerModel load_model() const {
    if (cfg_.checkpoint.empty()) throw PreconditionError("set checkpoint=<path> to a model file");
    require_file(cfg_.checkpoint, "checkpoint");
    std::ifstream in(cfg_.checkpoint);
    return read_checkpoint(in);
  }

  int export_response() {
    const auto model = load_model();
    auto csv = open("response_layer" + std::to_string(cfg_.layer_index) + ".csv");
    export_learned_response(csv, model, cfg_.layer_index, cfg_.grid_points);
    return 0;
  }

  int export_orders() {
    const auto model = load_model();
    auto csv = open("order_weights.csv");
    export_order_weights(csv, model);
    return 0;
  }

  int selftest() {
    bool ok = true;
    for (const auto& r : run_selftest()) {
      std::cout << (r.passed ? "PASS " : "FAIL ") << r.name;
      if (!r.passed) std::cout << ": " << r.detail;
      std::cout << '\n';
      ok = ok && r.passed;
    }
    return ok ? 0 : 1;
  }

  Command cmd_;
  ExperimentConfig cfg_;
};

int fail(int code, const char* kind, const std::string& detail) {
  std::string flat = detail;
  for (char& c : flat)
    if (c == '\n') c = ' ';
  std::cerr << "error: code=" << code << " kind=" << kind << " detail=" << flat << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GrokFormer spectral filters and graph transformer"};
  Command cmd;
  std::uint64_t seed = 0;
  app.add_option("verb", cmd.verb, "Command to run")
      ->required()
      ->check(CLI::IsMember(kVerbs));
  app.add_option("--config", cmd.config_path, "key=value config file or run manifest");
  app.add_option("--out", cmd.out_dir, "Output directory");
  auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides config)");
  app.add_option("--set", cmd.overrides, "Config override key=value (repeatable)");
  app.add_flag("--quiet", cmd.quiet, "Suppress progress messages");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (seed_opt->count()) cmd.seed = seed;

  try {
    return Runner(std::move(cmd)).run();
  } catch (const ConfigKeyError& e) {
    return fail(2, "unknown_key", e.what());
  } catch (const IoError& e) {
    return fail(3, "io", e.what());
  } catch (const NumericalError& e) {
    return fail(4, "numerical", e.what());
  } catch (const std::exception& e) {
    return fail(1, "invalid", e.what());
  }
}
