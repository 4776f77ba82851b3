#pragma once

// The five subcommands behind the `eglayer` executable, callable in-process. Each one
// stages its outputs in memory and writes them only after every stage has succeeded.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eg/config.hpp"
#include "eg/error.hpp"
#include "eg/tape.hpp"

namespace eg::cli {

namespace fs = std::filesystem;

// 0 success, 1 usage/config, 2 data/format, 3 numeric.
int exit_code(ErrorKind kind);

// Effective config: defaults, then the config file, then `key=value` overrides.
// Override values are read as JSON when they parse as JSON and as strings otherwise.
struct ConfigSource {
  std::optional<fs::path> file;
  std::vector<std::string> overrides;
};
nlohmann::ordered_json read_config_patch(const ConfigSource& source);
RunConfig resolve_config(const ConfigSource& source, RunConfig base = {});

// Files are written to temporaries and renamed into place only by commit().
class OutputSet {
 public:
  void stage(fs::path path, std::string content);
  void commit();

 private:
  std::vector<std::pair<fs::path, std::string>> files_;
};

struct TrainArgs {
  ConfigSource config;
  fs::path features;
  std::optional<fs::path> manifest;
  std::optional<fs::path> embeddings;  // word vectors; the global graph is built from them
  std::optional<fs::path> graph;       // or a prebuilt semantic graph JSON
  fs::path checkpoint_out;
  fs::path loss_csv_out;
};
void cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct EvalArgs {
  ConfigSource config;
  fs::path checkpoint;
  std::string protocol;  // fewshot | crossdomain | zeroshot | openset
  fs::path data;
  std::optional<fs::path> graph;  // zeroshot: graph covering the data's classes
  std::optional<fs::path> embeddings;
  fs::path results_out;
};
void cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

struct ExportArgs {
  ConfigSource config;
  std::string source = "global";  // global | local | enhanced
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> graph;
  std::optional<std::size_t> k;
  fs::path json_out;
  std::optional<fs::path> dot_out;
};
void cmd_export_graph(const ExportArgs& args, std::ostream& out, std::ostream& err);

// Applied to every parameter Var before the forward pass. Tests use it to splice in an
// operation with a wrong backward rule.
using ParamHook = std::function<ad::Var(ad::Tape&, ad::Var)>;

struct LayerGradcheckReport {
  std::vector<std::string> blocks;
  std::vector<std::vector<double>> per_seed;  // [seed][block] max relative error
  std::vector<double> block_max;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Full-layer check with n = 5, D = 8, d = 4, q = 3 on seeds config.seed .. config.seed + seeds - 1.
// Prototypes and queries sit within a fraction of sigma_local of a common center so every
// kernel entry is well away from 0 and 1.
LayerGradcheckReport layer_gradcheck(const RunConfig& config, std::size_t seeds = 5,
                                     double tolerance = 1e-4, const ParamHook& hook = {});

struct GradcheckArgs {
  ConfigSource config;
  std::size_t seeds = 5;
};
// Returns false on a failed check; the report is printed either way.
bool cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err,
                   const ParamHook& hook = {});

struct GenSyntheticArgs {
  std::optional<fs::path> spec;
  std::vector<std::string> overrides;
  fs::path out_dir;
};
// Writes train.csv, novel.csv, target.csv, graph.json and spec.json into out_dir.
void cmd_gen_synthetic(const GenSyntheticArgs& args, std::ostream& out, std::ostream& err);

// Parses argv-style arguments (without the program name) and runs one subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace eg::cli
