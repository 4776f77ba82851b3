#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eg/commands.hpp"

namespace eg::cli {

namespace {

void add_config_options(CLI::App* cmd, ConfigSource& source) {
  cmd->add_option("-c,--config", source.file, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", source.overrides, "override a config field, key=value (repeatable)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Epistemic graph layer: training, evaluation and graph export over feature vectors",
               "eglayer"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a head and write a checkpoint and loss curve");
  add_config_options(train_cmd, train.config);
  train_cmd->add_option("--features", train.features, "training feature CSV")->required();
  train_cmd->add_option("--manifest", train.manifest, "class manifest fixing label order");
  train_cmd->add_option("--embeddings", train.embeddings, "word-vector text file");
  train_cmd->add_option("--graph", train.graph, "semantic graph JSON");
  train_cmd->add_option("--checkpoint", train.checkpoint_out, "checkpoint JSON to write")->required();
  train_cmd->add_option("--loss-csv", train.loss_csv_out, "loss curve CSV to write")->required();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint under one protocol");
  add_config_options(eval_cmd, eval.config);
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint JSON")->required();
  eval_cmd->add_option("--protocol", eval.protocol, "fewshot, crossdomain, zeroshot or openset")
      ->required();
  eval_cmd->add_option("--data", eval.data, "evaluation feature CSV")->required();
  eval_cmd->add_option("--graph", eval.graph, "semantic graph JSON (zeroshot)");
  eval_cmd->add_option("--embeddings", eval.embeddings, "word-vector text file (zeroshot)");
  eval_cmd->add_option("--out", eval.results_out, "results JSON to write")->required();

  ExportArgs exp;
  std::size_t k = 0;
  auto* export_cmd = app.add_subcommand("export-graph", "write the strongest edges of a graph");
  add_config_options(export_cmd, exp.config);
  export_cmd->add_option("--source", exp.source, "global, local or enhanced");
  export_cmd->add_option("--checkpoint", exp.checkpoint, "checkpoint JSON");
  export_cmd->add_option("--graph", exp.graph, "semantic graph JSON (global source)");
  auto* k_opt = export_cmd->add_option("-k,--edges", k, "edge count (default: dataset profile)");
  export_cmd->add_option("--out", exp.json_out, "edge JSON to write")->required();
  export_cmd->add_option("--dot", exp.dot_out, "DOT file to write");

  GradcheckArgs grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full layer loss");
  add_config_options(grad_cmd, grad.config);
  grad_cmd->add_option("--seeds", grad.seeds, "number of seeds");

  GenSyntheticArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "write a synthetic dataset and its semantic graph");
  gen_cmd->add_option("--spec", gen.spec, "synthetic spec JSON")->check(CLI::ExistingFile);
  gen_cmd->add_option("--set", gen.overrides, "override a spec field, key=value (repeatable)");
  gen_cmd->add_option("--out-dir", gen.out_dir, "output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (*train_cmd) {
      cmd_train(train, out, err);
    } else if (*eval_cmd) {
      cmd_eval(eval, out, err);
    } else if (*export_cmd) {
      if (k_opt->count() > 0) exp.k = k;
      cmd_export_graph(exp, out, err);
    } else if (*grad_cmd) {
      if (!cmd_gradcheck(grad, out, err)) {
        err << "error: gradcheck: gradients disagree with finite differences\n";
        return exit_code(ErrorKind::Numeric);
      }
    } else if (*gen_cmd) {
      cmd_gen_synthetic(gen, out, err);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace eg::cli
