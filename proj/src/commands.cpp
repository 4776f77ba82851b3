#include "eg/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <system_error>

#include "eg/dataset.hpp"
#include "eg/eglayer.hpp"
#include "eg/gradcheck.hpp"
#include "eg/harness.hpp"
#include "eg/knowledge.hpp"
#include "eg/model.hpp"

namespace eg::cli {

using nlohmann::ordered_json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parameter:
    case ErrorKind::Contract:
      return 1;
    case ErrorKind::Data:
    case ErrorKind::Format:
    case ErrorKind::Dimension:
    case ErrorKind::State:
      return 2;
    case ErrorKind::Numeric:
    case ErrorKind::DegenerateVector:
    case ErrorKind::Graph:
      return 3;
  }
  return 1;
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ordered_json read_json(const fs::path& path) {
  try {
    return ordered_json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string sci(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

ordered_json apply_overrides(ordered_json patch, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ParameterError("override '" + item + "' is not of the form key=value");
    }
    const std::string key = item.substr(0, eq), raw = item.substr(eq + 1);
    ordered_json value = ordered_json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    patch[key] = value;
  }
  return patch;
}

// Runs `body`, prefixing any library error with the stage name.
template <class F>
auto stage(const char* name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const Error& e) {
    const std::string msg = std::string(name) + ": " + e.what();
    switch (e.kind()) {
      case ErrorKind::Dimension: throw DimensionError(msg);
      case ErrorKind::Numeric: throw NumericError(msg);
      case ErrorKind::DegenerateVector: throw DegenerateVectorError(msg);
      case ErrorKind::Contract: throw ContractError(msg);
      case ErrorKind::Parameter: throw ParameterError(msg);
      case ErrorKind::Data: throw DataError(msg);
      case ErrorKind::Format: throw FormatError(msg);
      case ErrorKind::State: throw StateError(msg);
      case ErrorKind::Graph: throw GraphError(msg);
    }
    throw;
  }
}

knowledge::GlobalGraph load_graph(const std::optional<fs::path>& graph,
                                  const std::optional<fs::path>& embeddings,
                                  const std::vector<std::string>& names, double sigma_global) {
  if (graph && embeddings) throw ParameterError("give either a graph or word embeddings, not both");
  if (graph) return knowledge::graph_from_json(read_json(*graph)).subgraph(names);
  if (embeddings) {
    auto emb = knowledge::load_embeddings(*embeddings, names);
    return knowledge::build_global_graph(names, std::move(emb.Z), sigma_global);
  }
  throw ParameterError("a semantic graph or word embeddings file is required");
}

}  // namespace

ordered_json read_config_patch(const ConfigSource& source) {
  ordered_json patch = ordered_json::object();
  if (source.file) {
    patch = read_json(*source.file);
    if (!patch.is_object()) throw ParameterError("config file must hold a JSON object");
  }
  return apply_overrides(std::move(patch), source.overrides);
}

RunConfig resolve_config(const ConfigSource& source, RunConfig base) {
  RunConfig config = config_from_json(read_config_patch(source), base);
  config.validate();
  return config;
}

void OutputSet::stage(fs::path path, std::string content) {
  files_.emplace_back(std::move(path), std::move(content));
}

void OutputSet::commit() {
  std::vector<fs::path> temps;
  auto cleanup = [&]() {
    std::error_code ec;
    for (const auto& t : temps) fs::remove(t, ec);
  };
  for (const auto& [path, content] : files_) {
    fs::path tmp = path;
    tmp += ".partial";
    temps.push_back(tmp);
    if (path.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f << content;
    f.close();
    if (!f) {
      cleanup();
      throw DataError("cannot write '" + path.string() + "'");
    }
  }
  for (std::size_t i = 0; i < files_.size(); ++i) {
    std::error_code ec;
    fs::rename(temps[i], files_[i].first, ec);
    if (ec) {
      cleanup();
      throw DataError("cannot move output into place at '" + files_[i].first.string() + "'");
    }
  }
  files_.clear();
}

void cmd_train(const TrainArgs& args, std::ostream& out, std::ostream&) {
  const RunConfig config = stage("config", [&] { return resolve_config(args.config); });
  const auto split = stage("features", [&] {
    if (args.manifest) {
      const auto names = harness::load_manifest(*args.manifest);
      return harness::load_features(args.features, &names, "source");
    }
    return harness::load_features(args.features, nullptr, "source");
  });
  std::optional<knowledge::GlobalGraph> graph;
  if (config.head != HeadKind::Linear || args.graph || args.embeddings) {
    graph = stage("graph", [&] {
      return load_graph(args.graph, args.embeddings, split.class_names, config.sigma_global);
    });
  }
  Model model = stage("init", [&] {
    return Model::create(config, split.class_names, split.feature_dim(),
                         graph ? &*graph : nullptr);
  });

  std::string csv = "step,L,L_sup,L_a,L_reg\n";
  stage("train", [&] {
    harness::train_model(model, split, [&](const harness::TrainRecord& r) {
      csv += std::to_string(r.step) + "," + fmt(r.losses.total) + "," + fmt(r.losses.sup) + "," +
             fmt(r.losses.align) + "," + fmt(r.losses.reg) + "\n";
    });
  });

  OutputSet outputs;
  outputs.stage(args.checkpoint_out, dump(model.to_checkpoint()));
  outputs.stage(args.loss_csv_out, csv);
  stage("write", [&] { outputs.commit(); });
  out << "trained " << to_string(config.head) << " for " << config.steps << " steps on "
      << split.size() << " samples\n";
}

void cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  const ordered_json ckpt = stage("checkpoint", [&] { return read_json(args.checkpoint); });
  Model model = stage("checkpoint", [&] { return Model::from_checkpoint(ckpt); });
  const ordered_json patch = stage("config", [&] { return read_config_patch(args.config); });
  RunConfig config = stage("config", [&] {
    RunConfig c = config_from_json(patch, model.config());
    c.validate();
    return c;
  });

  ordered_json results;
  results["protocol"] = args.protocol;
  double accuracy = 0.0, ci = 0.0;
  std::size_t episodes = 0;

  if (args.protocol == "fewshot") {
    const auto split = stage("data", [&] { return harness::load_features(args.data, nullptr, "novel"); });
    const auto r = stage("fewshot", [&] {
      return harness::prototype_eval(model, split, harness::EpisodeSpec::from_config(config));
    });
    accuracy = r.accuracy;
    ci = r.ci95;
    episodes = r.episodes;
  } else {
    // Single-pass protocols: the interval is the normal approximation over queries.
    std::size_t queries = 0;
    if (args.protocol == "zeroshot") {
      if (patch.contains("k_shot")) {
        err << "warning: k_shot is ignored by the zeroshot protocol; using 0\n";
      }
      config.k_shot = 0;
      const auto split = stage("data", [&] { return harness::load_features(args.data, nullptr, "novel"); });
      const auto graph = stage("graph", [&] {
        return load_graph(args.graph, args.embeddings, split.class_names, config.sigma_global);
      });
      accuracy = stage("zeroshot", [&] { return harness::zero_shot_eval(model, graph, split); });
      queries = split.size();
    } else if (args.protocol == "crossdomain") {
      const auto split = stage("data", [&] { return harness::load_features(args.data, nullptr, "target"); });
      accuracy = stage("crossdomain", [&] { return harness::cross_domain_eval(model, split); });
      queries = split.size();
    } else if (args.protocol == "openset") {
      const auto split = stage("data", [&] { return harness::load_features(args.data, nullptr, "target"); });
      accuracy = stage("openset", [&] {
        return harness::open_set_eval(model, split, config.open_set_threshold);
      });
      queries = split.size();
    } else {
      throw ParameterError("unknown protocol '" + args.protocol +
                           "' (expected fewshot, crossdomain, zeroshot or openset)");
    }
    if (queries > 0) ci = 1.96 * std::sqrt(accuracy * (1.0 - accuracy) / static_cast<double>(queries));
    results["queries"] = queries;
  }
  results["accuracy"] = accuracy;
  results["ci95"] = ci;
  results["episodes"] = episodes;
  results["config"] = config_to_json(config);

  OutputSet outputs;
  outputs.stage(args.results_out, dump(results));
  stage("write", [&] { outputs.commit(); });
  out << args.protocol << " accuracy " << fmt(accuracy) << " +- " << fmt(ci) << "\n";
}

void cmd_export_graph(const ExportArgs& args, std::ostream& out, std::ostream&) {
  std::optional<Model> model;
  RunConfig config;
  if (args.checkpoint) {
    model.emplace(stage("checkpoint", [&] { return Model::from_checkpoint(read_json(*args.checkpoint)); }));
    config = stage("config", [&] { return resolve_config(args.config, model->config()); });
  } else {
    config = stage("config", [&] { return resolve_config(args.config); });
  }
  const std::size_t k = args.k ? *args.k : config.effective_export_k();

  std::vector<std::string> names;
  Matrix A;
  if (args.source == "global") {
    if (args.graph) {
      const auto g = stage("graph", [&] { return knowledge::graph_from_json(read_json(*args.graph)); });
      names = g.class_names;
      A = g.A;
    } else if (model && model->uses_semantic_space()) {
      names = model->class_names();
      A = model->global_adjacency();
    } else {
      throw ParameterError("global export needs a semantic graph or an eglayer/lplayer checkpoint");
    }
  } else if (args.source == "local" || args.source == "enhanced") {
    if (!model) throw ParameterError(args.source + " export needs a checkpoint");
    names = model->class_names();
    A = stage("graph", [&] {
      if (args.source == "local") return model->bank().local_adjacency();
      const Matrix S = model->aggregated_prototypes();
      return gaussian_kernel(S, S, model->config().sigma_local);
    });
  } else {
    throw ParameterError("unknown graph source '" + args.source +
                         "' (expected global, local or enhanced)");
  }

  const auto edges = stage("export", [&] { return knowledge::top_k_edges(A, names, k); });
  OutputSet outputs;
  outputs.stage(args.json_out, knowledge::edges_to_json(names, edges));
  if (args.dot_out) outputs.stage(*args.dot_out, knowledge::edges_to_dot(names, edges));
  stage("write", [&] { outputs.commit(); });
  out << "exported " << edges.size() << " " << args.source << " edges over " << names.size()
      << " classes\n";
}

LayerGradcheckReport layer_gradcheck(const RunConfig& config, std::size_t seeds, double tolerance,
                                     const ParamHook& hook) {
  config.validate();
  constexpr std::size_t n = 5, D = 8, d = 4, q = 3;
  const double sigma = config.sigma_local;
  const layer::LayerOptions options = layer::LayerOptions::from_config(config);

  LayerGradcheckReport report;
  report.blocks = {"W_a", "W_gcn"};
  if (config.gcn_layers == 2) report.blocks.push_back("W_hidden");
  report.block_max.assign(report.blocks.size(), 0.0);

  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng = substream(config.seed + s, "gradcheck");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<double> center(D);
    double norm = 0.0;
    for (double& c : center) {
      c = normal(rng);
      norm += c * c;
    }
    for (double& c : center) c /= std::sqrt(norm);
    auto cloud = [&](std::size_t rows) {
      Matrix m(rows, D);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < D; ++j) m(i, j) = center[j] + 0.35 * sigma * normal(rng);
      return m;
    };
    const Matrix S = cloud(n);
    const Matrix X = cloud(q);
    const Matrix local = gaussian_kernel(S, S, sigma);
    std::vector<std::size_t> labels(q);
    for (auto& l : labels) l = static_cast<std::size_t>(unit(rng) * n) % n;
    Matrix Z(n, d);
    for (double& v : Z.values()) v = normal(rng);
    Matrix A = Matrix::identity(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) A(i, j) = A(j, i) = 0.05 + 0.9 * unit(rng);

    auto params = layer::EGLayerParams::init(n, D, d, config.gcn_layers, rng);
    for (double& w : params.W_a.values()) w += 0.2 * (unit(rng) - 0.5);
    std::vector<Matrix> blocks{params.W_a, params.W_gcn};
    if (config.gcn_layers == 2) blocks.push_back(params.W_hidden);

    const layer::LayerInputs inputs{S, local, X, labels, Z, A};
    const ScalarObjective objective = [&](ad::Tape& tape, std::span<const ad::Var> p) {
      auto wrap = [&](ad::Var v) { return hook ? hook(tape, v) : v; };
      layer::ParamVars vars{wrap(p[0]), wrap(p[1]), std::nullopt};
      if (p.size() == 3) vars.W_hidden = wrap(p[2]);
      return *layer::eglayer_forward(tape, vars, inputs, options).loss;
    };
    GradcheckOptions go;
    go.tolerance = tolerance;
    const auto r = gradcheck(objective, blocks, go);
    report.per_seed.push_back(r.block_max_rel_error);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      report.block_max[b] = std::max(report.block_max[b], r.block_max_rel_error[b]);
    }
  }
  for (double e : report.block_max) report.max_rel_error = std::max(report.max_rel_error, e);
  report.passed = report.max_rel_error < tolerance;
  return report;
}

bool cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream&,
                   const ParamHook& hook) {
  if (args.seeds == 0) throw ParameterError("gradcheck needs at least one seed");
  const RunConfig config = stage("config", [&] { return resolve_config(args.config); });
  const auto report = stage("gradcheck", [&] { return layer_gradcheck(config, args.seeds, 1e-4, hook); });
  for (std::size_t s = 0; s < report.per_seed.size(); ++s) {
    out << "seed " << config.seed + s;
    for (std::size_t b = 0; b < report.blocks.size(); ++b) {
      out << "  " << report.blocks[b] << " " << sci(report.per_seed[s][b]);
    }
    out << "\n";
  }
  for (std::size_t b = 0; b < report.blocks.size(); ++b) {
    out << "max_rel_error " << report.blocks[b] << " " << sci(report.block_max[b]) << "\n";
  }
  out << (report.passed ? "PASS" : "FAIL") << " max_rel_error " << sci(report.max_rel_error)
      << " tolerance 1e-4\n";
  return report.passed;
}

void cmd_gen_synthetic(const GenSyntheticArgs& args, std::ostream& out, std::ostream&) {
  const auto spec = stage("spec", [&] {
    ordered_json patch = args.spec ? read_json(*args.spec) : ordered_json::object();
    return harness::synthetic_spec_from_json(apply_overrides(std::move(patch), args.overrides));
  });
  const auto data = stage("generate", [&] { return harness::generate_synthetic(spec); });
  OutputSet outputs;
  outputs.stage(args.out_dir / "train.csv", harness::features_to_csv(data.train));
  outputs.stage(args.out_dir / "novel.csv", harness::features_to_csv(data.novel));
  outputs.stage(args.out_dir / "target.csv", harness::features_to_csv(data.target));
  outputs.stage(args.out_dir / "graph.json", dump(knowledge::graph_to_json(data.graph)));
  outputs.stage(args.out_dir / "spec.json", dump(harness::synthetic_spec_to_json(spec)));
  stage("write", [&] { outputs.commit(); });
  out << "wrote " << data.train.size() << " train, " << data.novel.size() << " novel and "
      << data.target.size() << " target samples to " << args.out_dir.string() << "\n";
}

}  // namespace eg::cli
