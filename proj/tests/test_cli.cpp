#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "eg/commands.hpp"
#include "eg/config.hpp"
#include "eg/error.hpp"
#include "eg/model.hpp"

using namespace eg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("eg_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::size_t file_count(const fs::path& dir) {
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

// Synthetic data plus a trained eglayer checkpoint in `dir`.
void prepare(const TempDir& dir, const std::vector<std::string>& spec_sets = {},
             const std::vector<std::string>& train_sets = {"steps=20"}) {
  std::vector<std::string> gen{"gen-synthetic", "--out-dir", dir / "data"};
  for (const auto& s : spec_sets) {
    gen.push_back("--set");
    gen.push_back(s);
  }
  REQUIRE(run(gen).code == 0);
  std::vector<std::string> train{"train",      "--features",   dir / "data/train.csv",
                                 "--graph",    dir / "data/graph.json",
                                 "--checkpoint", dir / "ck.json", "--loss-csv", dir / "loss.csv"};
  for (const auto& s : train_sets) {
    train.push_back("--set");
    train.push_back(s);
  }
  const auto r = run(train);
  INFO(r.err);
  REQUIRE(r.code == 0);
}

}  // namespace

TEST_CASE("config parsing") {
  const auto j = nlohmann::ordered_json::parse(R"({"head":"lplayer","steps":7,"sigma_local":0.1})");
  const RunConfig c = config_from_json(j);
  CHECK(c.head == HeadKind::LPLayer);
  CHECK(c.steps == 7);
  CHECK(c.sigma_local == 0.1);
  CHECK(c.alpha1 == 1.0);
  CHECK(c.alpha2 == 0.01);
  CHECK(c.beta == 0.9);
  CHECK(c.gcn_layers == 1);
  CHECK(config_from_json(config_to_json(c)).steps == 7);

  auto expect_field = [](const char* text, const char* field) {
    try {
      config_from_json(nlohmann::ordered_json::parse(text)).validate();
      FAIL("expected a parameter error for " << field);
    } catch (const ParameterError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  expect_field(R"({"colour":1})", "colour");
  expect_field(R"({"head":"transformer"})", "head");
  expect_field(R"({"steps":-3})", "steps");
  expect_field(R"({"gcn_layers":3})", "gcn_layers");
  expect_field(R"({"sigma_local":0})", "sigma_local");
  expect_field(R"({"beta":1.5})", "beta");
  expect_field(R"({"alpha2":-1})", "alpha2");
  expect_field(R"({"activation":"tanh"})", "activation");
}

TEST_CASE("flag overrides win over the config file") {
  TempDir dir;
  spit(dir / "cfg.json", R"({"steps": 9, "head": "linear"})");
  const RunConfig c = cli::resolve_config({dir / "cfg.json", {"steps=4", "dataset_profile=office31"}});
  CHECK(c.steps == 4);
  CHECK(c.head == HeadKind::Linear);
  CHECK(c.dataset_profile == "office31");
  CHECK(c.effective_export_k() == 70);
  CHECK_THROWS_AS(cli::resolve_config({std::nullopt, {"steps"}}), ParameterError);
}

TEST_CASE("exit codes") {
  CHECK(cli::exit_code(ErrorKind::Parameter) == 1);
  CHECK(cli::exit_code(ErrorKind::Data) == 2);
  CHECK(cli::exit_code(ErrorKind::Format) == 2);
  CHECK(cli::exit_code(ErrorKind::Numeric) == 3);
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"train"}).code == 1);
}

TEST_CASE("gen-synthetic") {
  TempDir dir;
  const auto r = run({"gen-synthetic", "--out-dir", dir / "a", "--set", "n_classes=20", "--set",
                      "samples_per_class=50"});
  REQUIRE(r.code == 0);
  CHECK(line_count(slurp(dir / "a/train.csv")) == 1001);
  REQUIRE(run({"gen-synthetic", "--out-dir", dir / "b", "--set", "n_classes=20", "--set",
               "samples_per_class=50"}).code == 0);
  for (const char* f : {"train.csv", "novel.csv", "target.csv", "graph.json", "spec.json"}) {
    CHECK(slurp(dir / (std::string("a/") + f)) == slurp(dir / (std::string("b/") + f)));
  }
  const auto bad = run({"gen-synthetic", "--out-dir", dir / "c", "--set", "semantic_alignment=2"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("semantic_alignment") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "c/train.csv"));
}

TEST_CASE("semantic alignment changes the global edge ranking") {
  TempDir dir;
  REQUIRE(run({"gen-synthetic", "--out-dir", dir / "r0", "--set", "semantic_alignment=0"}).code == 0);
  REQUIRE(run({"gen-synthetic", "--out-dir", dir / "r1", "--set", "semantic_alignment=1"}).code == 0);
  for (const char* r : {"r0", "r1"}) {
    REQUIRE(run({"export-graph", "--graph", dir / (std::string(r) + "/graph.json"), "-k", "30", "--out",
                 dir / (std::string(r) + ".json")}).code == 0);
  }
  auto pairs = [&](const char* r) {
    std::vector<std::pair<int, int>> out;
    const auto j = json::parse(slurp(dir / (std::string(r) + ".json")));
    for (const auto& e : j["edges"])
      out.emplace_back(e["src"].get<int>(), e["dst"].get<int>());
    return out;
  };
  CHECK(pairs("r0") != pairs("r1"));
}

TEST_CASE("train") {
  TempDir dir;
  prepare(dir);
  const std::string csv = slurp(dir / "loss.csv");
  CHECK(csv.rfind("step,L,L_sup,L_a,L_reg\n", 0) == 0);
  CHECK(line_count(csv) == 21);
  const auto ck = json::parse(slurp(dir / "ck.json"));
  CHECK(ck.contains("W_a"));
  CHECK(ck.contains("W_gcn"));
  CHECK(ck["config"]["steps"] == 20);

  SUBCASE("rerun is byte-identical") {
    REQUIRE(run({"train", "--features", dir / "data/train.csv", "--graph", dir / "data/graph.json",
                 "--checkpoint", dir / "ck2.json", "--loss-csv", dir / "loss2.csv", "--set", "steps=20"})
                .code == 0);
    CHECK(slurp(dir / "ck.json") == slurp(dir / "ck2.json"));
    CHECK(slurp(dir / "loss.csv") == slurp(dir / "loss2.csv"));
  }
  SUBCASE("zero steps keeps the initial parameters") {
    REQUIRE(run({"train", "--features", dir / "data/train.csv", "--graph", dir / "data/graph.json",
                 "--checkpoint", dir / "ck0.json", "--loss-csv", dir / "loss0.csv", "--set", "steps=0"})
                .code == 0);
    const auto j = nlohmann::ordered_json::parse(slurp(dir / "ck0.json"));
    const Model trained = Model::from_checkpoint(j);
    RunConfig c;
    c.steps = 0;
    const auto graph = knowledge::graph_from_json(nlohmann::ordered_json::parse(slurp(dir / "data/graph.json")));
    const Model init = Model::create(c, trained.class_names(), trained.feature_dim(), &graph);
    CHECK(trained.eg_params().W_a == init.eg_params().W_a);
    CHECK(trained.eg_params().W_gcn == init.eg_params().W_gcn);
    CHECK(line_count(slurp(dir / "loss0.csv")) == 1);
  }
  SUBCASE("failures leave no outputs and name the stage") {
    const fs::path before = dir.path;
    const std::size_t files = file_count(before);
    const auto no_graph = run({"train", "--features", dir / "data/train.csv", "--checkpoint",
                               dir / "x.json", "--loss-csv", dir / "x.csv"});
    CHECK(no_graph.code == 1);
    CHECK(no_graph.err.find("graph") != std::string::npos);
    spit(dir / "bad.csv", "class,f0,f1\na,1,2\nb,1\n");
    const auto ragged = run({"train", "--features", dir / "bad.csv", "--graph", dir / "data/graph.json",
                             "--checkpoint", dir / "x.json", "--loss-csv", dir / "x.csv"});
    CHECK(ragged.code == 2);
    CHECK(ragged.err.find("features") != std::string::npos);
    const auto bad_cfg = run({"train", "--features", dir / "data/train.csv", "--graph",
                              dir / "data/graph.json", "--checkpoint", dir / "x.json", "--loss-csv",
                              dir / "x.csv", "--set", "lr=-1"});
    CHECK(bad_cfg.code == 1);
    CHECK(bad_cfg.err.find("lr") != std::string::npos);
    CHECK(file_count(before) == files + 1);  // only bad.csv was added
    CHECK_FALSE(fs::exists(dir / "x.json"));
    CHECK_FALSE(fs::exists(dir / "x.csv"));
  }
}

TEST_CASE("eval protocols") {
  TempDir dir;
  prepare(dir);
  SUBCASE("fewshot results JSON") {
    const auto r = run({"eval", "--checkpoint", dir / "ck.json", "--protocol", "fewshot", "--data",
                        dir / "data/novel.csv", "--out", dir / "res.json", "--set", "episodes=40"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    const auto j = json::parse(slurp(dir / "res.json"));
    CHECK(j["protocol"] == "fewshot");
    CHECK(j["episodes"] == 40);
    CHECK(j["accuracy"].get<double>() > 0.2);
    CHECK(j["ci95"].get<double>() > 0.0);
    CHECK(j["config"]["episodes"] == 40);
    REQUIRE(run({"eval", "--checkpoint", dir / "ck.json", "--protocol", "fewshot", "--data",
                 dir / "data/novel.csv", "--out", dir / "res2.json", "--set", "episodes=40"}).code == 0);
    CHECK(slurp(dir / "res.json") == slurp(dir / "res2.json"));
  }
  SUBCASE("zeroshot ignores k_shot with a warning") {
    const auto r = run({"eval", "--checkpoint", dir / "ck.json", "--protocol", "zeroshot", "--data",
                        dir / "data/novel.csv", "--graph", dir / "data/graph.json", "--out",
                        dir / "zs.json", "--set", "k_shot=5"});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("k_shot") != std::string::npos);
    CHECK(json::parse(slurp(dir / "zs.json"))["config"]["k_shot"] == 0);
    const auto quiet = run({"eval", "--checkpoint", dir / "ck.json", "--protocol", "zeroshot", "--data",
                            dir / "data/novel.csv", "--graph", dir / "data/graph.json", "--out",
                            dir / "zs2.json"});
    CHECK(quiet.err.empty());
  }
  SUBCASE("crossdomain and openset") {
    REQUIRE(run({"eval", "--checkpoint", dir / "ck.json", "--protocol", "crossdomain", "--data",
                 dir / "data/target.csv", "--out", dir / "cd.json"}).code == 0);
    CHECK(json::parse(slurp(dir / "cd.json"))["accuracy"].get<double>() > 0.1);
    REQUIRE(run({"eval", "--checkpoint", dir / "ck.json", "--protocol", "openset", "--data",
                 dir / "data/novel.csv", "--out", dir / "os.json", "--set", "open_set_threshold=0.999999"})
                .code == 0);
    CHECK(json::parse(slurp(dir / "os.json"))["accuracy"] == 1.0);
  }
  SUBCASE("shape mismatch and unknown protocol") {
    spit(dir / "narrow.csv", "class,f0,f1\nnovel00,1,0\nnovel00,1,0.1\nnovel01,0,1\nnovel01,0.1,1\n");
    const auto r = run({"eval", "--checkpoint", dir / "ck.json", "--protocol", "fewshot", "--data",
                        dir / "narrow.csv", "--out", dir / "bad.json", "--set", "n_way=2", "--set",
                        "q_query=1"});
    CHECK(r.code == 2);
    CHECK(r.err.find("width") != std::string::npos);
    CHECK(run({"eval", "--checkpoint", dir / "ck.json", "--protocol", "oneshot", "--data",
               dir / "data/novel.csv", "--out", dir / "bad.json"}).code == 1);
    CHECK_FALSE(fs::exists(dir / "bad.json"));
  }
}

TEST_CASE("fewshot on separable data is perfect") {
  TempDir dir;
  spit(dir / "train.csv", "class,f0,f1,f2\na,1,0,0\nb,0,1,0\nc,0,0,1\n");
  spit(dir / "novel.csv", "class,f0,f1,f2\nx,1,0,0\nx,1,0.01,0\ny,0,1,0\ny,0.01,1,0\n");
  REQUIRE(run({"train", "--features", dir / "train.csv", "--checkpoint", dir / "ck.json", "--loss-csv",
               dir / "loss.csv", "--set", "head=\"linear\"", "--set", "steps=3"}).code == 0);
  REQUIRE(run({"eval", "--checkpoint", dir / "ck.json", "--protocol", "fewshot", "--data",
               dir / "novel.csv", "--out", dir / "res.json", "--set", "n_way=2", "--set", "q_query=1",
               "--set", "episodes=1"}).code == 0);
  CHECK(json::parse(slurp(dir / "res.json"))["accuracy"] == 1.0);
}

TEST_CASE("openset with a uniform predictor marks everything as outlier") {
  TempDir dir;
  spit(dir / "train.csv", "class,f0,f1\na,1,0\nb,0,1\n");
  REQUIRE(run({"train", "--features", dir / "train.csv", "--checkpoint", dir / "ck.json", "--loss-csv",
               dir / "loss.csv", "--set", "head=linear", "--set", "steps=0"}).code == 0);
  auto ck = nlohmann::ordered_json::parse(slurp(dir / "ck.json"));
  ck["W"] = std::vector<std::vector<double>>{{0, 0}, {0, 0}};
  spit(dir / "ck.json", ck.dump());
  spit(dir / "known.csv", "class,f0,f1\na,1,0\nb,0,1\n");
  spit(dir / "unknown.csv", "class,f0,f1\nq,1,1\nr,1,-1\n");
  REQUIRE(run({"eval", "--checkpoint", dir / "ck.json", "--protocol", "openset", "--data",
               dir / "known.csv", "--out", dir / "k.json", "--set", "open_set_threshold=0.999"}).code == 0);
  REQUIRE(run({"eval", "--checkpoint", dir / "ck.json", "--protocol", "openset", "--data",
               dir / "unknown.csv", "--out", dir / "u.json", "--set", "open_set_threshold=0.999"}).code == 0);
  CHECK(json::parse(slurp(dir / "k.json"))["accuracy"] == 0.0);
  CHECK(json::parse(slurp(dir / "u.json"))["accuracy"] == 1.0);
}

TEST_CASE("export-graph") {
  TempDir dir;
  SUBCASE("default k on a 65-class graph") {
    REQUIRE(run({"gen-synthetic", "--out-dir", dir / "d", "--set", "n_classes=65", "--set",
                 "novel_classes=0", "--set", "samples_per_class=2"}).code == 0);
    REQUIRE(run({"export-graph", "--graph", dir / "d/graph.json", "--out", dir / "e.json", "--dot",
                 dir / "e.dot"}).code == 0);
    const auto j = json::parse(slurp(dir / "e.json"));
    CHECK(j["edges"].size() == 150);
    CHECK(j["nodes"].size() == 65);
    for (std::size_t i = 1; i < j["edges"].size(); ++i)
      CHECK(j["edges"][i - 1]["weight"].get<double>() >= j["edges"][i]["weight"].get<double>());
    REQUIRE(run({"export-graph", "--graph", dir / "d/graph.json", "--out", dir / "e2.json", "--dot",
                 dir / "e2.dot"}).code == 0);
    CHECK(slurp(dir / "e.json") == slurp(dir / "e2.json"));
    CHECK(slurp(dir / "e.dot") == slurp(dir / "e2.dot"));
  }
  SUBCASE("office31 profile") {
    REQUIRE(run({"gen-synthetic", "--out-dir", dir / "d", "--set", "n_classes=31", "--set",
                 "novel_classes=0", "--set", "samples_per_class=2"}).code == 0);
    REQUIRE(run({"export-graph", "--graph", dir / "d/graph.json", "--out", dir / "e.json", "--set",
                 "dataset_profile=office31"}).code == 0);
    CHECK(json::parse(slurp(dir / "e.json"))["edges"].size() == 70);
  }
  SUBCASE("global export does not depend on the checkpoint") {
    prepare(dir);
    REQUIRE(run({"train", "--features", dir / "data/train.csv", "--graph", dir / "data/graph.json",
                 "--checkpoint", dir / "other.json", "--loss-csv", dir / "other.csv", "--set", "seed=7",
                 "--set", "head=lplayer"}).code == 0);
    REQUIRE(run({"export-graph", "--checkpoint", dir / "ck.json", "-k", "12", "--out", dir / "g1.json"}).code == 0);
    REQUIRE(run({"export-graph", "--checkpoint", dir / "other.json", "-k", "12", "--out", dir / "g2.json"}).code == 0);
    CHECK(slurp(dir / "g1.json") == slurp(dir / "g2.json"));
  }
  SUBCASE("local and enhanced sources") {
    prepare(dir);
    for (const char* source : {"local", "enhanced"}) {
      const auto r = run({"export-graph", "--source", source, "--checkpoint", dir / "ck.json", "-k", "10",
                          "--out", dir / (std::string(source) + ".json")});
      INFO(r.err);
      REQUIRE(r.code == 0);
      CHECK(json::parse(slurp(dir / (std::string(source) + ".json")))["edges"].size() == 10);
    }
    CHECK(run({"export-graph", "--source", "local", "-k", "3", "--out", dir / "x.json"}).code == 1);
    auto ck = nlohmann::ordered_json::parse(slurp(dir / "ck.json"));
    for (auto& s : ck["bank"]["seen"]) s = false;
    for (auto& row : ck["bank"]["S"])
      for (auto& v : row) v = 0.0;
    spit(dir / "cold.json", ck.dump());
    const auto cold = run({"export-graph", "--source", "local", "--checkpoint", dir / "cold.json", "-k",
                           "3", "--out", dir / "x.json"});
    CHECK(cold.code == 2);
    CHECK_FALSE(fs::exists(dir / "x.json"));
  }
  SUBCASE("too many edges") {
    REQUIRE(run({"gen-synthetic", "--out-dir", dir / "d", "--set", "n_classes=5", "--set",
                 "novel_classes=0"}).code == 0);
    CHECK(run({"export-graph", "--graph", dir / "d/graph.json", "--out", dir / "e.json"}).code == 1);
    CHECK_FALSE(fs::exists(dir / "e.json"));
  }
}

TEST_CASE("gradcheck command") {
  const auto r = run({"gradcheck"});
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(r.out.find("max_rel_error W_a") != std::string::npos);
  CHECK(r.out.find("max_rel_error W_gcn") != std::string::npos);
  CHECK(run({"gradcheck"}).out == r.out);
  CHECK(run({"gradcheck", "--set", "alpha2=0"}).code == 0);
  const auto two = run({"gradcheck", "--set", "gcn_layers=2"});
  CHECK(two.code == 0);
  CHECK(two.out.find("W_hidden") != std::string::npos);

  std::ostringstream out, err;
  const cli::ParamHook corrupt = [](ad::Tape& t, ad::Var v) {
    return t.record("corrupt_identity", t.value(v), {v},
                    [](const Matrix& g) { return std::vector<Matrix>{scale(g, 0.9)}; });
  };
  CHECK_FALSE(cli::cmd_gradcheck({}, out, err, corrupt));
  CHECK(out.str().find("FAIL") != std::string::npos);
}
