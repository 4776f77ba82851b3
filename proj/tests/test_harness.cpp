#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <doctest.h>

#include "eg/error.hpp"
#include "eg/harness.hpp"
#include "eg/model.hpp"
#include "support.hpp"

using namespace eg;
using namespace eg::harness;

namespace {

DatasetSplit make_split(const std::vector<std::string>& names, const Matrix& features,
                        std::vector<std::size_t> labels) {
  DatasetSplit s;
  s.class_names = names;
  s.features = features;
  s.labels = std::move(labels);
  return s;
}

Model trained(const SyntheticData& data, RunConfig config) {
  Model m = Model::create(config, data.train.class_names, data.train.feature_dim(), &data.graph);
  train_model(m, data.train);
  return m;
}

std::size_t nearest_other(const Matrix& d2, std::size_t i) {
  std::size_t best = i == 0 ? 1 : 0;
  for (std::size_t j = 0; j < d2.cols(); ++j)
    if (j != i && d2(i, j) < d2(i, best)) best = j;
  return best;
}

}  // namespace

TEST_CASE("load features") {
  SUBCASE("two rows, two classes") {
    std::istringstream in("class,f0,f1\ncat,3,4\ndog,0,2\n");
    const auto s = load_features(in);
    CHECK(s.class_count() == 2);
    CHECK(s.size() == 2);
    CHECK(s.features(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(s.features(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(s.labels == std::vector<std::size_t>{0, 1});
  }
  SUBCASE("rows are unit norm") {
    std::istringstream in("class,f0,f1,f2\na,1,2,3\nb,-0.5,0.1,9\na,7,7,7\n");
    const auto s = load_features(in);
    for (std::size_t i = 0; i < s.size(); ++i) {
      double n = 0;
      for (double v : s.features.row(i)) n += v * v;
      CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-9);
    }
  }
  SUBCASE("zero row") {
    std::istringstream in("class,f0,f1\ncat,0,0\n");
    CHECK_THROWS_AS(load_features(in), DegenerateVectorError);
  }
  SUBCASE("ragged row names its line") {
    std::istringstream in("class,f0,f1\ncat,1,2\ndog,1\n");
    try {
      load_features(in);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("non-numeric field") {
    std::istringstream in("class,f0,f1\ncat,1,x\n");
    CHECK_THROWS_AS(load_features(in), FormatError);
  }
  SUBCASE("manifest fixes order and rejects strangers") {
    const std::vector<std::string> manifest{"dog", "cat"};
    std::istringstream ok("class,f0\ncat,1\ndog,2\n");
    const auto s = load_features(ok, &manifest);
    CHECK(s.labels == std::vector<std::size_t>{1, 0});
    std::istringstream bad("class,f0\ncow,1\n");
    CHECK_THROWS_AS(load_features(bad, &manifest), FormatError);
  }
  SUBCASE("CSV round trip") {
    std::istringstream in("class,f0,f1\ncat,3,4\ndog,0,2\n");
    const auto s = load_features(in);
    std::istringstream again(features_to_csv(s));
    const auto t = load_features(again);
    CHECK(t.features == s.features);
    CHECK(t.class_names == s.class_names);
  }
}

TEST_CASE("synthetic generation") {
  SyntheticSpec spec;
  spec.seed = 5;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(a.train.features == b.train.features);
  CHECK(a.novel.features == b.novel.features);
  CHECK(a.target.features == b.target.features);
  CHECK(a.graph.A == b.graph.A);
  CHECK(a.train.size() == spec.n_classes * spec.samples_per_class);
  CHECK(a.graph.size() == spec.n_classes + spec.novel_classes);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    double n = 0;
    for (double v : a.train.features.row(i)) n += v * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-9);
  }

  spec.cluster_noise = 0.0;
  const auto flat = generate_synthetic(spec);
  for (std::size_t k = 0; k < spec.n_classes; ++k) {
    const auto rows = flat.train.rows_of(k);
    for (std::size_t r : rows) CHECK(max_abs_diff(select_rows(flat.train.features, std::vector<std::size_t>{r}),
                                                  select_rows(flat.train.features, std::vector<std::size_t>{rows[0]})) == 0.0);
  }

  spec.semantic_alignment = 1.5;
  CHECK_THROWS_AS(generate_synthetic(spec), ParameterError);
  spec.semantic_alignment = 0.5;
  spec.cluster_noise = -0.1;
  CHECK_THROWS_AS(generate_synthetic(spec), ParameterError);
}

TEST_CASE("feature means do not depend on semantic alignment") {
  SyntheticSpec lo, hi;
  lo.semantic_alignment = 0.0;
  hi.semantic_alignment = 1.0;
  CHECK(generate_synthetic(lo).train.features == generate_synthetic(hi).train.features);
  CHECK_FALSE(generate_synthetic(lo).graph.A == generate_synthetic(hi).graph.A);
}

TEST_CASE("full alignment makes semantic neighbours match feature-mean neighbours") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.semantic_alignment = 1.0;
    spec.cluster_noise = 0.05;
    spec.n_classes = 10;
    const auto data = generate_synthetic(spec);
    std::vector<std::size_t> base(spec.n_classes);
    std::iota(base.begin(), base.end(), 0);
    const Matrix Zb = select_rows(data.graph.Z, base);
    const Matrix dz = pairwise_sq_dist(Zb, Zb);
    const Matrix means = select_rows(data.class_means, base);
    const Matrix dm = pairwise_sq_dist(means, means);
    for (std::size_t i = 0; i < spec.n_classes; ++i) {
      INFO("seed " << seed << " class " << i);
      CHECK(nearest_other(dz, i) == nearest_other(dm, i));
    }
  }
}

TEST_CASE("episode sampling") {
  SyntheticSpec spec;
  spec.n_classes = 6;
  spec.samples_per_class = 5;
  const auto data = generate_synthetic(spec);
  SUBCASE("every class once per set") {
    EpisodeSpec es{6, 1, 1, 1, 0, 1};
    Rng rng = substream(1, "episodes");
    const auto ep = sample_episode(data.train, es, rng);
    std::set<std::size_t> sc, qc;
    for (std::size_t r : ep.support) sc.insert(data.train.labels[r]);
    for (std::size_t r : ep.query) qc.insert(data.train.labels[r]);
    CHECK(sc.size() == 6);
    CHECK(qc.size() == 6);
    CHECK(ep.support.size() == 6);
  }
  SUBCASE("support and query are disjoint and deterministic") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      EpisodeSpec es{4, 2, 3, 1, 0, 1};
      Rng r1 = substream(seed, "episodes"), r2 = substream(seed, "episodes");
      const auto a = sample_episode(data.train, es, r1);
      const auto b = sample_episode(data.train, es, r2);
      CHECK(a.support == b.support);
      CHECK(a.query == b.query);
      std::set<std::size_t> s(a.support.begin(), a.support.end());
      for (std::size_t q : a.query) CHECK(s.count(q) == 0);
      CHECK(a.support.size() == 8);
      CHECK(a.query.size() == 12);
      for (std::size_t i = 0; i < a.query.size(); ++i)
        CHECK(data.train.labels[a.query[i]] == a.classes[a.query_labels[i]]);
    }
  }
  SUBCASE("errors") {
    Rng rng = substream(0, "episodes");
    CHECK_THROWS_AS(sample_episode(data.train, {7, 1, 1, 1, 0, 1}, rng), ParameterError);
    CHECK_THROWS_AS(sample_episode(data.train, {2, 3, 3, 1, 0, 1}, rng), DataError);
    CHECK_THROWS_AS(sample_episode(data.train, {2, 1, 0, 1, 0, 1}, rng), ParameterError);
  }
}

TEST_CASE("prototype evaluation hand cases") {
  RunConfig c;
  c.head = HeadKind::Linear;
  SUBCASE("queries identical to a support sample with orthogonal classes") {
    const Matrix f{{1, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 1}};
    const auto split = make_split({"a", "b", "c"}, f, {0, 0, 1, 1, 2, 2});
    const Model m = Model::create(c, split.class_names, 3, nullptr);
    const auto r = prototype_eval(m, split, {3, 1, 1, 5, 0, 1});
    CHECK(r.accuracy == 1.0);
    CHECK(r.ci95 == 0.0);
  }
  SUBCASE("always wrong") {
    auto at = [](double deg) {
      const double rad = deg * M_PI / 180.0;
      return std::vector<double>{std::cos(rad), std::sin(rad)};
    };
    const auto split = make_split({"a", "b"}, Matrix::from_rows({at(0), at(180), at(10), at(190)}),
                                  {0, 0, 1, 1});
    const Model m = Model::create(c, split.class_names, 2, nullptr);
    const auto r = prototype_eval(m, split, {2, 1, 1, 1, 3, 1});
    CHECK(r.accuracy == 0.0);
    CHECK(r.ci95 == 0.0);
    CHECK(r.episodes == 1);
  }
  SUBCASE("zero shots is rejected") {
    const auto split = make_split({"a"}, Matrix{{1.0}, {1.0}}, {0, 0});
    const Model m = Model::create(c, split.class_names, 1, nullptr);
    CHECK_THROWS_AS(prototype_eval(m, split, {1, 0, 1, 1, 0, 1}), ParameterError);
  }
}

TEST_CASE("confidence interval") {
  CHECK(ci95(std::vector<double>{0.4}) == 0.0);
  SyntheticSpec spec;
  const auto data = generate_synthetic(spec);
  RunConfig c;
  c.head = HeadKind::Linear;
  const Model m = Model::create(c, data.train.class_names, spec.feature_dim, nullptr);
  EpisodeSpec es{5, 1, 15, 600, 0, 1};
  const auto r = prototype_eval(m, data.novel, es);
  const auto& a = r.episode_accuracies;
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / 600.0;
  double ss = 0;
  for (double v : a) ss += (v - mean) * (v - mean);
  CHECK(r.accuracy == doctest::Approx(mean).epsilon(1e-14));
  CHECK(r.ci95 == doctest::Approx(1.96 * std::sqrt(ss / 599.0) / std::sqrt(600.0)).epsilon(1e-12));

  es.episodes = 400;
  const double small = prototype_eval(m, data.novel, es).ci95;
  es.episodes = 1600;
  const double large = prototype_eval(m, data.novel, es).ci95;
  CHECK(large / small > 0.45);
  CHECK(large / small < 0.55);
}

TEST_CASE("evaluation is pure and worker count does not change it") {
  SyntheticSpec spec;
  spec.seed = 2;
  const auto data = generate_synthetic(spec);
  RunConfig c;
  c.steps = 20;
  c.seed = 2;
  const Model m = trained(data, c);
  EpisodeSpec es{5, 1, 15, 60, 9, 1};
  const auto a = prototype_eval(m, data.novel, es);
  const auto b = prototype_eval(m, data.novel, es);
  es.workers = 3;
  const auto par = prototype_eval(m, data.novel, es);
  CHECK(a.episode_accuracies == b.episode_accuracies);
  CHECK(a.episode_accuracies == par.episode_accuracies);
  CHECK(a.accuracy == par.accuracy);
  CHECK(zero_shot_eval(m, data.graph, data.novel) == zero_shot_eval(m, data.graph, data.novel));
}

TEST_CASE("many shots on noiseless data classify perfectly") {
  SyntheticSpec spec;
  spec.cluster_noise = 0.0;
  spec.samples_per_class = 60;
  const auto data = generate_synthetic(spec);
  for (HeadKind head : {HeadKind::Linear, HeadKind::EGLayer, HeadKind::LPLayer}) {
    RunConfig c;
    c.head = head;
    c.steps = 50;
    const Model m = trained(data, c);
    CHECK(prototype_eval(m, data.novel, {5, 50, 10, 20, 0, 1}).accuracy == 1.0);
  }
}

TEST_CASE("open-set classification") {
  CHECK(open_set_classify(Matrix(1, 10, 0.1), 0.5, 10) == std::vector<std::size_t>{10});
  CHECK(open_set_classify(Matrix{{0, 1, 0}}, 0.999, 3) == std::vector<std::size_t>{1});
  CHECK(open_set_classify(Matrix{{0.55, 0.45}}, 0.5, 2) == std::vector<std::size_t>{0});
  CHECK(open_set_classify(Matrix{{0.55, 0.45}}, 0.6, 2) == std::vector<std::size_t>{2});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix p = row_softmax(test::random_matrix(8, 5, seed, -2, 2));
    for (std::size_t l : open_set_classify(p, 1e-12, 5)) CHECK(l < 5);
    for (std::size_t l : open_set_classify(p, 1.0 - 1e-12, 5)) CHECK(l == 5);
  }
}

TEST_CASE("zero-shot evaluation") {
  SUBCASE("projection equal to a node embedding") {
    // Linear projection with W_p = I maps each query onto itself.
    RunConfig c;
    c.head = HeadKind::LPLayer;
    const Matrix Z{{1, 0}, {0, 1}};
    const auto g = knowledge::build_global_graph({"a", "b"}, Z, 0.5);
    Model m = Model::create(c, {"a", "b"}, 2, &g);
    const auto ck = m.to_checkpoint();
    auto j = ck;
    j["W_p"] = Matrix::identity(2).to_rows();
    m = Model::from_checkpoint(j);
    const auto split = make_split({"b", "a"}, Matrix{{0, 1}, {1, 0}}, {0, 1});
    CHECK(zero_shot_eval(m, g, split) == 1.0);
    const auto stranger = make_split({"zebra"}, Matrix{{0, 1}}, {0});
    CHECK_THROWS_AS(zero_shot_eval(m, g, stranger), DataError);
  }
  SUBCASE("linear head has no semantic projection") {
    RunConfig c;
    c.head = HeadKind::Linear;
    const Model m = Model::create(c, {"a"}, 2, nullptr);
    const auto g = knowledge::build_global_graph({"a"}, Matrix{{1, 0}}, 0.5);
    CHECK_THROWS_AS(zero_shot_eval(m, g, make_split({"a"}, Matrix{{1, 0}}, {0})), ParameterError);
  }
  SUBCASE("untrained head on an uninformative graph is at chance") {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      SyntheticSpec spec;
      spec.seed = seed;
      spec.semantic_alignment = 0.0;
      spec.novel_classes = 2;
      spec.samples_per_class = 250;
      const auto data = generate_synthetic(spec);
      RunConfig c;
      c.seed = seed;
      c.steps = 0;
      const Model m = trained(data, c);
      total += zero_shot_eval(m, data.graph, data.novel);
    }
    CHECK(std::abs(total / 10 - 0.5) < 0.1);
  }
  SUBCASE("trained head on an aligned graph beats the untrained one") {
    double gain = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      SyntheticSpec spec;
      spec.seed = seed;
      spec.semantic_alignment = 1.0;
      const auto data = generate_synthetic(spec);
      RunConfig c;
      c.seed = seed;
      const double after = zero_shot_eval(trained(data, c), data.graph, data.novel);
      c.steps = 0;
      const double before = zero_shot_eval(trained(data, c), data.graph, data.novel);
      CHECK(after > 1.0 / static_cast<double>(spec.novel_classes));
      gain += after - before;
    }
    CHECK(gain > 0.0);
  }
}

TEST_CASE("cross-domain evaluation") {
  SyntheticSpec spec;
  const auto data = generate_synthetic(spec);
  RunConfig c;
  const Model m = trained(data, c);
  SUBCASE("training split scores its own training accuracy") {
    const Matrix P = m.predict(data.train.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < P.rows(); ++i) {
      const auto row = P.row(i);
      correct += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) ==
                 data.train.labels[i];
    }
    CHECK(cross_domain_eval(m, data.train) ==
          static_cast<double>(correct) / static_cast<double>(data.train.size()));
  }
  SUBCASE("errors") {
    DatasetSplit empty = data.train;
    empty.features = Matrix(0, spec.feature_dim);
    empty.labels.clear();
    CHECK_THROWS_AS(cross_domain_eval(m, empty), ParameterError);
    CHECK_THROWS_AS(cross_domain_eval(m, data.novel), DataError);
  }
}

TEST_CASE("knowledge-guided head transfers better under a domain shift than a linear head") {
  double gain = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    const auto data = generate_synthetic(spec);
    RunConfig c;
    c.seed = seed;
    const double eg = cross_domain_eval(trained(data, c), data.target);
    c.head = HeadKind::Linear;
    gain += eg - cross_domain_eval(trained(data, c), data.target);
  }
  CHECK(gain / 10 > 0.0);
}

TEST_CASE("open-set evaluation flags unknown classes") {
  SyntheticSpec spec;
  const auto data = generate_synthetic(spec);
  RunConfig c;
  c.head = HeadKind::Linear;
  const Model m = trained(data, c);
  // Above any reachable probability: every query is an outlier, so only unknown-class rows score.
  CHECK(open_set_eval(m, data.novel, 1.0 - 1e-12) == 1.0);
  CHECK(open_set_eval(m, data.train, 1.0 - 1e-12) == 0.0);
}
