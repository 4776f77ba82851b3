#include "eg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <mutex>
#include <thread>

#include "eg/error.hpp"

namespace eg::harness {

namespace {

std::vector<double> unit_gaussian(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

// D x d matrix with orthonormal columns (Gram-Schmidt on Gaussian draws).
Matrix random_isometry(std::size_t D, std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix M(D, d);
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<double> col(D);
    double norm = 0.0;
    while (norm < 1e-8) {
      for (double& x : col) x = normal(rng);
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t r = 0; r < D; ++r) dot += col[r] * M(r, p);
        for (std::size_t r = 0; r < D; ++r) col[r] -= dot * M(r, p);
      }
      norm = 0.0;
      for (double x : col) norm += x * x;
      norm = std::sqrt(norm);
    }
    for (std::size_t r = 0; r < D; ++r) M(r, c) = col[r] / norm;
  }
  return M;
}

DatasetSplit sample_split(const std::vector<std::string>& names, const Matrix& means,
                          std::size_t per_class, double noise, std::string tag, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t D = means.cols();
  DatasetSplit split;
  split.class_names = names;
  split.domain_tag = std::move(tag);
  std::vector<double> data;
  data.reserve(names.size() * per_class * D);
  for (std::size_t k = 0; k < names.size(); ++k) {
    for (std::size_t s = 0; s < per_class; ++s) {
      std::vector<double> x(D);
      double norm = 0.0;
      for (std::size_t j = 0; j < D; ++j) {
        x[j] = means(k, j) + noise * normal(rng);
        norm += x[j] * x[j];
      }
      norm = std::sqrt(norm);
      if (!(norm > kNormEpsilon)) throw NumericError("synthetic sample has zero norm");
      for (double v : x) data.push_back(v / norm);
      split.labels.push_back(k);
    }
  }
  split.features = Matrix(split.labels.size(), D, std::move(data));
  return split;
}

std::string indexed_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%02zu", prefix, i);
  return buf;
}

std::size_t argmax_row(const Matrix& m, std::size_t r) {
  auto row = m.row(r);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

void SyntheticSpec::validate() const {
  auto require = [](bool ok, const char* field, const char* why) {
    if (!ok) throw ParameterError(std::string("synthetic spec field '") + field + "': " + why);
  };
  require(n_classes >= 1, "n_classes", "must be at least 1");
  require(feature_dim >= 1, "feature_dim", "must be at least 1");
  require(semantic_dim >= 1 && semantic_dim <= feature_dim, "semantic_dim",
          "must lie in [1, feature_dim]");
  require(cluster_noise >= 0 && std::isfinite(cluster_noise), "cluster_noise", "must be >= 0");
  require(semantic_alignment >= 0 && semantic_alignment <= 1, "semantic_alignment",
          "must lie in [0, 1]");
  require(samples_per_class >= 1, "samples_per_class", "must be at least 1");
  require(sigma_global > 0 && std::isfinite(sigma_global), "sigma_global", "must be positive");
  require(domain_shift >= 0 && std::isfinite(domain_shift), "domain_shift", "must be >= 0");
}

nlohmann::ordered_json synthetic_spec_to_json(const SyntheticSpec& s) {
  nlohmann::ordered_json j;
  j["n_classes"] = s.n_classes;
  j["novel_classes"] = s.novel_classes;
  j["feature_dim"] = s.feature_dim;
  j["semantic_dim"] = s.semantic_dim;
  j["cluster_noise"] = s.cluster_noise;
  j["semantic_alignment"] = s.semantic_alignment;
  j["samples_per_class"] = s.samples_per_class;
  j["sigma_global"] = s.sigma_global;
  j["domain_shift"] = s.domain_shift;
  j["seed"] = s.seed;
  return j;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw ParameterError("synthetic spec must be a JSON object");
  SyntheticSpec s;
  for (const auto& [key, value] : j.items()) {
    try {
      auto count = [&]() {
        if (!value.is_number_unsigned()) {
          throw ParameterError("synthetic spec field '" + key + "': expected a non-negative integer");
        }
        return value.get<std::size_t>();
      };
      if (key == "n_classes") s.n_classes = count();
      else if (key == "novel_classes") s.novel_classes = count();
      else if (key == "feature_dim") s.feature_dim = count();
      else if (key == "semantic_dim") s.semantic_dim = count();
      else if (key == "cluster_noise") s.cluster_noise = value.get<double>();
      else if (key == "semantic_alignment") s.semantic_alignment = value.get<double>();
      else if (key == "samples_per_class") s.samples_per_class = count();
      else if (key == "sigma_global") s.sigma_global = value.get<double>();
      else if (key == "domain_shift") s.domain_shift = value.get<double>();
      else if (key == "seed") s.seed = count();
      else throw ParameterError("unknown synthetic spec field '" + key + "'");
    } catch (const nlohmann::json::exception&) {
      throw ParameterError("synthetic spec field '" + key + "': wrong type");
    }
  }
  s.validate();
  return s;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = substream(spec.seed, "synthetic");
  const std::size_t D = spec.feature_dim, d = spec.semantic_dim;
  const std::size_t total = spec.n_classes + spec.novel_classes;
  const double rho = spec.semantic_alignment;

  const Matrix M = random_isometry(D, d, rng);
  Matrix latent(total, d), semantic(total, d);
  for (std::size_t k = 0; k < total; ++k) {
    const auto c = unit_gaussian(d, rng);
    std::copy(c.begin(), c.end(), latent.row(k).begin());
  }
  for (std::size_t k = 0; k < total; ++k) {
    const auto r = unit_gaussian(d, rng);
    for (std::size_t j = 0; j < d; ++j) semantic(k, j) = rho * latent(k, j) + (1.0 - rho) * r[j];
  }
  const Matrix means = matmul(latent, transpose(M));  // unit rows: M is an isometry

  std::vector<std::string> names;
  for (std::size_t k = 0; k < spec.n_classes; ++k) names.push_back(indexed_name("base", k));
  for (std::size_t k = 0; k < spec.novel_classes; ++k) names.push_back(indexed_name("novel", k));
  const std::vector<std::string> base_names(names.begin(), names.begin() + spec.n_classes);
  const std::vector<std::string> novel_names(names.begin() + spec.n_classes, names.end());

  std::vector<std::size_t> base_rows(spec.n_classes), novel_rows(spec.novel_classes);
  std::iota(base_rows.begin(), base_rows.end(), 0);
  std::iota(novel_rows.begin(), novel_rows.end(), spec.n_classes);
  const Matrix base_means = select_rows(means, base_rows);

  SyntheticData out;
  out.train = sample_split(base_names, base_means, spec.samples_per_class, spec.cluster_noise,
                           "source", rng);
  out.novel = sample_split(novel_names, select_rows(means, novel_rows), spec.samples_per_class,
                           spec.cluster_noise, "novel", rng);
  const auto shift_dir = unit_gaussian(D, rng);
  Matrix shifted = base_means;
  for (std::size_t k = 0; k < shifted.rows(); ++k)
    for (std::size_t j = 0; j < D; ++j) shifted(k, j) += spec.domain_shift * shift_dir[j];
  out.target = sample_split(base_names, shifted, spec.samples_per_class, spec.cluster_noise,
                            "target", rng);
  out.graph = knowledge::build_global_graph(names, semantic, spec.sigma_global);
  out.class_means = means;
  return out;
}

std::vector<TrainRecord> train_model(Model& model, const DatasetSplit& split,
                                     const std::function<void(const TrainRecord&)>& on_step) {
  const RunConfig& cfg = model.config();
  if (split.size() == 0) throw DataError("training split is empty");
  if (split.class_names != model.class_names()) {
    throw DataError("training split classes differ from the model's class list");
  }
  const std::size_t m = split.size();
  const std::size_t batch = std::min(cfg.batch_size, m);

  auto gather = [&](std::span<const std::size_t> rows, Matrix& X, std::vector<std::size_t>& y) {
    X = select_rows(split.features, rows);
    y.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = split.labels[rows[i]];
  };

  Matrix X;
  std::vector<std::size_t> y;
  if (!model.ready()) {
    Rng warm = substream(cfg.seed, "warmup");
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), warm);
    for (std::size_t start = 0; start < m && !model.ready(); start += batch) {
      const std::size_t len = std::min(batch, m - start);
      gather(std::span(order).subspan(start, len), X, y);
      model.observe(X, y);
    }
    if (!model.ready()) throw StateError("warm-up pass left classes without a prototype");
  }

  Rng data = substream(cfg.seed, "data");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = m;
  std::vector<TrainRecord> log;
  log.reserve(cfg.steps);
  std::vector<std::size_t> rows(batch);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (std::size_t i = 0; i < batch; ++i) {
      if (cursor == m) {
        std::shuffle(order.begin(), order.end(), data);
        cursor = 0;
      }
      rows[i] = order[cursor++];
    }
    gather(rows, X, y);
    const auto outcome = model.train_step(X, y);
    TrainRecord rec{step, outcome.losses};
    log.push_back(rec);
    if (on_step) on_step(rec);
  }
  return log;
}

EpisodeSpec EpisodeSpec::from_config(const RunConfig& c) {
  return {c.n_way, c.k_shot, c.q_query, c.episodes, c.seed, c.workers};
}

Episode sample_episode(const DatasetSplit& split, const EpisodeSpec& spec, Rng& rng) {
  if (spec.n_way == 0 || spec.n_way > split.class_count()) {
    throw ParameterError("episode needs " + std::to_string(spec.n_way) + " classes, split has " +
                         std::to_string(split.class_count()));
  }
  if (spec.q_query == 0) throw ParameterError("episode needs at least one query per class");
  std::vector<std::size_t> classes(split.class_count());
  std::iota(classes.begin(), classes.end(), 0);
  std::shuffle(classes.begin(), classes.end(), rng);
  classes.resize(spec.n_way);

  Episode ep;
  ep.classes = classes;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    auto rows = split.rows_of(classes[c]);
    if (rows.size() < spec.k_shot + spec.q_query) {
      throw DataError("class '" + split.class_names[classes[c]] + "' has " +
                      std::to_string(rows.size()) + " samples, episode needs " +
                      std::to_string(spec.k_shot + spec.q_query));
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t i = 0; i < spec.k_shot; ++i) {
      ep.support.push_back(rows[i]);
      ep.support_labels.push_back(c);
    }
    for (std::size_t i = 0; i < spec.q_query; ++i) {
      ep.query.push_back(rows[spec.k_shot + i]);
      ep.query_labels.push_back(c);
    }
  }
  return ep;
}

double ci95(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(n));
}

namespace {

double episode_accuracy(const Matrix& projected, const Episode& ep, std::size_t n_way) {
  const Matrix support = select_rows(projected, ep.support);
  const Matrix queries = select_rows(projected, ep.query);
  Matrix prototypes(n_way, support.cols());
  std::vector<double> counts(n_way, 0.0);
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    const std::size_t c = ep.support_labels[i];
    for (std::size_t j = 0; j < support.cols(); ++j) prototypes(c, j) += support(i, j);
    counts[c] += 1.0;
  }
  for (std::size_t c = 0; c < n_way; ++c)
    for (double& v : prototypes.row(c)) v /= counts[c];
  const Matrix sims = cosine_similarity(queries, prototypes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ep.query.size(); ++i)
    correct += argmax_row(sims, i) == ep.query_labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(ep.query.size());
}

}  // namespace

EvalResult prototype_eval(const Model& model, const DatasetSplit& split, const EpisodeSpec& spec) {
  if (spec.k_shot == 0) throw ParameterError("prototype evaluation needs k_shot >= 1");
  if (spec.episodes == 0) throw ParameterError("prototype evaluation needs at least one episode");
  if (split.feature_dim() != model.feature_dim()) {
    throw DimensionError("split feature width differs from the model's");
  }
  // Projection is row-independent, so every episode can share one pass over the split.
  const Matrix projected = model.project(split.features);
  EvalResult result;
  result.episodes = spec.episodes;
  result.episode_accuracies.assign(spec.episodes, 0.0);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    try {
      for (std::size_t i = next++; i < spec.episodes; i = next++) {
        Rng rng = substream(spec.seed + i, "episodes");
        const Episode ep = sample_episode(split, spec, rng);
        result.episode_accuracies[i] = episode_accuracy(projected, ep, spec.n_way);
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = spec.episodes;
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(spec.workers, spec.episodes));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  const auto& accs = result.episode_accuracies;
  result.accuracy = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
  result.ci95 = ci95(accs);
  return result;
}

double zero_shot_eval(const Model& model, const knowledge::GlobalGraph& graph,
                      const DatasetSplit& novel) {
  if (!model.uses_semantic_space()) {
    throw ParameterError("zero-shot evaluation needs a head that projects into the semantic space");
  }
  if (novel.size() == 0) throw ParameterError("zero-shot evaluation needs at least one query");
  std::vector<std::size_t> nodes;
  for (const auto& name : novel.class_names) nodes.push_back(graph.index_of(name));
  const Matrix representatives = select_rows(graph.Z, nodes);
  const Matrix sims = cosine_similarity(model.project(novel.features), representatives);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < novel.size(); ++i) correct += argmax_row(sims, i) == novel.labels[i];
  return static_cast<double>(correct) / static_cast<double>(novel.size());
}

std::vector<std::size_t> open_set_classify(const Matrix& probabilities, double threshold,
                                           std::size_t outlier_label) {
  std::vector<std::size_t> out(probabilities.rows());
  for (std::size_t i = 0; i < probabilities.rows(); ++i) {
    const std::size_t best = argmax_row(probabilities, i);
    out[i] = probabilities(i, best) >= threshold ? best : outlier_label;
  }
  return out;
}

namespace {

// Maps split labels to model class indices; unknown classes map to `missing`.
std::vector<std::size_t> label_map(const Model& model, const DatasetSplit& split,
                                   std::size_t missing) {
  const auto& names = model.class_names();
  std::vector<std::size_t> map(split.class_count(), missing);
  for (std::size_t c = 0; c < split.class_count(); ++c) {
    auto it = std::find(names.begin(), names.end(), split.class_names[c]);
    if (it != names.end()) map[c] = static_cast<std::size_t>(it - names.begin());
  }
  return map;
}

}  // namespace

double cross_domain_eval(const Model& model, const DatasetSplit& target) {
  if (target.size() == 0) throw ParameterError("cross-domain evaluation needs a nonempty target");
  const std::size_t n = model.class_names().size();
  const auto map = label_map(model, target, n);
  for (std::size_t c = 0; c < map.size(); ++c) {
    if (map[c] == n) {
      throw DataError("target class '" + target.class_names[c] + "' was not seen in training");
    }
  }
  const Matrix probs = model.predict(target.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < target.size(); ++i)
    correct += argmax_row(probs, i) == map[target.labels[i]];
  return static_cast<double>(correct) / static_cast<double>(target.size());
}

double open_set_eval(const Model& model, const DatasetSplit& target, double threshold) {
  if (target.size() == 0) throw ParameterError("open-set evaluation needs a nonempty target");
  const std::size_t outlier = model.class_names().size();
  const auto map = label_map(model, target, outlier);
  const auto predicted = open_set_classify(model.predict(target.features), threshold, outlier);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < target.size(); ++i) correct += predicted[i] == map[target.labels[i]];
  return static_cast<double>(correct) / static_cast<double>(target.size());
}

}  // namespace eg::harness
