#pragma once

// Synthetic data, the training loop, and the evaluation protocols: episodic few-shot,
// cross-domain, zero-shot and threshold-based open-set.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eg/config.hpp"
#include "eg/dataset.hpp"
#include "eg/eglayer.hpp"
#include "eg/knowledge.hpp"
#include "eg/model.hpp"

namespace eg::harness {

// Desk-scale stand-in for backbone features. Each class k has a unit latent vector c_k;
// its feature mean is M c_k for a random isometry M : R^d -> R^D, and its semantic vector
// is rho c_k + (1 - rho) r_k with r_k an independent unit vector. rho = 1 makes the
// semantic graph mirror feature geometry; rho = 0 makes it uninformative. Feature means
// do not depend on rho, so runs at different rho with one seed share the same data.
struct SyntheticSpec {
  std::size_t n_classes = 10;      // base (training) classes
  std::size_t novel_classes = 10;  // held-out classes for few-shot and zero-shot
  std::size_t feature_dim = 16;
  std::size_t semantic_dim = 8;
  double cluster_noise = 0.25;
  double semantic_alignment = 0.8;
  std::size_t samples_per_class = 50;
  double sigma_global = 0.5;
  double domain_shift = 0.3;  // norm of the shift added to target-domain means
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::ordered_json synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::ordered_json& j);

struct SyntheticData {
  DatasetSplit train;   // base classes
  DatasetSplit novel;   // novel classes
  DatasetSplit target;  // base classes under a fixed domain shift
  knowledge::GlobalGraph graph;  // over base then novel classes
  Matrix class_means;            // noise-free feature means, base then novel
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

struct TrainRecord {
  std::size_t step = 0;
  layer::LossBreakdown losses;
};

// Warm-up pass (EMA only, until every class has a prototype) followed by config.steps
// gradient steps on shuffled mini-batches. Deterministic in config.seed.
std::vector<TrainRecord> train_model(Model& model, const DatasetSplit& split,
                                     const std::function<void(const TrainRecord&)>& on_step = {});

struct EpisodeSpec {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t q_query = 15;
  std::size_t episodes = 600;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  static EpisodeSpec from_config(const RunConfig& config);
};

struct Episode {
  std::vector<std::size_t> classes;  // split labels chosen for this episode
  std::vector<std::size_t> support;  // split row indices, grouped by episode class
  std::vector<std::size_t> support_labels;  // 0..n_way-1
  std::vector<std::size_t> query;
  std::vector<std::size_t> query_labels;
};

Episode sample_episode(const DatasetSplit& split, const EpisodeSpec& spec, Rng& rng);

struct EvalResult {
  double accuracy = 0.0;
  double ci95 = 0.0;
  std::size_t episodes = 0;
  std::vector<double> episode_accuracies;
};

// 1.96 * sample standard deviation / sqrt(count); zero for a single value.
double ci95(std::span<const double> values);

// Nearest-prototype accuracy on projected features. Episode i uses seed spec.seed + i, so
// the aggregate does not depend on spec.workers.
EvalResult prototype_eval(const Model& model, const DatasetSplit& split, const EpisodeSpec& spec);

// Queries projected by the head are matched to the global node embeddings of the split's classes.
double zero_shot_eval(const Model& model, const knowledge::GlobalGraph& graph,
                      const DatasetSplit& novel);

// Argmax class when its probability reaches `threshold`, else `outlier_label`.
std::vector<std::size_t> open_set_classify(const Matrix& probabilities, double threshold,
                                           std::size_t outlier_label);

// Accuracy on a target split whose classes must all be training classes.
double cross_domain_eval(const Model& model, const DatasetSplit& target);

// Known target classes must be predicted exactly; unknown ones must be flagged as outliers.
double open_set_eval(const Model& model, const DatasetSplit& target, double threshold);

}  // namespace eg::harness
