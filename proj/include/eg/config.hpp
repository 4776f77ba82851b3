#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <json.hpp>

namespace eg {

enum class HeadKind { EGLayer, LPLayer, Linear };
enum class Activation { Identity, Rectified };
enum class AdjacencyLoss { BCE, L1, L2 };
enum class Regularizer { L2, L1, None };
enum class AmendMode { Hadamard, Matmul };

// Every hyperparameter of a run. Serialized verbatim into checkpoints and result files.
struct RunConfig {
  HeadKind head = HeadKind::EGLayer;
  double sigma_local = 0.05;
  double sigma_global = 0.05;
  double beta = 0.9;
  double alpha1 = 1.0;
  double alpha2 = 0.01;
  int gcn_layers = 1;
  Activation activation = Activation::Rectified;  // hidden layer of the 2-layer variant
  AdjacencyLoss adjacency_loss = AdjacencyLoss::BCE;
  Regularizer regularizer = Regularizer::L2;
  AmendMode amend_mode = AmendMode::Hadamard;
  double lr = 0.1;
  std::size_t steps = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double open_set_threshold = 0.5;
  std::size_t embedding_dim = 8;

  // Evaluation episodes.
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t q_query = 15;
  std::size_t episodes = 600;
  std::size_t workers = 1;

  // Graph export. export_k = 0 picks the profile default (70 for office31, else 150).
  std::string dataset_profile = "default";
  std::size_t export_k = 0;

  // Throws ParameterError naming the offending field.
  void validate() const;
  std::size_t effective_export_k() const;
};

nlohmann::ordered_json config_to_json(const RunConfig& config);
// Missing fields keep their defaults; unknown fields and bad values throw ParameterError.
RunConfig config_from_json(const nlohmann::ordered_json& j, RunConfig base = {});

std::string_view to_string(HeadKind v);
std::string_view to_string(Activation v);
std::string_view to_string(AdjacencyLoss v);
std::string_view to_string(Regularizer v);
std::string_view to_string(AmendMode v);

HeadKind parse_head(std::string_view s);

// Independent, named random streams derived from one seed ("data", "init", "episodes", ...),
// so consuming one stream never shifts another.
using Rng = std::mt19937_64;
Rng substream(std::uint64_t seed, std::string_view name);

}  // namespace eg
