#pragma once

// A trained classification head (EGLayer, LPLayer or plain linear) plus everything it needs
// at inference time, behind one interface the harness and CLI can drive.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eg/config.hpp"
#include "eg/eglayer.hpp"
#include "eg/knowledge.hpp"
#include "eg/matrix.hpp"
#include "eg/protobank.hpp"

namespace eg {

class Model {
 public:
  // `graph` must cover `class_names` for the eglayer and lplayer heads; linear ignores it.
  static Model create(const RunConfig& config, std::vector<std::string> class_names,
                      std::size_t feature_dim, const knowledge::GlobalGraph* graph);

  const RunConfig& config() const noexcept { return config_; }
  HeadKind head() const noexcept { return config_.head; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  bool uses_semantic_space() const noexcept { return head() != HeadKind::Linear; }
  const Matrix& class_embeddings() const noexcept { return class_embeddings_; }
  const Matrix& global_adjacency() const noexcept { return global_adjacency_; }

  // EMA-only bank update; a no-op for heads without a bank.
  void observe(const Matrix& X, std::span<const std::size_t> labels);
  bool ready() const noexcept;

  layer::StepOutcome train_step(const Matrix& X, std::span<const std::size_t> labels);

  // Maps feature rows into the space classification happens in: the aggregated query rows for
  // eglayer, X W_p^T for lplayer, and X unchanged for linear. eglayer rows are projected one
  // at a time so a query's embedding never depends on what else is in the batch.
  Matrix project(const Matrix& X) const;

  // Class probabilities over the training classes.
  Matrix predict(const Matrix& X) const;

  // Prototype rows after one aggregation pass with no queries attached (eglayer only).
  Matrix aggregated_prototypes() const;

  const protobank::PrototypeBank& bank() const;
  const layer::EGLayerParams& eg_params() const noexcept { return eg_; }
  layer::EGLayerParams& eg_params() noexcept { return eg_; }
  const layer::LPLayerParams& lp_params() const noexcept { return lp_; }
  const layer::LinearHeadParams& linear_params() const noexcept { return linear_; }

  nlohmann::ordered_json to_checkpoint() const;
  static Model from_checkpoint(const nlohmann::ordered_json& j);

 private:
  Model() = default;

  layer::ForwardGraph forward(ad::Tape& tape, const Matrix& local, const Matrix& X) const;

  RunConfig config_;
  std::vector<std::string> class_names_;
  std::size_t feature_dim_ = 0;
  Matrix class_embeddings_;  // n x d (empty for linear)
  Matrix global_adjacency_;  // n x n (empty for linear)
  std::optional<protobank::PrototypeBank> bank_;
  layer::EGLayerParams eg_;
  layer::LPLayerParams lp_;
  layer::LinearHeadParams linear_;
};

}  // namespace eg
