#pragma once

// The epistemic graph layer: amended local adjacency, GCN aggregation over prototypes and
// queries, cosine-softmax scoring against global node embeddings, and the loss terms that tie
// the local graph to the global one. Also the two baselines it replaces.

#include <cstddef>
#include <optional>
#include <span>

#include "eg/config.hpp"
#include "eg/matrix.hpp"
#include "eg/protobank.hpp"
#include "eg/tape.hpp"

namespace eg::layer {

struct EGLayerParams {
  Matrix W_a;       // n x n adjacency amplifier, starts at all ones
  Matrix W_gcn;     // D x d (output layer)
  Matrix W_hidden;  // D x D, only for the 2-layer variant; empty otherwise

  static EGLayerParams init(std::size_t n, std::size_t feature_dim, std::size_t embed_dim,
                            int gcn_layers, Rng& rng);
};

struct LPLayerParams {
  Matrix W_p;  // d x D
  static LPLayerParams init(std::size_t embed_dim, std::size_t feature_dim, Rng& rng);
};

struct LinearHeadParams {
  Matrix W;  // n x D, no bias
  static LinearHeadParams init(std::size_t n, std::size_t feature_dim, Rng& rng);
};

struct LossWeights {
  double alpha1 = 1.0;
  double alpha2 = 0.01;
};

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Matrix uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng);

ad::Var amend_adjacency(ad::Var W_a, ad::Var local_adjacency, AmendMode mode = AmendMode::Hadamard);

// D^-1/2 (A + I) D^-1/2. Throws GraphError when a node degree is not positive.
ad::Var normalized_adjacency(ad::Var A_l);

// One propagation step with identity activation: normalized(A_l) Z_l W.
ad::Var gcn_aggregate(ad::Var Z_l, ad::Var A_l, ad::Var W);

// Row-stochastic softmax over cosine similarities to the class embeddings.
ad::Var cosine_softmax(ad::Var projected, ad::Var class_embeddings);

// Mean of -log p[label] over rows, log clamped at 1e-300. Out-of-range labels throw DataError.
ad::Var cross_entropy(ad::Var probabilities, std::span<const std::size_t> labels);

// Soft-label binary cross-entropy between the global adjacency (targets in [0,1]) and the
// sigmoid of the amended local adjacency, averaged over all n^2 entries.
ad::Var alignment_loss(ad::Var global_adjacency, ad::Var amended);

// Frobenius norm of the pairwise cosine-similarity matrix of the aggregated prototypes.
ad::Var cosine_regularizer(ad::Var aggregated_prototypes);

ad::Var l1_adjacency_loss(ad::Var global_adjacency, ad::Var amended);
ad::Var l2_adjacency_loss(ad::Var global_adjacency, ad::Var amended);
ad::Var l1_cosine_regularizer(ad::Var aggregated_prototypes);

struct AblationLosses {
  ad::Var l1_adj;  // mean |a - a'|
  ad::Var l2_adj;  // mean (a - a')^2
  ad::Var l_reg1;  // sum |c_ij|
};
AblationLosses ablation_losses(ad::Var global_adjacency, ad::Var amended,
                               ad::Var aggregated_prototypes);

double total_loss(double l_sup, double l_a, double l_reg, const LossWeights& weights);
ad::Var total_loss(ad::Var l_sup, ad::Var l_a, ad::Var l_reg, const LossWeights& weights);

// Linear-projection baseline: cosine_softmax(X W_p^T, Z).
ad::Var lp_forward(ad::Var W_p, ad::Var X, ad::Var class_embeddings);

// Plain classifier: row_softmax(X W^T).
ad::Var linear_forward(ad::Var W, ad::Var X);

struct LayerOptions {
  double sigma_local = 0.05;
  int gcn_layers = 1;
  Activation activation = Activation::Rectified;
  AdjacencyLoss adjacency_loss = AdjacencyLoss::BCE;
  Regularizer regularizer = Regularizer::L2;
  AmendMode amend_mode = AmendMode::Hadamard;
  LossWeights weights;

  static LayerOptions from_config(const RunConfig& config);
};

struct LayerInputs {
  const Matrix& prototypes;        // S, n x D
  const Matrix& local_adjacency;   // A_s, n x n, fixed within a step
  const Matrix& queries;           // X, q x D
  std::span<const std::size_t> labels;  // may be empty when no loss is needed
  const Matrix& class_embeddings;  // Z, n x d
  const Matrix& global_adjacency;  // A, n x n
};

struct ParamVars {
  ad::Var W_a;
  ad::Var W_gcn;
  std::optional<ad::Var> W_hidden;
};

struct ForwardGraph {
  ad::Var prototypes;  // leaf for S; its gradient is zero by construction
  ad::Var queries;     // leaf for X
  ad::Var amended;
  ad::Var aggregated;  // (n + q) x d
  ad::Var aggregated_prototypes;
  std::optional<ad::Var> projected_queries;  // absent when there are no queries
  std::optional<ad::Var> probabilities;
  std::optional<ad::Var> l_sup;
  std::optional<ad::Var> l_a;
  std::optional<ad::Var> l_reg;
  std::optional<ad::Var> loss;
};

// Records the full layer on `tape`. Losses are built only when labels are supplied.
ForwardGraph eglayer_forward(ad::Tape& tape, const ParamVars& params, const LayerInputs& inputs,
                             const LayerOptions& options);

struct LossBreakdown {
  double total = 0.0;
  double sup = 0.0;
  double align = 0.0;
  double reg = 0.0;
};

struct StepOutcome {
  LossBreakdown losses;
  bool warmup = false;  // bank still cold: only the EMA update ran
};

// One training iteration, in order: batch means and EMA write to the bank, local adjacency
// recomputed and frozen, taped forward with every loss term, backward, and a gradient-descent
// update of W_a / W_gcn (and W_hidden). A non-finite loss throws NumericError before any
// parameter is touched.
StepOutcome train_step(protobank::PrototypeBank& bank, EGLayerParams& params, const Matrix& X,
                       std::span<const std::size_t> labels, const Matrix& class_embeddings,
                       const Matrix& global_adjacency, const RunConfig& config);

// Cross-entropy gradient steps for the baselines.
LossBreakdown lp_train_step(LPLayerParams& params, const Matrix& X,
                            std::span<const std::size_t> labels, const Matrix& class_embeddings,
                            double lr);
LossBreakdown linear_train_step(LinearHeadParams& params, const Matrix& X,
                                std::span<const std::size_t> labels, double lr);

}  // namespace eg::layer
