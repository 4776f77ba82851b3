#include "eg/eglayer.hpp"

#include <cmath>
#include <random>

#include "eg/error.hpp"
#include "eg/protobank.hpp"

namespace eg::layer {

Matrix uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

EGLayerParams EGLayerParams::init(std::size_t n, std::size_t feature_dim, std::size_t embed_dim,
                                  int gcn_layers, Rng& rng) {
  EGLayerParams p;
  p.W_a = Matrix(n, n, 1.0);
  if (gcn_layers == 2) p.W_hidden = uniform_init(feature_dim, feature_dim, feature_dim, rng);
  p.W_gcn = uniform_init(feature_dim, embed_dim, feature_dim, rng);
  return p;
}

LPLayerParams LPLayerParams::init(std::size_t embed_dim, std::size_t feature_dim, Rng& rng) {
  return {uniform_init(embed_dim, feature_dim, feature_dim, rng)};
}

LinearHeadParams LinearHeadParams::init(std::size_t n, std::size_t feature_dim, Rng& rng) {
  return {uniform_init(n, feature_dim, feature_dim, rng)};
}

ad::Var amend_adjacency(ad::Var W_a, ad::Var local_adjacency, AmendMode mode) {
  if (W_a.rows != local_adjacency.rows || W_a.cols != local_adjacency.cols ||
      W_a.rows != W_a.cols) {
    throw DimensionError("amend_adjacency: W_a and A_s must both be n x n");
  }
  return mode == AmendMode::Hadamard ? ad::hadamard(W_a, local_adjacency)
                                     : ad::matmul(W_a, local_adjacency);
}

ad::Var normalized_adjacency(ad::Var A_l) {
  if (A_l.rows != A_l.cols) throw DimensionError("normalized_adjacency: A_l must be square");
  ad::Tape& tape = *A_l.tape;
  const Matrix& a = tape.value(A_l);
  const std::size_t m = a.rows();

  // A~ = A_l + I, d_i = sum_j A~_ij, out_ij = A~_ij / sqrt(d_i d_j)
  Matrix tilde = a;
  for (std::size_t i = 0; i < m; ++i) tilde(i, i) += 1.0;
  std::vector<double> degree(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (double v : tilde.row(i)) degree[i] += v;
    if (!(degree[i] > 0.0)) {
      throw GraphError("GCN node " + std::to_string(i) + " has non-positive degree " +
                       std::to_string(degree[i]));
    }
  }
  Matrix out(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) = tilde(i, j) / std::sqrt(degree[i] * degree[j]);

  return tape.record("normalized_adjacency", std::move(out), {A_l},
                     [tilde, degree, m](const Matrix& g) {
                       std::vector<double> r(m);
                       for (std::size_t i = 0; i < m; ++i) r[i] = 1.0 / std::sqrt(degree[i]);
                       // dL/dr_i from both the row and the column occurrence of r_i.
                       std::vector<double> dr(m, 0.0);
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < m; ++j) {
                           dr[i] += g(i, j) * tilde(i, j) * r[j];
                           dr[j] += g(i, j) * tilde(i, j) * r[i];
                         }
                       }
                       Matrix d(m, m);
                       for (std::size_t k = 0; k < m; ++k) {
                         const double dd = dr[k] * (-0.5) * r[k] / degree[k];
                         for (std::size_t l = 0; l < m; ++l) d(k, l) = g(k, l) * r[k] * r[l] + dd;
                       }
                       return std::vector<Matrix>{std::move(d)};
                     });
}

ad::Var gcn_aggregate(ad::Var Z_l, ad::Var A_l, ad::Var W) {
  if (A_l.rows != Z_l.rows) {
    throw DimensionError("gcn_aggregate: A_l has " + std::to_string(A_l.rows) + " rows, Z_l has " +
                         std::to_string(Z_l.rows));
  }
  return ad::matmul(ad::matmul(normalized_adjacency(A_l), Z_l), W);
}

ad::Var cosine_softmax(ad::Var projected, ad::Var class_embeddings) {
  return ad::row_softmax(ad::cosine_sim(projected, class_embeddings));
}

ad::Var cross_entropy(ad::Var probabilities, std::span<const std::size_t> labels) {
  for (std::size_t y : labels) {
    if (y >= probabilities.cols) {
      throw DataError("cross_entropy: label " + std::to_string(y) + " out of range for " +
                      std::to_string(probabilities.cols) + " classes");
    }
  }
  return ad::scale(ad::mean(ad::log(ad::pick(probabilities, labels))), -1.0);
}

namespace {

void require_soft_labels(const Matrix& a) {
  for (double v : a.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DataError("global adjacency entry " + std::to_string(v) + " lies outside [0, 1]");
    }
  }
}

void require_same_square(ad::Var a, ad::Var b, const char* op) {
  if (a.rows != b.rows || a.cols != b.cols || a.rows != a.cols) {
    throw DimensionError(std::string(op) + ": expects two n x n matrices");
  }
}

}  // namespace

ad::Var alignment_loss(ad::Var global_adjacency, ad::Var amended) {
  require_same_square(global_adjacency, amended, "alignment_loss");
  ad::Tape& tape = *amended.tape;
  const Matrix& a = tape.value(global_adjacency);
  require_soft_labels(a);
  Matrix one_minus_a(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) one_minus_a.values()[i] = 1.0 - a.values()[i];
  // log(1 - sigmoid(x)) = log_sigmoid(-x)
  const ad::Var pos = ad::hadamard(global_adjacency, ad::log_sigmoid(amended));
  const ad::Var neg = ad::hadamard(tape.leaf(std::move(one_minus_a)),
                                   ad::log_sigmoid(ad::scale(amended, -1.0)));
  return ad::scale(ad::mean(ad::add(pos, neg)), -1.0);
}

ad::Var cosine_regularizer(ad::Var aggregated_prototypes) {
  return ad::frobenius_norm(ad::cosine_sim(aggregated_prototypes, aggregated_prototypes));
}

ad::Var l1_adjacency_loss(ad::Var global_adjacency, ad::Var amended) {
  require_same_square(global_adjacency, amended, "l1_adjacency_loss");
  require_soft_labels(amended.tape->value(global_adjacency));
  return ad::mean(ad::abs(ad::subtract(global_adjacency, amended)));
}

ad::Var l2_adjacency_loss(ad::Var global_adjacency, ad::Var amended) {
  require_same_square(global_adjacency, amended, "l2_adjacency_loss");
  require_soft_labels(amended.tape->value(global_adjacency));
  const ad::Var diff = ad::subtract(global_adjacency, amended);
  return ad::mean(ad::hadamard(diff, diff));
}

ad::Var l1_cosine_regularizer(ad::Var aggregated_prototypes) {
  return ad::sum(ad::abs(ad::cosine_sim(aggregated_prototypes, aggregated_prototypes)));
}

AblationLosses ablation_losses(ad::Var global_adjacency, ad::Var amended,
                               ad::Var aggregated_prototypes) {
  return {l1_adjacency_loss(global_adjacency, amended),
          l2_adjacency_loss(global_adjacency, amended),
          l1_cosine_regularizer(aggregated_prototypes)};
}

double total_loss(double l_sup, double l_a, double l_reg, const LossWeights& weights) {
  if (weights.alpha1 < 0 || weights.alpha2 < 0) throw ParameterError("loss weights must be >= 0");
  return l_sup + weights.alpha1 * l_a + weights.alpha2 * l_reg;
}

ad::Var total_loss(ad::Var l_sup, ad::Var l_a, ad::Var l_reg, const LossWeights& weights) {
  if (weights.alpha1 < 0 || weights.alpha2 < 0) throw ParameterError("loss weights must be >= 0");
  return ad::add(ad::add(l_sup, ad::scale(l_a, weights.alpha1)), ad::scale(l_reg, weights.alpha2));
}

ad::Var lp_forward(ad::Var W_p, ad::Var X, ad::Var class_embeddings) {
  return cosine_softmax(ad::matmul(X, ad::transpose(W_p)), class_embeddings);
}

ad::Var linear_forward(ad::Var W, ad::Var X) {
  return ad::row_softmax(ad::matmul(X, ad::transpose(W)));
}

LayerOptions LayerOptions::from_config(const RunConfig& config) {
  LayerOptions o;
  o.sigma_local = config.sigma_local;
  o.gcn_layers = config.gcn_layers;
  o.activation = config.activation;
  o.adjacency_loss = config.adjacency_loss;
  o.regularizer = config.regularizer;
  o.amend_mode = config.amend_mode;
  o.weights = {config.alpha1, config.alpha2};
  return o;
}

ForwardGraph eglayer_forward(ad::Tape& tape, const ParamVars& params, const LayerInputs& inputs,
                             const LayerOptions& options) {
  const std::size_t n = inputs.prototypes.rows();
  if (inputs.local_adjacency.rows() != n || inputs.global_adjacency.rows() != n ||
      inputs.class_embeddings.rows() != n) {
    throw DimensionError("eglayer_forward: prototypes, adjacencies and class embeddings disagree on n");
  }
  if (options.gcn_layers == 2 && !params.W_hidden) {
    throw ContractError("eglayer_forward: 2-layer aggregation needs a hidden weight");
  }

  ForwardGraph fg;
  fg.prototypes = tape.leaf(inputs.prototypes);
  fg.queries = tape.leaf(inputs.queries);
  const ad::Var frozen = ad::stop_gradient(fg.prototypes);
  const ad::Var local = tape.leaf(inputs.local_adjacency);
  fg.amended = amend_adjacency(params.W_a, local, options.amend_mode);

  const auto assembly = protobank::assemble_local(frozen, fg.queries, fg.amended, options.sigma_local);
  const ad::Var propagate = normalized_adjacency(assembly.A_l);
  const ad::Var mixed = ad::matmul(propagate, assembly.Z_l);
  if (options.gcn_layers == 2) {
    ad::Var hidden = ad::matmul(mixed, *params.W_hidden);
    if (options.activation == Activation::Rectified) hidden = ad::relu(hidden);
    fg.aggregated = ad::matmul(ad::matmul(propagate, hidden), params.W_gcn);
  } else {
    fg.aggregated = ad::matmul(mixed, params.W_gcn);
  }
  fg.aggregated_prototypes = ad::slice_rows(fg.aggregated, 0, n);

  const ad::Var Z = tape.leaf(inputs.class_embeddings);
  if (assembly.q > 0) {
    fg.projected_queries = ad::slice_rows(fg.aggregated, n, assembly.q);
    fg.probabilities = cosine_softmax(*fg.projected_queries, Z);
  }
  if (inputs.labels.empty()) return fg;
  if (!fg.probabilities || inputs.labels.size() != assembly.q) {
    throw DimensionError("eglayer_forward: need exactly one label per query");
  }

  fg.l_sup = cross_entropy(*fg.probabilities, inputs.labels);
  const ad::Var A = tape.leaf(inputs.global_adjacency);
  switch (options.adjacency_loss) {
    case AdjacencyLoss::BCE:
      fg.l_a = alignment_loss(A, fg.amended);
      break;
    case AdjacencyLoss::L1:
      fg.l_a = l1_adjacency_loss(A, fg.amended);
      break;
    case AdjacencyLoss::L2:
      fg.l_a = l2_adjacency_loss(A, fg.amended);
      break;
  }
  switch (options.regularizer) {
    case Regularizer::L2:
      fg.l_reg = cosine_regularizer(fg.aggregated_prototypes);
      break;
    case Regularizer::L1:
      fg.l_reg = l1_cosine_regularizer(fg.aggregated_prototypes);
      break;
    case Regularizer::None:
      fg.l_reg = tape.leaf(Matrix(1, 1, 0.0));
      break;
  }
  fg.loss = total_loss(*fg.l_sup, *fg.l_a, *fg.l_reg, options.weights);
  return fg;
}

}  // namespace eg::layer

namespace eg::layer {

namespace {

void descend(Matrix& param, const Matrix& grad, double lr) {
  auto p = param.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
}

void require_finite(double loss, const Matrix& grad) {
  if (!std::isfinite(loss)) throw NumericError("training step produced a non-finite loss");
  if (!grad.all_finite()) throw NumericError("training step produced a non-finite gradient");
}

}  // namespace

StepOutcome train_step(protobank::PrototypeBank& bank, EGLayerParams& params, const Matrix& X,
                       std::span<const std::size_t> labels, const Matrix& class_embeddings,
                       const Matrix& global_adjacency, const RunConfig& config) {
  if (X.rows() == 0) throw DataError("train_step: empty batch");
  bank.ema_update(protobank::batch_class_means(X, labels, bank.size()));
  if (!bank.warmed_up()) return {{}, true};

  const Matrix local = bank.local_adjacency();
  ad::Tape tape;
  ParamVars vars{tape.leaf(params.W_a), tape.leaf(params.W_gcn), std::nullopt};
  if (config.gcn_layers == 2) vars.W_hidden = tape.leaf(params.W_hidden);
  const LayerInputs inputs{bank.prototypes(), local, X, labels, class_embeddings, global_adjacency};
  const ForwardGraph fg = eglayer_forward(tape, vars, inputs, LayerOptions::from_config(config));

  StepOutcome out;
  out.losses = {tape.scalar(*fg.loss), tape.scalar(*fg.l_sup), tape.scalar(*fg.l_a),
                tape.scalar(*fg.l_reg)};
  const ad::Gradients grads = tape.backward(*fg.loss);
  require_finite(out.losses.total, grads[vars.W_a]);
  require_finite(out.losses.total, grads[vars.W_gcn]);
  if (vars.W_hidden) require_finite(out.losses.total, grads[*vars.W_hidden]);

  descend(params.W_a, grads[vars.W_a], config.lr);
  descend(params.W_gcn, grads[vars.W_gcn], config.lr);
  if (vars.W_hidden) descend(params.W_hidden, grads[*vars.W_hidden], config.lr);
  return out;
}

LossBreakdown lp_train_step(LPLayerParams& params, const Matrix& X,
                            std::span<const std::size_t> labels, const Matrix& class_embeddings,
                            double lr) {
  ad::Tape tape;
  const ad::Var W = tape.leaf(params.W_p);
  const ad::Var probs = lp_forward(W, tape.leaf(X), tape.leaf(class_embeddings));
  const ad::Var loss = cross_entropy(probs, labels);
  const double value = tape.scalar(loss);
  const ad::Gradients grads = tape.backward(loss);
  require_finite(value, grads[W]);
  descend(params.W_p, grads[W], lr);
  return {value, value, 0.0, 0.0};
}

LossBreakdown linear_train_step(LinearHeadParams& params, const Matrix& X,
                                std::span<const std::size_t> labels, double lr) {
  ad::Tape tape;
  const ad::Var W = tape.leaf(params.W);
  const ad::Var loss = cross_entropy(linear_forward(W, tape.leaf(X)), labels);
  const double value = tape.scalar(loss);
  const ad::Gradients grads = tape.backward(loss);
  require_finite(value, grads[W]);
  descend(params.W, grads[W], lr);
  return {value, value, 0.0, 0.0};
}

}  // namespace eg::layer
