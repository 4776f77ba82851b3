#include "eg/model.hpp"

#include "eg/error.hpp"

namespace eg {

namespace {

Matrix matrix_field(const nlohmann::ordered_json& j, const char* key) {
  return Matrix::from_rows(j.at(key).get<std::vector<std::vector<double>>>());
}

}  // namespace

Model Model::create(const RunConfig& config, std::vector<std::string> class_names,
                    std::size_t feature_dim, const knowledge::GlobalGraph* graph) {
  config.validate();
  if (class_names.empty()) throw DataError("model needs at least one class");
  if (feature_dim == 0) throw DataError("model needs a positive feature width");
  Model m;
  m.config_ = config;
  m.class_names_ = std::move(class_names);
  m.feature_dim_ = feature_dim;
  const std::size_t n = m.class_names_.size();
  Rng rng = substream(config.seed, "init");

  if (config.head == HeadKind::Linear) {
    m.linear_ = layer::LinearHeadParams::init(n, feature_dim, rng);
    return m;
  }
  if (graph == nullptr) throw DataError("the " + std::string(to_string(config.head)) +
                                        " head needs a global knowledge graph");
  const knowledge::GlobalGraph sub = graph->subgraph(m.class_names_);
  m.class_embeddings_ = sub.Z;
  m.global_adjacency_ = sub.A;
  const std::size_t d = sub.dim();

  if (config.head == HeadKind::LPLayer) {
    // Same draw as the eglayer projection, transposed, so the two heads start from one map.
    m.lp_.W_p = transpose(layer::uniform_init(feature_dim, d, feature_dim, rng));
  } else {
    m.eg_ = layer::EGLayerParams::init(n, feature_dim, d, config.gcn_layers, rng);
    m.bank_.emplace(m.class_names_, feature_dim, config.beta, config.sigma_local);
  }
  return m;
}

void Model::observe(const Matrix& X, std::span<const std::size_t> labels) {
  if (bank_) bank_->ema_update(protobank::batch_class_means(X, labels, bank_->size()));
}

bool Model::ready() const noexcept { return !bank_ || bank_->warmed_up(); }

layer::StepOutcome Model::train_step(const Matrix& X, std::span<const std::size_t> labels) {
  if (X.cols() != feature_dim_) {
    throw DimensionError("batch width " + std::to_string(X.cols()) + " differs from model width " +
                         std::to_string(feature_dim_));
  }
  switch (head()) {
    case HeadKind::EGLayer:
      return layer::train_step(*bank_, eg_, X, labels, class_embeddings_, global_adjacency_,
                               config_);
    case HeadKind::LPLayer:
      return {layer::lp_train_step(lp_, X, labels, class_embeddings_, config_.lr), false};
    case HeadKind::Linear:
      return {layer::linear_train_step(linear_, X, labels, config_.lr), false};
  }
  throw ContractError("unknown head");
}

layer::ForwardGraph Model::forward(ad::Tape& tape, const Matrix& local, const Matrix& X) const {
  layer::ParamVars vars{tape.leaf(eg_.W_a), tape.leaf(eg_.W_gcn), std::nullopt};
  if (config_.gcn_layers == 2) vars.W_hidden = tape.leaf(eg_.W_hidden);
  const layer::LayerInputs inputs{bank_->prototypes(), local, X, {}, class_embeddings_,
                                  global_adjacency_};
  return layer::eglayer_forward(tape, vars, inputs, layer::LayerOptions::from_config(config_));
}

Matrix Model::project(const Matrix& X) const {
  if (X.cols() != feature_dim_ && X.rows() != 0) {
    throw DimensionError("feature width " + std::to_string(X.cols()) + " differs from model width " +
                         std::to_string(feature_dim_));
  }
  switch (head()) {
    case HeadKind::Linear:
      return X;
    case HeadKind::LPLayer:
      return matmul(X, transpose(lp_.W_p));
    case HeadKind::EGLayer:
      break;
  }
  const Matrix local = bank().local_adjacency();
  Matrix out(X.rows(), eg_.W_gcn.cols());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    ad::Tape tape;
    Matrix query(1, X.cols());
    std::copy(X.row(i).begin(), X.row(i).end(), query.row(0).begin());
    const auto fg = forward(tape, local, query);
    const Matrix& row = tape.value(*fg.projected_queries);
    std::copy(row.row(0).begin(), row.row(0).end(), out.row(i).begin());
  }
  return out;
}

Matrix Model::predict(const Matrix& X) const {
  if (head() == HeadKind::Linear) {
    if (X.cols() != feature_dim_) throw DimensionError("feature width differs from model width");
    return row_softmax(matmul(X, transpose(linear_.W)));
  }
  return row_softmax(cosine_similarity(project(X), class_embeddings_));
}

Matrix Model::aggregated_prototypes() const {
  if (head() != HeadKind::EGLayer) throw StateError("only the eglayer head aggregates prototypes");
  const Matrix local = bank().local_adjacency();
  ad::Tape tape;
  const auto fg = forward(tape, local, Matrix(0, feature_dim_));
  return tape.value(fg.aggregated_prototypes);
}

const protobank::PrototypeBank& Model::bank() const {
  if (!bank_) throw StateError("the " + std::string(to_string(head())) + " head has no prototype bank");
  return *bank_;
}

nlohmann::ordered_json Model::to_checkpoint() const {
  nlohmann::ordered_json j;
  switch (head()) {
    case HeadKind::EGLayer:
      j["W_a"] = eg_.W_a.to_rows();
      j["W_gcn"] = eg_.W_gcn.to_rows();
      if (config_.gcn_layers == 2) j["W_hidden"] = eg_.W_hidden.to_rows();
      j["bank"] = bank_->to_json();
      break;
    case HeadKind::LPLayer:
      j["W_p"] = lp_.W_p.to_rows();
      break;
    case HeadKind::Linear:
      j["W"] = linear_.W.to_rows();
      break;
  }
  j["classes"] = class_names_;
  j["feature_dim"] = feature_dim_;
  if (head() != HeadKind::Linear) {
    j["class_embeddings"] = class_embeddings_.to_rows();
    j["global_adjacency"] = global_adjacency_.to_rows();
  }
  j["config"] = config_to_json(config_);
  return j;
}

Model Model::from_checkpoint(const nlohmann::ordered_json& j) {
  Model m;
  try {
    m.config_ = config_from_json(j.at("config"));
    m.class_names_ = j.at("classes").get<std::vector<std::string>>();
    m.feature_dim_ = j.at("feature_dim").get<std::size_t>();
    const std::size_t n = m.class_names_.size();
    if (m.head() != HeadKind::Linear) {
      m.class_embeddings_ = matrix_field(j, "class_embeddings");
      m.global_adjacency_ = matrix_field(j, "global_adjacency");
      if (m.class_embeddings_.rows() != n || m.global_adjacency_.rows() != n) {
        throw FormatError("checkpoint: class embeddings do not match the class list");
      }
    }
    switch (m.head()) {
      case HeadKind::EGLayer:
        m.eg_.W_a = matrix_field(j, "W_a");
        m.eg_.W_gcn = matrix_field(j, "W_gcn");
        if (m.config_.gcn_layers == 2) m.eg_.W_hidden = matrix_field(j, "W_hidden");
        m.bank_.emplace(protobank::PrototypeBank::from_json(j.at("bank")));
        if (m.eg_.W_a.rows() != n || m.eg_.W_gcn.rows() != m.feature_dim_ ||
            m.eg_.W_gcn.cols() != m.class_embeddings_.cols() || m.bank_->size() != n) {
          throw FormatError("checkpoint: eglayer parameter shapes are inconsistent");
        }
        break;
      case HeadKind::LPLayer:
        m.lp_.W_p = matrix_field(j, "W_p");
        if (m.lp_.W_p.cols() != m.feature_dim_) throw FormatError("checkpoint: W_p has the wrong width");
        break;
      case HeadKind::Linear:
        m.linear_.W = matrix_field(j, "W");
        if (m.linear_.W.rows() != n || m.linear_.W.cols() != m.feature_dim_) {
          throw FormatError("checkpoint: W has the wrong shape");
        }
        break;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return m;
}

}  // namespace eg
