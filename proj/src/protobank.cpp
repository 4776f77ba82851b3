#include "eg/protobank.hpp"

#include <algorithm>
#include <cmath>

#include "eg/error.hpp"

namespace eg::protobank {

ClassMeans batch_class_means(const Matrix& X, std::span<const std::size_t> labels,
                             std::size_t n_classes) {
  if (labels.size() != X.rows()) {
    throw DimensionError("batch_class_means: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(X.rows()) + " rows");
  }
  ClassMeans sums;
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t k = labels[i];
    if (k >= n_classes) {
      throw DataError("batch_class_means: label " + std::to_string(k) + " is not a known class");
    }
    auto [it, inserted] = sums.try_emplace(k, std::vector<double>(X.cols(), 0.0));
    auto row = X.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) it->second[j] += row[j];
    ++counts[k];
  }
  for (auto& [k, v] : sums)
    for (double& e : v) e /= static_cast<double>(counts[k]);
  return sums;
}

PrototypeBank::PrototypeBank(std::vector<std::string> class_names, std::size_t feature_dim,
                             double beta, double sigma_local)
    : class_names_(std::move(class_names)),
      S_(class_names_.size(), feature_dim),
      seen_(class_names_.size(), false),
      beta_(beta),
      sigma_local_(sigma_local) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw ParameterError("beta must lie in [0, 1], got " + std::to_string(beta));
  }
  if (!(sigma_local > 0.0) || !std::isfinite(sigma_local)) {
    throw ParameterError("sigma_local must be positive, got " + std::to_string(sigma_local));
  }
}

bool PrototypeBank::warmed_up() const noexcept {
  return std::all_of(seen_.begin(), seen_.end(), [](bool s) { return s; });
}

void PrototypeBank::ema_update(const ClassMeans& means) {
  Matrix next = S_;
  for (const auto& [k, mean] : means) {
    if (k >= size()) throw DataError("ema_update: class " + std::to_string(k) + " out of range");
    if (mean.size() != feature_dim()) throw DimensionError("ema_update: mean width mismatch");
    auto row = next.row(k);
    if (!seen_[k]) {
      std::copy(mean.begin(), mean.end(), row.begin());
    } else {
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = beta_ * row[j] + (1.0 - beta_) * mean[j];
    }
  }
  if (!next.all_finite()) throw NumericError("ema_update: non-finite prototype");
  S_ = std::move(next);
  for (const auto& entry : means) seen_[entry.first] = true;
}

void PrototypeBank::require_warm(const char* op) const {
  for (std::size_t k = 0; k < size(); ++k) {
    if (!seen_[k]) {
      throw StateError(std::string(op) + ": prototype for class '" + class_names_[k] +
                       "' has not been initialized");
    }
  }
}

Matrix PrototypeBank::local_adjacency() const {
  require_warm("local_adjacency");
  return gaussian_kernel(S_, S_, sigma_local_);
}

Matrix PrototypeBank::query_adjacency(const Matrix& X) const {
  require_warm("query_adjacency");
  if (X.cols() != feature_dim() && X.rows() != 0) {
    throw DimensionError("query_adjacency: query width " + std::to_string(X.cols()) +
                         " differs from prototype width " + std::to_string(feature_dim()));
  }
  if (X.rows() == 0) return Matrix(size(), 0);
  return gaussian_kernel(S_, X, sigma_local_);
}

nlohmann::ordered_json PrototypeBank::to_json() const {
  nlohmann::ordered_json j;
  j["beta"] = beta_;
  j["sigma_local"] = sigma_local_;
  j["classes"] = class_names_;
  j["S"] = S_.to_rows();
  j["seen"] = std::vector<bool>(seen_.begin(), seen_.end());
  return j;
}

PrototypeBank PrototypeBank::from_json(const nlohmann::ordered_json& j) {
  try {
    auto classes = j.at("classes").get<std::vector<std::string>>();
    Matrix S = Matrix::from_rows(j.at("S").get<std::vector<std::vector<double>>>());
    auto seen = j.at("seen").get<std::vector<bool>>();
    if (S.rows() != classes.size() || seen.size() != classes.size()) {
      throw FormatError("bank checkpoint: S/seen do not match the class list");
    }
    PrototypeBank bank(std::move(classes), S.cols(), j.at("beta").get<double>(),
                       j.at("sigma_local").get<double>());
    bank.S_ = std::move(S);
    bank.seen_ = std::move(seen);
    return bank;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bank checkpoint: ") + e.what());
  }
}

LocalAssembly assemble_local(ad::Var prototypes, ad::Var queries, ad::Var amended_adjacency,
                             double sigma_local) {
  const std::size_t n = prototypes.rows;
  if (amended_adjacency.rows != n || amended_adjacency.cols != n) {
    throw DimensionError("assemble_local: amended adjacency must be " + std::to_string(n) + "x" +
                         std::to_string(n));
  }
  const std::size_t q = queries.rows;
  if (q == 0) return {prototypes, amended_adjacency, 0};
  if (queries.cols != prototypes.cols) {
    throw DimensionError("assemble_local: query width " + std::to_string(queries.cols) +
                         " differs from prototype width " + std::to_string(prototypes.cols));
  }
  ad::Tape& tape = *prototypes.tape;
  const ad::Var axs = ad::gaussian_kernel(prototypes, queries, sigma_local);
  const ad::Var eye = tape.leaf(Matrix::identity(q));
  const ad::Var top = ad::concat_cols(amended_adjacency, axs);
  const ad::Var bottom = ad::concat_cols(ad::transpose(axs), eye);
  return {ad::concat_rows(prototypes, queries), ad::concat_rows(top, bottom), q};
}

}  // namespace eg::protobank
