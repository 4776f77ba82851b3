#pragma once

// Local prototype graph: EMA class prototypes, their kernel adjacency, and the stacked
// prototype/query graph that the aggregation layer runs on.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eg/matrix.hpp"
#include "eg/tape.hpp"

namespace eg::protobank {

// Per-class batch means keyed by class index; classes absent from the batch are omitted.
using ClassMeans = std::map<std::size_t, std::vector<double>>;

ClassMeans batch_class_means(const Matrix& X, std::span<const std::size_t> labels,
                             std::size_t n_classes);

class PrototypeBank {
 public:
  PrototypeBank(std::vector<std::string> class_names, std::size_t feature_dim, double beta,
                double sigma_local);

  std::size_t size() const noexcept { return class_names_.size(); }
  std::size_t feature_dim() const noexcept { return S_.cols(); }
  double beta() const noexcept { return beta_; }
  double sigma_local() const noexcept { return sigma_local_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  const Matrix& prototypes() const noexcept { return S_; }
  const std::vector<bool>& seen() const noexcept { return seen_; }
  bool warmed_up() const noexcept;

  // S_k <- beta S_k + (1 - beta) mean_k for seen classes; an unseen class takes its mean as is.
  void ema_update(const ClassMeans& means);

  // n x n Gaussian-kernel adjacency of the prototypes. Throws StateError before warm-up.
  Matrix local_adjacency() const;

  // n x q kernel between prototypes and query rows.
  Matrix query_adjacency(const Matrix& X) const;

  nlohmann::ordered_json to_json() const;
  static PrototypeBank from_json(const nlohmann::ordered_json& j);

 private:
  void require_warm(const char* op) const;

  std::vector<std::string> class_names_;
  Matrix S_;
  std::vector<bool> seen_;
  double beta_;
  double sigma_local_;
};

struct LocalAssembly {
  ad::Var Z_l;  // (n + q) x D, prototypes over queries
  ad::Var A_l;  // (n + q) x (n + q) block adjacency
  std::size_t q = 0;
};

// Stacks prototypes over queries and builds [[A_s', A_xs], [A_xs^T, I]].
// `prototypes` should already be gradient-stopped; A_xs stays differentiable in the queries.
LocalAssembly assemble_local(ad::Var prototypes, ad::Var queries, ad::Var amended_adjacency,
                             double sigma_local);

}  // namespace eg::protobank
