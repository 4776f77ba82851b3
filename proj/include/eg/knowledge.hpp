#pragma once

// The fixed global knowledge graph: class-name embeddings and their Gaussian-kernel adjacency.

#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "eg/matrix.hpp"

namespace eg::knowledge {

struct WordEmbeddingTable {
  std::size_t dim = 0;
  std::map<std::string, std::vector<double>> entries;
};

struct ClassEmbeddings {
  WordEmbeddingTable table;  // only the tokens the class names needed
  Matrix Z;                  // one row per class, in class order
};

// Lowercases and splits on whitespace and underscores: "Desk_Lamp" -> {"desk", "lamp"}.
std::vector<std::string> tokenize_class_name(std::string_view name);

// Reads `token v1 ... vd` records and averages the token vectors of each class name.
// Missing tokens throw DataError; inconsistent widths or bad numbers throw FormatError.
ClassEmbeddings load_embeddings(std::istream& in, const std::vector<std::string>& class_names);
ClassEmbeddings load_embeddings(const std::filesystem::path& path,
                                const std::vector<std::string>& class_names);

struct GlobalGraph {
  std::vector<std::string> class_names;
  Matrix Z;  // n x d node embeddings
  Matrix A;  // n x n adjacency
  double sigma_global = 0.0;

  std::size_t size() const noexcept { return class_names.size(); }
  std::size_t dim() const noexcept { return Z.cols(); }

  // Index of `name`, or throws DataError.
  std::size_t index_of(const std::string& name) const;

  // Induced subgraph over `names`, in the given order.
  GlobalGraph subgraph(const std::vector<std::string>& names) const;
};

// A(i,j) = exp(-||z_i - z_j||^2 / (2 sigma^2)) on the raw embeddings.
GlobalGraph build_global_graph(std::vector<std::string> class_names, Matrix Z,
                               double sigma_global);

// |source ∩ target| / |source ∪ target| over class labels.
double commonality(const std::vector<std::string>& source, const std::vector<std::string>& target);

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::string src_label;
  std::string dst_label;
  double weight = 0.0;
};

// The k heaviest off-diagonal upper-triangle entries, heaviest first; equal weights keep
// (i, j) lexicographic order.
std::vector<Edge> top_k_edges(const Matrix& A, const std::vector<std::string>& class_names,
                              std::size_t k);

std::string edges_to_json(const std::vector<std::string>& class_names,
                          const std::vector<Edge>& edges);
// Undirected DOT graph; edge pen width is proportional to weight.
std::string edges_to_dot(const std::vector<std::string>& class_names,
                         const std::vector<Edge>& edges);

nlohmann::ordered_json graph_to_json(const GlobalGraph& graph);
GlobalGraph graph_from_json(const nlohmann::ordered_json& j);

}  // namespace eg::knowledge
