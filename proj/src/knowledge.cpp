#include "eg/knowledge.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "eg/error.hpp"

namespace eg::knowledge {

namespace {

double parse_double(std::string_view text, std::size_t line_no) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw FormatError("embedding file line " + std::to_string(line_no) + ": bad number '" +
                      std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

void require_square(const Matrix& A, const char* what) {
  if (A.rows() != A.cols()) {
    throw DimensionError(std::string(what) + ": adjacency must be square, got " + shape_string(A));
  }
}

}  // namespace

std::vector<std::string> tokenize_class_name(std::string_view name) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : name) {
    if (c == '_' || std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

ClassEmbeddings load_embeddings(std::istream& in, const std::vector<std::string>& class_names) {
  std::set<std::string> wanted;
  std::vector<std::vector<std::string>> class_tokens;
  for (const auto& name : class_names) {
    auto tokens = tokenize_class_name(name);
    if (tokens.empty()) throw DataError("class name '" + name + "' has no tokens");
    wanted.insert(tokens.begin(), tokens.end());
    class_tokens.push_back(std::move(tokens));
  }

  ClassEmbeddings out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = split_ws(line);
    if (fields.empty()) continue;
    const std::size_t d = fields.size() - 1;
    if (d == 0) throw FormatError("embedding file line " + std::to_string(line_no) + ": no values");
    if (out.table.dim == 0) {
      out.table.dim = d;
    } else if (d != out.table.dim) {
      throw FormatError("embedding file line " + std::to_string(line_no) + ": width " +
                        std::to_string(d) + " differs from " + std::to_string(out.table.dim));
    }
    std::string token(fields[0]);
    if (!wanted.contains(token)) continue;
    std::vector<double> vec(d);
    for (std::size_t k = 0; k < d; ++k) vec[k] = parse_double(fields[k + 1], line_no);
    out.table.entries.insert_or_assign(std::move(token), std::move(vec));
  }

  out.Z = Matrix(class_names.size(), out.table.dim);
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const auto& tokens = class_tokens[c];
    for (const auto& tok : tokens) {
      auto it = out.table.entries.find(tok);
      if (it == out.table.entries.end()) {
        throw DataError("class '" + class_names[c] + "': token '" + tok +
                        "' not found in embedding file");
      }
      for (std::size_t k = 0; k < out.table.dim; ++k) out.Z(c, k) += it->second[k];
    }
    for (double& v : out.Z.row(c)) v /= static_cast<double>(tokens.size());
  }
  return out;
}

ClassEmbeddings load_embeddings(const std::filesystem::path& path,
                                const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path.string());
  return load_embeddings(in, class_names);
}

std::size_t GlobalGraph::index_of(const std::string& name) const {
  auto it = std::find(class_names.begin(), class_names.end(), name);
  if (it == class_names.end()) throw DataError("class '" + name + "' is not in the global graph");
  return static_cast<std::size_t>(it - class_names.begin());
}

GlobalGraph GlobalGraph::subgraph(const std::vector<std::string>& names) const {
  std::vector<std::size_t> idx;
  idx.reserve(names.size());
  for (const auto& n : names) idx.push_back(index_of(n));
  GlobalGraph out;
  out.class_names = names;
  out.sigma_global = sigma_global;
  out.Z = select_rows(Z, idx);
  out.A = Matrix(idx.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) out.A(i, j) = A(idx[i], idx[j]);
  return out;
}

GlobalGraph build_global_graph(std::vector<std::string> class_names, Matrix Z,
                               double sigma_global) {
  if (class_names.size() != Z.rows()) {
    throw DimensionError("global graph: " + std::to_string(class_names.size()) +
                         " class names for " + std::to_string(Z.rows()) + " embedding rows");
  }
  if (!Z.all_finite()) throw NumericError("global graph: non-finite node embedding");
  GlobalGraph g;
  g.A = gaussian_kernel(Z, Z, sigma_global);
  g.class_names = std::move(class_names);
  g.Z = std::move(Z);
  g.sigma_global = sigma_global;
  return g;
}

double commonality(const std::vector<std::string>& source, const std::vector<std::string>& target) {
  const std::set<std::string> s(source.begin(), source.end());
  const std::set<std::string> t(target.begin(), target.end());
  if (s.empty() || t.empty()) throw ParameterError("commonality: label sets must be nonempty");
  std::size_t inter = 0;
  for (const auto& c : s) inter += t.contains(c) ? 1 : 0;
  const std::size_t uni = s.size() + t.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Edge> top_k_edges(const Matrix& A, const std::vector<std::string>& class_names,
                              std::size_t k) {
  require_square(A, "top_k_edges");
  const std::size_t n = A.rows();
  if (class_names.size() != n) throw DimensionError("top_k_edges: label count differs from n");
  const std::size_t pairs = n * (n - (n > 0 ? 1 : 0)) / 2;
  if (k > pairs) {
    throw ParameterError("top_k_edges: k = " + std::to_string(k) + " exceeds the " +
                         std::to_string(pairs) + " available edges");
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(A(i, j) - A(j, i)) > 1e-12) {
        throw ParameterError("top_k_edges: adjacency is not symmetric");
      }

  struct Pair {
    std::size_t i, j;
    double w;
  };
  std::vector<Pair> all;
  all.reserve(pairs);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) all.push_back({i, j, A(i, j)});
  auto heavier = [](const Pair& a, const Pair& b) {
    if (a.w != b.w) return a.w > b.w;
    return std::tie(a.i, a.j) < std::tie(b.i, b.j);
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), heavier);

  std::vector<Edge> edges;
  edges.reserve(k);
  for (std::size_t e = 0; e < k; ++e) {
    const auto& p = all[e];
    edges.push_back({p.i, p.j, class_names[p.i], class_names[p.j], p.w});
  }
  return edges;
}

std::string edges_to_json(const std::vector<std::string>& class_names,
                          const std::vector<Edge>& edges) {
  nlohmann::ordered_json j;
  j["nodes"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    j["nodes"].push_back({{"id", i}, {"label", class_names[i]}});
  }
  j["edges"] = nlohmann::ordered_json::array();
  for (const auto& e : edges) {
    j["edges"].push_back({{"src", e.src}, {"dst", e.dst}, {"weight", e.weight}});
  }
  return j.dump(2) + "\n";
}

std::string edges_to_dot(const std::vector<std::string>& class_names,
                         const std::vector<Edge>& edges) {
  constexpr double kPenWidthPerUnitWeight = 5.0;
  std::ostringstream out;
  out << "graph G {\n";
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    std::string label;
    for (char c : class_names[i]) {
      if (c == '"' || c == '\\') label.push_back('\\');
      label.push_back(c);
    }
    out << "  n" << i << " [label=\"" << label << "\"];\n";
  }
  char buf[96];
  for (const auto& e : edges) {
    std::snprintf(buf, sizeof(buf), "  n%zu -- n%zu [weight=%.9g, penwidth=%.6g];\n", e.src, e.dst,
                  e.weight, kPenWidthPerUnitWeight * e.weight);
    out << buf;
  }
  out << "}\n";
  return out.str();
}

nlohmann::ordered_json graph_to_json(const GlobalGraph& graph) {
  nlohmann::ordered_json j;
  j["classes"] = graph.class_names;
  j["sigma_global"] = graph.sigma_global;
  j["Z"] = graph.Z.to_rows();
  j["A"] = graph.A.to_rows();
  return j;
}

GlobalGraph graph_from_json(const nlohmann::ordered_json& j) {
  GlobalGraph g;
  try {
    g.class_names = j.at("classes").get<std::vector<std::string>>();
    g.sigma_global = j.at("sigma_global").get<double>();
    g.Z = Matrix::from_rows(j.at("Z").get<std::vector<std::vector<double>>>());
    g.A = Matrix::from_rows(j.at("A").get<std::vector<std::vector<double>>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("graph file: ") + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(std::string("graph file: ") + e.what());
  }
  const std::size_t n = g.class_names.size();
  if (g.Z.rows() != n || g.A.rows() != n || g.A.cols() != n) {
    throw FormatError("graph file: Z/A shapes do not match the class list");
  }
  return g;
}

}  // namespace eg::knowledge
