#include "eg/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "eg/error.hpp"

namespace eg::harness {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

}  // namespace

std::vector<std::size_t> DatasetSplit::rows_of(std::size_t label) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) rows.push_back(i);
  return rows;
}

DatasetSplit load_features(std::istream& in, const std::vector<std::string>* manifest,
                           std::string domain_tag) {
  DatasetSplit split;
  split.domain_tag = std::move(domain_tag);
  if (manifest != nullptr) split.class_names = *manifest;

  std::string line;
  if (!std::getline(in, line)) throw FormatError("feature file is empty");
  const auto header = split_csv(trim(line));
  if (header.size() < 2 || trim(header[0]) != "class") {
    throw FormatError("feature file line 1: header must be class,f0,...,f{D-1}");
  }
  const std::size_t D = header.size() - 1;
  for (std::size_t k = 0; k < D; ++k) {
    if (trim(header[k + 1]) != "f" + std::to_string(k)) {
      throw FormatError("feature file line 1: expected column f" + std::to_string(k));
    }
  }

  std::vector<double> data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != D + 1) {
      throw FormatError("feature file line " + std::to_string(line_no) + ": expected " +
                        std::to_string(D + 1) + " fields, got " + std::to_string(fields.size()));
    }
    const std::string label = trim(fields[0]);
    auto it = std::find(split.class_names.begin(), split.class_names.end(), label);
    if (it == split.class_names.end()) {
      if (manifest != nullptr) {
        throw FormatError("feature file line " + std::to_string(line_no) + ": class '" + label +
                          "' is not in the manifest");
      }
      split.class_names.push_back(label);
      it = split.class_names.end() - 1;
    }
    std::vector<double> row(D);
    double norm = 0.0;
    for (std::size_t k = 0; k < D; ++k) {
      const std::string f = trim(fields[k + 1]);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw FormatError("feature file line " + std::to_string(line_no) + ": field " +
                          std::to_string(k + 1) + " is not a number");
      }
      row[k] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (!(norm > kNormEpsilon)) {
      throw DegenerateVectorError("feature file line " + std::to_string(line_no) +
                                  ": zero-norm feature row cannot be normalized");
    }
    for (double v : row) data.push_back(v / norm);
    split.labels.push_back(static_cast<std::size_t>(it - split.class_names.begin()));
  }
  split.features = Matrix(split.labels.size(), D, std::move(data));
  return split;
}

DatasetSplit load_features(const std::filesystem::path& path,
                           const std::vector<std::string>* manifest, std::string domain_tag) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open feature file " + path.string());
  return load_features(in, manifest, std::move(domain_tag));
}

std::vector<std::string> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open class manifest " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    if (std::find(names.begin(), names.end(), line) != names.end()) {
      throw FormatError("class manifest lists '" + line + "' twice");
    }
    names.push_back(line);
  }
  return names;
}

std::string features_to_csv(const DatasetSplit& split) {
  std::string out = "class";
  for (std::size_t k = 0; k < split.feature_dim(); ++k) out += ",f" + std::to_string(k);
  out += "\n";
  char buf[32];
  for (std::size_t i = 0; i < split.size(); ++i) {
    out += split.class_names[split.labels[i]];
    for (double v : split.features.row(i)) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace eg::harness
