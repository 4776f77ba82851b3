#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "eg/matrix.hpp"

namespace eg::harness {

// Precomputed feature vectors with class labels. Rows are unit-norm.
struct DatasetSplit {
  std::vector<std::string> class_names;
  Matrix features;  // m x D
  std::vector<std::size_t> labels;
  std::string domain_tag;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t feature_dim() const noexcept { return features.cols(); }
  std::size_t class_count() const noexcept { return class_names.size(); }
  // Row indices of every sample of `label`, in file order.
  std::vector<std::size_t> rows_of(std::size_t label) const;
};

// Parses `class,f0,...,f{D-1}` CSV. Class order is first appearance unless a manifest is
// given, in which case labels outside it are an error. Rows are l2-normalized.
DatasetSplit load_features(std::istream& in, const std::vector<std::string>* manifest = nullptr,
                           std::string domain_tag = "");
DatasetSplit load_features(const std::filesystem::path& path,
                           const std::vector<std::string>* manifest = nullptr,
                           std::string domain_tag = "");

std::vector<std::string> load_manifest(const std::filesystem::path& path);

std::string features_to_csv(const DatasetSplit& split);

}  // namespace eg::harness
