#pragma once

// Feature vectors, labeled datasets, and the on-disk feature formats.
//
// A Dataset keeps its vectors as the columns of a dim x count float matrix,
// the same precision as the binary file. Distances are accumulated in double.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cbcl/error.hpp"

namespace cbcl {

using ClassId = std::uint32_t;
using FeatureVector = Eigen::VectorXd;
using FeatureMatrix = Eigen::MatrixXf;

template <typename DerivedA, typename DerivedB>
double euclidean_distance(const Eigen::MatrixBase<DerivedA>& a,
                          const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) {
    throw DataError(DataError::Kind::kDimMismatch,
                    "euclidean_distance: dimension mismatch (" + std::to_string(a.size()) +
                        " vs " + std::to_string(b.size()) + ")");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.coeff(i)) - static_cast<double>(b.coeff(i));
    sum += d * d;
  }
  return std::sqrt(sum);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

// Dense id <-> name table. Ids are 0..size()-1.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::vector<std::string> names);

  ClassId add(const std::string& name);
  const std::string& name(ClassId id) const;
  std::optional<ClassId> find(const std::string& name) const;
  ClassId id(const std::string& name) const;
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const LabelMap& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, ClassId> index_;
};

struct Dataset {
  FeatureMatrix features;  // dim x count
  std::vector<ClassId> labels;
  LabelMap label_map;

  Dataset() = default;
  Dataset(Eigen::Index dim, LabelMap map) : features(dim, 0), label_map(std::move(map)) {}

  Eigen::Index dim() const { return features.rows(); }
  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t n_classes() const { return label_map.size(); }

  auto vector(std::size_t i) const { return features.col(static_cast<Eigen::Index>(i)); }

  // Throws DataError when the invariants do not hold.
  void validate() const;

  // Indices of the examples of each class, in dataset order.
  std::vector<std::vector<std::size_t>> indices_by_class() const;

  // New dataset holding the given examples in the given order; same label map.
  Dataset subset(const std::vector<std::size_t>& indices) const;

  // Columns of the given examples as a dim x k matrix.
  FeatureMatrix gather(const std::vector<std::size_t>& indices) const;

  bool operator==(const Dataset& other) const;
};

// Builds a dataset from parallel vectors; appends columns and validates.
Dataset make_dataset(const std::vector<std::vector<double>>& vectors,
                     const std::vector<ClassId>& labels, LabelMap map);

enum class FeatureFormat { kBinary, kCsv };

FeatureFormat parse_format(const std::string& text);
FeatureFormat format_from_path(const std::filesystem::path& path);

struct LoadOptions {
  bool l2_normalize = false;
};

// The label map lives next to the feature file at `<path>.labels`.
std::filesystem::path label_map_path(const std::filesystem::path& feature_path);

Dataset load_features(const std::filesystem::path& path, FeatureFormat format,
                      const LoadOptions& options = {});
void save_features(const Dataset& ds, const std::filesystem::path& path, FeatureFormat format);

LabelMap load_label_map(const std::filesystem::path& path);
void save_label_map(const LabelMap& map, const std::filesystem::path& path);

struct SyntheticSpec {
  std::uint32_t n_classes = 22;
  std::uint32_t dim = 32;
  std::uint32_t per_class_count = 30;
  double class_mean_scale = 1.0;
  double within_class_stddev = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Class c gets a mean uniform in [-scale, scale]^dim and per_class_count
// samples mean + N(0, stddev^2 I). Classes are named "class_00", "class_01"...
Dataset generate_synthetic(const SyntheticSpec& spec);

struct Split {
  Dataset train;
  Dataset test;
};

// Per class, `shots` randomly chosen examples go to train and the rest to
// test. Within each side examples keep the order of the random permutation.
Split split_shots(const Dataset& ds, std::size_t shots, std::uint64_t seed);

}  // namespace cbcl
