#pragma once

// Agg-Var clustering: a streaming, per-class centroid builder.
//
// Examples of one class are consumed in order. The first becomes a centroid;
// each later example joins its nearest centroid when strictly closer than the
// distance threshold, otherwise it seeds a new centroid. A centroid's mean is
// the exact running mean of the examples assigned to it and its weight is
// their count.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "cbcl/feature_space.hpp"

namespace cbcl {

struct Centroid {
  FeatureVector mean;
  std::uint32_t weight = 1;

  bool operator==(const Centroid& other) const {
    return weight == other.weight && mean.size() == other.mean.size() && mean == other.mean;
  }
};

struct ClassModel {
  ClassId label = 0;
  std::vector<Centroid> centroids;
  double threshold = 0.0;  // D used for the most recent update
  std::uint64_t examples_seen = 0;

  Eigen::Index dim() const { return centroids.empty() ? 0 : centroids.front().mean.size(); }
  bool operator==(const ClassModel&) const = default;
};

namespace detail {

template <typename Derived>
void absorb(ClassModel& model, const Eigen::MatrixBase<Derived>& x) {
  if (model.centroids.empty()) {
    model.centroids.push_back({x.template cast<double>(), 1});
    ++model.examples_seen;
    return;
  }
  if (x.size() != model.dim()) {
    throw DataError(DataError::Kind::kDimMismatch,
                    "agg_var: example dim " + std::to_string(x.size()) + " != model dim " +
                        std::to_string(model.dim()));
  }
  std::size_t nearest = 0;
  double best = euclidean_distance(x, model.centroids[0].mean);
  for (std::size_t j = 1; j < model.centroids.size(); ++j) {
    const double d = euclidean_distance(x, model.centroids[j].mean);
    if (d < best) {
      best = d;
      nearest = j;
    }
  }
  if (best < model.threshold) {
    Centroid& c = model.centroids[nearest];
    const double w = static_cast<double>(c.weight);
    c.mean = (w * c.mean + x.template cast<double>()) / (w + 1.0);
    ++c.weight;
  } else {
    model.centroids.push_back({x.template cast<double>(), 1});
  }
  ++model.examples_seen;
}

inline void check_threshold(double threshold) {
  if (!(threshold >= 0.0) || !std::isfinite(threshold)) {
    throw DataError(DataError::Kind::kInvalidArgument,
                    "agg_var: distance threshold must be finite and >= 0");
  }
}

}  // namespace detail

// Clusters the columns of `examples` in column order.
template <typename Derived>
ClassModel cluster_class(const Eigen::MatrixBase<Derived>& examples, ClassId label,
                         double threshold) {
  if (examples.cols() == 0) {
    throw DataError(DataError::Kind::kInvalidArgument, "cluster_class: no examples");
  }
  detail::check_threshold(threshold);
  ClassModel model{label, {}, threshold, 0};
  for (Eigen::Index i = 0; i < examples.cols(); ++i) detail::absorb(model, examples.col(i));
  return model;
}

// Resumes clustering with more examples. Equivalent to cluster_class on the
// concatenated stream when the threshold is unchanged.
template <typename Derived>
ClassModel update_class(ClassModel model, const Eigen::MatrixBase<Derived>& more) {
  if (more.cols() > 0 && !model.centroids.empty() && more.rows() != model.dim()) {
    throw DataError(DataError::Kind::kDimMismatch, "update_class: dimension mismatch");
  }
  for (Eigen::Index i = 0; i < more.cols(); ++i) detail::absorb(model, more.col(i));
  return model;
}

// Same as above, with a new threshold for the examples processed from now on.
template <typename Derived>
ClassModel update_class(ClassModel model, const Eigen::MatrixBase<Derived>& more,
                        double threshold) {
  detail::check_threshold(threshold);
  model.threshold = threshold;
  return update_class(std::move(model), more);
}

// All learned classes. Iteration is in ascending class id.
class ModelStore {
 public:
  ModelStore() = default;
  explicit ModelStore(Eigen::Index dim) : dim_(dim) {}

  Eigen::Index dim() const { return dim_; }
  bool empty() const { return models_.empty(); }
  std::size_t size() const { return models_.size(); }
  std::size_t centroid_count() const;

  bool contains(ClassId c) const { return models_.count(c) != 0; }
  const ClassModel& at(ClassId c) const;
  const std::map<ClassId, ClassModel>& models() const { return models_; }
  std::vector<ClassId> classes() const;

  // Inserts or replaces a class model; the store dim is fixed by the first one.
  void put(ClassModel model);

  bool operator==(const ModelStore&) const = default;

 private:
  Eigen::Index dim_ = 0;
  std::map<ClassId, ClassModel> models_;
};

// Examples per class, each a dim x k matrix in presentation order.
using ClassExamples = std::map<ClassId, FeatureMatrix>;

// Clusters new classes and continues existing ones, each independently.
// Models of classes absent from `per_class` are left untouched.
ModelStore learn_increment(ModelStore store, const ClassExamples& per_class, double threshold);

// Groups a dataset's examples by class, preserving dataset order.
ClassExamples group_by_class(const Dataset& ds);

// "CBMS" binary persistence. Means and thresholds are stored as f32.
void save_model_store(const ModelStore& store, const std::filesystem::path& path);
ModelStore load_model_store(const std::filesystem::path& path);

}  // namespace cbcl
