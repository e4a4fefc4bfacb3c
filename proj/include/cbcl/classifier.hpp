#pragma once

// Weighted-voting prediction over the globally nearest centroids, and the
// exact nearest-class-mean and 1-NN classifiers it reduces to in its limits.

#include <Eigen/Dense>

#include <map>
#include <vector>

#include "cbcl/agg_var.hpp"
#include "cbcl/feature_space.hpp"

namespace cbcl {

// Zero distance is clamped so an exact match dominates without going infinite.
inline constexpr double kMinVoteDistance = 1e-10;

struct Hyperparams {
  double threshold = 0.0;  // D
  std::size_t n_vote = 1;  // n

  bool operator==(const Hyperparams&) const = default;
};

// Classes that received at least one vote, with their summed 1/dist weights.
using ScoreMap = std::map<ClassId, double>;

// Flattened, read-only view of every centroid in a store, ordered by
// (class id, centroid index). Build once and query many times.
class CentroidIndex {
 public:
  explicit CentroidIndex(const ModelStore& store);

  Eigen::Index dim() const { return means_.rows(); }
  std::size_t size() const { return owners_.size(); }

  // The m = min(m, size()) nearest centroids as (distance, owner), nearest
  // first; equal distances keep (class id, centroid index) order.
  std::vector<std::pair<double, ClassId>> nearest(const Eigen::Ref<const Eigen::VectorXd>& x,
                                                  std::size_t m) const;

  ScoreMap scores(const Eigen::Ref<const Eigen::VectorXd>& x, std::size_t n_vote) const;
  ClassId predict(const Eigen::Ref<const Eigen::VectorXd>& x, std::size_t n_vote) const;

 private:
  Eigen::MatrixXd means_;  // dim x total centroids
  std::vector<ClassId> owners_;
};

ScoreMap predict_scores(const ModelStore& store, const Eigen::Ref<const Eigen::VectorXd>& x,
                        std::size_t n_vote);
ClassId predict(const ModelStore& store, const Eigen::Ref<const Eigen::VectorXd>& x,
                std::size_t n_vote);

// Inverse-distance votes over a prefix of a nearest-first ranking.
ScoreMap vote(const std::vector<std::pair<double, ClassId>>& ranked, std::size_t n_vote);

// Highest score; lowest class id among equal scores.
ClassId argmax(const ScoreMap& scores);

ClassId predict_ncm(const std::map<ClassId, FeatureVector>& class_means,
                    const Eigen::Ref<const Eigen::VectorXd>& x);
ClassId predict_1nn(const Dataset& train, const Eigen::Ref<const Eigen::VectorXd>& x);

// Fraction of `test` examples whose predicted label matches.
double accuracy(const CentroidIndex& index, const Dataset& test, std::size_t n_vote);

}  // namespace cbcl
