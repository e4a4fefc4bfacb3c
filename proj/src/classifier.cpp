#include "cbcl/classifier.hpp"

#include <algorithm>
#include <numeric>

namespace cbcl {

namespace {

void check_dim(Eigen::Index expected, Eigen::Index got, const char* who) {
  if (expected != got) {
    throw DataError(DataError::Kind::kDimMismatch,
                    std::string(who) + ": query dim " + std::to_string(got) + " != " +
                        std::to_string(expected));
  }
}

}  // namespace

CentroidIndex::CentroidIndex(const ModelStore& store) {
  if (store.empty()) {
    throw DataError(DataError::Kind::kInvalidArgument, "classifier: model store is empty");
  }
  means_.resize(store.dim(), static_cast<Eigen::Index>(store.centroid_count()));
  owners_.reserve(store.centroid_count());
  Eigen::Index col = 0;
  for (const auto& [label, model] : store.models()) {
    for (const auto& c : model.centroids) {
      means_.col(col++) = c.mean;
      owners_.push_back(label);
    }
  }
}

std::vector<std::pair<double, ClassId>> CentroidIndex::nearest(
    const Eigen::Ref<const Eigen::VectorXd>& x, std::size_t m) const {
  check_dim(dim(), x.size(), "predict_scores");
  std::vector<double> dist(size());
  for (std::size_t j = 0; j < size(); ++j) {
    dist[j] = euclidean_distance(x, means_.col(static_cast<Eigen::Index>(j)));
  }
  // Centroids are stored in (class id, centroid index) order, so breaking
  // distance ties by position gives the declared tie order.
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  m = std::min(m, size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
                    });
  std::vector<std::pair<double, ClassId>> out;
  out.reserve(m);
  for (std::size_t k = 0; k < m; ++k) out.emplace_back(dist[order[k]], owners_[order[k]]);
  return out;
}

ScoreMap vote(const std::vector<std::pair<double, ClassId>>& ranked, std::size_t n_vote) {
  if (n_vote == 0) throw DataError(DataError::Kind::kInvalidArgument, "n_vote must be >= 1");
  ScoreMap out;
  const std::size_t m = std::min(n_vote, ranked.size());
  for (std::size_t k = 0; k < m; ++k) {
    out[ranked[k].second] += 1.0 / std::max(ranked[k].first, kMinVoteDistance);
  }
  return out;
}

ScoreMap CentroidIndex::scores(const Eigen::Ref<const Eigen::VectorXd>& x,
                               std::size_t n_vote) const {
  if (n_vote == 0) throw DataError(DataError::Kind::kInvalidArgument, "n_vote must be >= 1");
  return vote(nearest(x, n_vote), n_vote);
}

ClassId CentroidIndex::predict(const Eigen::Ref<const Eigen::VectorXd>& x,
                               std::size_t n_vote) const {
  return argmax(scores(x, n_vote));
}

ClassId argmax(const ScoreMap& scores) {
  if (scores.empty()) throw InvariantError("argmax of empty score map");
  auto best = scores.begin();
  for (auto it = std::next(scores.begin()); it != scores.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

ScoreMap predict_scores(const ModelStore& store, const Eigen::Ref<const Eigen::VectorXd>& x,
                        std::size_t n_vote) {
  return CentroidIndex(store).scores(x, n_vote);
}

ClassId predict(const ModelStore& store, const Eigen::Ref<const Eigen::VectorXd>& x,
                std::size_t n_vote) {
  return CentroidIndex(store).predict(x, n_vote);
}

ClassId predict_ncm(const std::map<ClassId, FeatureVector>& class_means,
                    const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (class_means.empty()) {
    throw DataError(DataError::Kind::kInvalidArgument, "predict_ncm: no class means");
  }
  ClassId best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& [label, mean] : class_means) {
    check_dim(mean.size(), x.size(), "predict_ncm");
    const double d = euclidean_distance(x, mean);
    if (d < best_dist) {
      best_dist = d;
      best = label;
    }
  }
  return best;
}

ClassId predict_1nn(const Dataset& train, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (train.empty()) throw DataError(DataError::Kind::kInvalidArgument, "predict_1nn: no data");
  check_dim(train.dim(), x.size(), "predict_1nn");
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < train.size(); ++i) {
    const double d = euclidean_distance(x, train.vector(i));
    if (d < best_dist ||
        (d == best_dist && train.labels[i] < train.labels[best])) {
      best_dist = d;
      best = i;
    }
  }
  return train.labels[best];
}

double accuracy(const CentroidIndex& index, const Dataset& test, std::size_t n_vote) {
  if (test.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Eigen::VectorXd x = test.vector(i).cast<double>();
    if (index.predict(x, n_vote) == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace cbcl
