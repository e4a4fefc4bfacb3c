#include <doctest.h>

#include "cbcl/classifier.hpp"
#include "cbcl/random.hpp"
#include "oracles.hpp"

using namespace cbcl;

namespace {

ModelStore point_store(const std::vector<std::pair<ClassId, std::vector<double>>>& points) {
  std::map<ClassId, ClassModel> models;
  for (const auto& [c, v] : points) {
    auto& m = models[c];
    m.label = c;
    m.centroids.push_back({Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())), 1});
  }
  ModelStore store;
  for (auto& [_, m] : models) store.put(m);
  return store;
}

}  // namespace

TEST_CASE("weighted vote hand example") {
  const ModelStore store = point_store({{0, {0, 0}}, {1, {4, 0}}});
  const ScoreMap s = predict_scores(store, Eigen::Vector2d(1, 0), 2);
  REQUIRE(s.size() == 2);
  CHECK(s.at(0) == 1.0);
  CHECK(s.at(1) == 1.0 / 3.0);
  CHECK(predict(store, Eigen::Vector2d(1, 0), 2) == 0);
}

TEST_CASE("zero distance is clamped") {
  const ModelStore store = point_store({{0, {0, 0}}, {1, {4, 0}}});
  const ScoreMap s = predict_scores(store, Eigen::Vector2d(0, 0), 1);
  REQUIRE(s.size() == 1);
  CHECK(s.at(0) == 1.0 / kMinVoteDistance);
  CHECK(std::isfinite(s.at(0)));
}

TEST_CASE("n_vote larger than the centroid count") {
  const ModelStore store = point_store({{0, {0}}, {0, {1}}, {1, {5}}});
  const ScoreMap s = predict_scores(store, Eigen::VectorXd::Constant(1, 2.0), 50);
  CHECK(s.at(0) == doctest::Approx(1.0 / 2.0 + 1.0));
  CHECK(s.at(1) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("ties") {
  SUBCASE("single class store") {
    const ModelStore store = point_store({{3, {1, 1}}});
    CHECK(predict(store, Eigen::Vector2d(-40, 7), 5) == 3);
  }
  SUBCASE("equidistant classes: lowest id wins") {
    const ModelStore store = point_store({{1, {2}}, {0, {-2}}});
    CHECK(predict(store, Eigen::VectorXd::Zero(1), 2) == 0);
  }
  SUBCASE("equidistant centroids with n_vote=1 vote in class order") {
    const ModelStore store = point_store({{1, {2}}, {0, {-2}}});
    const ScoreMap s = predict_scores(store, Eigen::VectorXd::Zero(1), 1);
    REQUIRE(s.size() == 1);
    CHECK(s.count(0) == 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(predict(ModelStore{}, Eigen::VectorXd::Zero(1), 1), DataError);
    const ModelStore store = point_store({{0, {0, 0}}});
    CHECK_THROWS_AS(predict(store, Eigen::VectorXd::Zero(3), 1), DataError);
  }
}

TEST_CASE("scores agree with brute-force ranking") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int dim = 1 + static_cast<int>(rng.below(6));
    std::vector<std::pair<ClassId, std::vector<double>>> points;
    std::vector<oracle::Voter> voters;
    std::map<ClassId, std::size_t> next_index;
    const int n = 1 + static_cast<int>(rng.below(20));
    for (int i = 0; i < n; ++i) {
      const auto c = static_cast<ClassId>(rng.below(5));
      std::vector<double> v(static_cast<std::size_t>(dim));
      // Coarse grid so exact ties are common.
      for (auto& x : v) x = static_cast<double>(rng.below(5));
      points.emplace_back(c, v);
      voters.push_back({c, next_index[c]++, v});
    }
    const ModelStore store = point_store(points);
    std::vector<double> x(static_cast<std::size_t>(dim));
    for (auto& xi : x) xi = static_cast<double>(rng.below(5));
    const std::size_t n_vote = 1 + rng.below(8);
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), dim);
    const ScoreMap got = predict_scores(store, xv, n_vote);
    const auto want = oracle::brute_scores(voters, x, n_vote);
    REQUIRE(got.size() == want.size());
    double total = 0.0;
    for (const auto& [c, s] : want) {
      CHECK(got.at(c) == doctest::Approx(s).epsilon(1e-12));
      total += got.at(c);
    }
    // Score additivity over the m nearest centroids.
    std::vector<double> d;
    for (const auto& v : voters) d.push_back(std::max(oracle::distance(x, v.mean), 1e-10));
    std::sort(d.begin(), d.end());
    double expect_total = 0.0;
    for (std::size_t k = 0; k < std::min(n_vote, d.size()); ++k) expect_total += 1.0 / d[k];
    CHECK(total == doctest::Approx(expect_total).epsilon(1e-12));
  }
}

TEST_CASE("nearest class mean oracle") {
  std::map<ClassId, FeatureVector> means;
  means[0] = Eigen::VectorXd::Constant(1, 0.0);
  means[1] = Eigen::VectorXd::Constant(1, 10.0);
  CHECK(predict_ncm(means, Eigen::VectorXd::Constant(1, 2.0)) == 0);
  CHECK(predict_ncm(means, Eigen::VectorXd::Constant(1, 5.0)) == 0);
  CHECK(predict_ncm(means, Eigen::VectorXd::Constant(1, 5.1)) == 1);
  CHECK_THROWS_AS(predict_ncm({}, Eigen::VectorXd::Zero(1)), DataError);
  CHECK_THROWS_AS(predict_ncm(means, Eigen::VectorXd::Zero(2)), DataError);
}

TEST_CASE("1-NN oracle") {
  const Dataset train = make_dataset({{0}, {10}}, {0, 1}, LabelMap({"A", "B"}));
  CHECK(predict_1nn(train, Eigen::VectorXd::Constant(1, 1.0)) == 0);
  CHECK(predict_1nn(train, Eigen::VectorXd::Constant(1, 10.0)) == 1);
  CHECK(predict_1nn(train, Eigen::VectorXd::Constant(1, 5.0)) == 0);
  CHECK_THROWS_AS(predict_1nn(train, Eigen::VectorXd::Zero(2)), DataError);
}

TEST_CASE("limits: NCM and 1-NN") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const SyntheticSpec spec{static_cast<std::uint32_t>(2 + rng.below(8)),
                             static_cast<std::uint32_t>(1 + rng.below(16)), 12, 1.0, 0.5,
                             rng.next_u64()};
    const Dataset ds = generate_synthetic(spec);
    const Split split = split_shots(ds, 6, rng.next_u64());
    const ClassExamples per_class = group_by_class(split.train);

    ModelStore one_each;
    for (const auto& [c, m] : per_class) one_each.put(cluster_class(m, c, oracle::max_pairwise(m) + 1.0));
    const ModelStore every_point = learn_increment(ModelStore{}, per_class, 0.0);
    const auto means = oracle::class_means(split.train);
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      const Eigen::VectorXd x = split.test.vector(i).cast<double>();
      CHECK(predict(one_each, x, 1) == predict_ncm(means, x));
      CHECK(predict(every_point, x, 1) == predict_1nn(split.train, x));
    }
  }
}

TEST_CASE("scale invariance and class-order permutation") {
  const Dataset ds = generate_synthetic({6, 5, 10, 1.0, 0.6, 2});
  const Split split = split_shots(ds, 5, 9);
  const ClassExamples per_class = group_by_class(split.train);
  const double d = 0.7;
  const ModelStore store = learn_increment(ModelStore{}, per_class, d);

  ClassExamples scaled;
  for (const auto& [c, m] : per_class) scaled.emplace(c, m * 4.0F);
  const ModelStore scaled_store = learn_increment(ModelStore{}, scaled, d * 4.0);

  ModelStore reversed;
  for (auto it = per_class.rbegin(); it != per_class.rend(); ++it) {
    reversed = learn_increment(reversed, {{it->first, it->second}}, d);
  }
  for (std::size_t n_vote : {1U, 3U, 7U}) {
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      const Eigen::VectorXd x = split.test.vector(i).cast<double>();
      const ClassId base = predict(store, x, n_vote);
      CHECK(predict(scaled_store, Eigen::VectorXd(x * 4.0), n_vote) == base);
      CHECK(predict(reversed, x, n_vote) == base);
    }
  }
}
