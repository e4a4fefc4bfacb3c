#include <doctest.h>

#include <cmath>
#include <set>

#include "cbcl/linear_head.hpp"
#include "cbcl/random.hpp"
#include "oracles.hpp"

using namespace cbcl;

namespace {

LinearHead random_head(Rng& rng, Eigen::Index classes, Eigen::Index dim) {
  std::vector<ClassId> ids;
  for (Eigen::Index c = 0; c < classes; ++c) ids.push_back(static_cast<ClassId>(c));
  LinearHead head(dim, ids);
  for (Eigen::Index r = 0; r < classes; ++r) {
    for (Eigen::Index k = 0; k < dim; ++k) head.weights(r, k) = rng.uniform(-1, 1);
    head.bias(r) = rng.uniform(-1, 1);
  }
  return head;
}

}  // namespace

TEST_CASE("forward") {
  LinearHead head(2, {0, 1, 2});
  const Eigen::VectorXd p = forward(head, Eigen::Vector2d(3, -1));
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(p(i) == doctest::Approx(1.0 / 3.0));

  LinearHead biased(2, {0, 1});
  biased.bias << std::log(2.0), 0.0;
  const Eigen::VectorXd q = forward(biased, Eigen::Vector2d(5, 5));
  CHECK(q(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(q(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  CHECK_THROWS_AS(forward(head, Eigen::Vector3d(0, 0, 0)), DataError);
}

TEST_CASE("softmax sums to one and ignores logit shifts") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    LinearHead head = random_head(rng, 1 + static_cast<Eigen::Index>(rng.below(10)), 4);
    head.weights *= 30.0;  // large logits exercise the max subtraction
    Eigen::VectorXd x(4);
    for (int k = 0; k < 4; ++k) x(k) = rng.uniform(-3, 3);
    const Eigen::VectorXd p = forward(head, x);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-9);
    CHECK(p.minCoeff() >= 0.0);
    LinearHead shifted = head;
    shifted.bias.array() += 123.25;
    CHECK((forward(shifted, x) - p).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("gradient hand example") {
  LinearHead head(3, {0, 1});
  Eigen::MatrixXd x(3, 1);
  x << 1.0, -2.0, 0.5;
  const Gradient g = gradient(head, x, {0});
  CHECK(g.bias(0) == doctest::Approx(-0.5));
  CHECK(g.bias(1) == doctest::Approx(0.5));
  CHECK(g.weights(0, 1) == doctest::Approx(1.0));   // -0.5 * -2
  CHECK(g.weights(1, 2) == doctest::Approx(0.25));  // 0.5 * 0.5
}

TEST_CASE("gradient vanishes at a confident correct prediction") {
  LinearHead head(2, {0, 1});
  head.bias << 60.0, -60.0;
  Eigen::MatrixXd x(2, 2);
  x << 1.0, 0.5, 2.0, -1.0;
  const Gradient g = gradient(head, x, {0, 0});
  CHECK(g.weights.cwiseAbs().maxCoeff() < 1e-40);
  CHECK(g.bias.cwiseAbs().maxCoeff() < 1e-40);
}

TEST_CASE("gradient matches central finite differences") {
  Rng rng(1234);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto classes = 2 + static_cast<Eigen::Index>(rng.below(7));
    const auto dim = 1 + static_cast<Eigen::Index>(rng.below(16));
    const auto batch = 1 + static_cast<Eigen::Index>(rng.below(8));
    const LinearHead head = random_head(rng, classes, dim);
    Eigen::MatrixXd x(dim, batch);
    std::vector<Eigen::Index> rows;
    for (Eigen::Index j = 0; j < batch; ++j) {
      for (Eigen::Index k = 0; k < dim; ++k) x(k, j) = rng.uniform(-2, 2);
      rows.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(classes))));
    }
    const Gradient g = gradient(head, x, rows);
    const auto fd = oracle::finite_difference(head, x, rows);
    for (Eigen::Index r = 0; r < classes; ++r) {
      for (Eigen::Index k = 0; k < dim; ++k) {
        worst = std::max(worst, oracle::relative_error(g.weights(r, k), fd.weights(r, k)));
      }
      worst = std::max(worst, oracle::relative_error(g.bias(r), fd.bias(r)));
    }
    CHECK(loss(head, x, rows) == doctest::Approx(oracle::cross_entropy(head.weights, head.bias, x, rows)));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("training") {
  // Two separable blobs in 2-D.
  std::vector<std::vector<double>> pts;
  std::vector<ClassId> labels;
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    pts.push_back({2.0 + rng.uniform(-0.5, 0.5), 2.0 + rng.uniform(-0.5, 0.5)});
    labels.push_back(0);
    pts.push_back({-2.0 + rng.uniform(-0.5, 0.5), -2.0 + rng.uniform(-0.5, 0.5)});
    labels.push_back(1);
  }
  const Dataset data = make_dataset(pts, labels, LabelMap({"pos", "neg"}));
  const TrainConfig cfg{0.001, 100, 8, 5};

  SUBCASE("separable data is fit exactly") {
    const LinearHead head = train(LinearHead(2, {0, 1}), data, cfg);
    CHECK(accuracy(head, data) == 1.0);
  }
  SUBCASE("zero learning rate leaves the head unchanged") {
    TrainConfig frozen = cfg;
    frozen.learning_rate = 0.0;
    LinearHead start(2, {0, 1});
    start.weights << 0.5, -1.0, 2.0, 0.25;
    CHECK(train(start, data, frozen) == start);
  }
  SUBCASE("same seed, same head") {
    CHECK(train(LinearHead(2, {0, 1}), data, cfg) == train(LinearHead(2, {0, 1}), data, cfg));
    TrainConfig other = cfg;
    other.seed = 6;
    CHECK_FALSE(train(LinearHead(2, {0, 1}), data, cfg) == train(LinearHead(2, {0, 1}), data, other));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(train(LinearHead(2, {0, 1}), Dataset(2, LabelMap({"a"})), cfg), DataError);
    CHECK_THROWS_AS(train(LinearHead(2, {0}), data, cfg), DataError);
    TrainConfig bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(train(LinearHead(2, {0, 1}), data, bad), DataError);
  }
}

TEST_CASE("FLB and FT increments") {
  const Dataset ds = generate_synthetic({6, 4, 8, 3.0, 0.3, 2});
  auto only = [&](std::set<ClassId> keep) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (keep.count(ds.labels[i])) idx.push_back(i);
    }
    return ds.subset(idx);
  };
  const TrainConfig cfg{0.001, 20, 8, 9};

  SUBCASE("first increment: FLB is plain training and FT matches it") {
    const Dataset first = only({2, 4});
    const LinearHead flb = run_flb_increment(first, cfg);
    CHECK(flb == train(LinearHead(4, {2, 4}), first, cfg));
    CHECK(run_ft_increment(LinearHead{}, first, cfg) == flb);
  }
  SUBCASE("FT appends zero rows and trains on new data only") {
    const LinearHead first = run_ft_increment(LinearHead{}, only({0, 1}), cfg);
    TrainConfig frozen = cfg;
    frozen.learning_rate = 0.0;
    const LinearHead grown = run_ft_increment(first, only({3}), frozen);
    CHECK(grown.classes == std::vector<ClassId>{0, 1, 3});
    CHECK(grown.weights.topRows(2) == first.weights);
    CHECK(grown.weights.row(2).isZero());
    CHECK(grown.bias(2) == 0.0);
    CHECK_THROWS_AS(run_ft_increment(first, only({1, 5}), cfg), DataError);
  }
  SUBCASE("final FLB equals batch training on everything") {
    CHECK(run_flb_increment(ds, cfg) == train(LinearHead(4, {0, 1, 2, 3, 4, 5}), ds, cfg));
  }
}
