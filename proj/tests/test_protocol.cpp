#include <doctest.h>

#include <numeric>
#include <set>

#include "cbcl/protocol.hpp"
#include "cbcl/random.hpp"

using namespace cbcl;

TEST_CASE("plans and schedules") {
  const Dataset ds = generate_synthetic({22, 3, 30, 1.0, 0.1, 1});
  const IncrementPlan plan = make_plan(ds, 2, 5, 7);
  const auto incs = plan.increments();
  CHECK(incs.size() == 11);
  std::set<ClassId> seen;
  for (const auto& inc : incs) {
    CHECK(inc.size() == 2);
    seen.insert(inc.begin(), inc.end());
  }
  CHECK(seen.size() == 22);
  CHECK(make_plan(ds, 1, 5, 7).class_order == plan.class_order);
  CHECK(make_plan(ds, 3, 5, 7).increments().back().size() == 1);  // 22 = 7*3 + 1
  CHECK_FALSE(make_plan(ds, 2, 5, 8).class_order == plan.class_order);

  IncrementPlan broken = plan;
  broken.class_order.pop_back();
  CHECK_THROWS_AS(broken.validate(ds), DataError);
}

TEST_CASE("quantile and grid parsing") {
  CHECK(quantile({4, 1, 3, 2, 5}, 0.5) == 3.0);
  CHECK(quantile({1, 2}, 0.25) == 1.25);
  CHECK(quantile({7}, 0.9) == 7.0);

  const GridSpec g = parse_grid("0.5,2/1,3");
  REQUIRE(g.points.size() == 4);
  CHECK(g.points[1] == Hyperparams{0.5, 3});
  CHECK(g.points[2] == Hyperparams{2.0, 1});
  CHECK(format_grid(g) == "0.5,2/1,3");
  CHECK(parse_grid("auto").points.empty());
  CHECK(format_grid(parse_grid("auto")) == "auto");
  CHECK_THROWS_AS(parse_grid("1,2"), DataError);
  CHECK_THROWS_AS(parse_grid("1/0"), DataError);
  CHECK_THROWS_AS(parse_grid("x/1"), DataError);
}

TEST_CASE("default grid comes from intra-class distance quantiles") {
  ClassExamples data;
  FeatureMatrix a(1, 3);
  a << 0, 1, 3;  // pairwise 1, 3, 2
  data.emplace(0, a);
  const auto grid = expand_grid(GridSpec{}, data);
  REQUIRE(grid.size() == 20);
  CHECK(grid[0] == Hyperparams{quantile({1, 2, 3}, 0.10), 1});
  CHECK(grid[3] == Hyperparams{quantile({1, 2, 3}, 0.10), 10});
  CHECK(grid[8].threshold == 2.0);  // median

  ClassExamples singletons{{0, FeatureMatrix::Zero(2, 1)}};
  CHECK(expand_grid(GridSpec{}, singletons).empty());
}

TEST_CASE("tune_hyperparams") {
  const Dataset ds = generate_synthetic({4, 5, 20, 10.0, 0.2, 3});
  const Split split = split_shots(ds, 10, 1);
  const ClassExamples all = group_by_class(split.train);
  ClassExamples fresh{{2, all.at(2)}, {3, all.at(3)}};
  const ModelStore old = learn_increment(ModelStore{}, {{0, all.at(0)}, {1, all.at(1)}}, 1.0);

  SUBCASE("single grid point is returned as is") {
    const auto r = tune_hyperparams(old, fresh, {{0.3, 4}}, 5);
    CHECK(r.chosen == Hyperparams{0.3, 4});
  }
  SUBCASE("well separated classes: every adequate D ties, smallest wins") {
    const std::vector<Hyperparams> grid{{50.0, 1}, {5.0, 3}, {5.0, 1}, {20.0, 1}};
    const auto r = tune_hyperparams(old, fresh, grid, 5);
    CHECK(r.cv_accuracy == 1.0);
    CHECK(r.chosen == Hyperparams{5.0, 1});
    CHECK(r.folds_used == 5);
  }
  SUBCASE("deterministic") {
    const auto grid = expand_grid(GridSpec{}, fresh);
    const auto a = tune_hyperparams(old, fresh, grid, 5);
    const auto b = tune_hyperparams(old, fresh, grid, 5);
    CHECK(a.chosen == b.chosen);
    CHECK(a.cv_accuracy == b.cv_accuracy);
  }
  SUBCASE("fold count falls back to class size, tuning skipped below two") {
    ClassExamples tiny{{2, all.at(2).leftCols(3)}, {3, all.at(3).leftCols(3)}};
    CHECK(tune_hyperparams(old, tiny, {{1, 1}, {2, 1}}, 5).folds_used == 3);
    ClassExamples single{{2, all.at(2).leftCols(1)}};
    const auto r = tune_hyperparams(old, single, {{1, 1}, {2, 1}}, 5, Hyperparams{7.0, 2});
    CHECK(r.folds_used == 0);
    CHECK(r.chosen == Hyperparams{7.0, 2});
    CHECK(tune_hyperparams(old, single, {{1, 1}, {2, 1}}, 5).chosen == kDefaultHyperparams);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(tune_hyperparams(old, {}, {{1, 1}}, 5), DataError);
  }
}

TEST_CASE("CBCL session") {
  const Dataset ds = generate_synthetic({22, 8, 30, 5.0, 0.5, 4});
  const IncrementPlan plan = make_plan(ds, 2, 5, 11);
  const SessionState s = run_cbcl_session(ds, plan, {});
  REQUIRE(s.metrics.size() == 11);
  for (std::size_t i = 0; i < 11; ++i) {
    CHECK(s.metrics[i].increment_index == i + 1);
    CHECK(s.metrics[i].n_classes_seen == 2 * (i + 1));
    CHECK(s.metrics[i].accuracy >= 0.0);
    CHECK(s.metrics[i].accuracy <= 1.0);
  }
  CHECK(s.store.size() == 22);
  CHECK(s.hyper_history.size() == 11);
  CHECK(s.learned_classes == plan.class_order);

  // Reproducible.
  const SessionState again = run_cbcl_session(ds, plan, {});
  CHECK(again.metrics == s.metrics);
  CHECK(again.store == s.store);
}

TEST_CASE("fixed hyperparameters: final model independent of increment size") {
  const Dataset ds = generate_synthetic({9, 6, 12, 2.0, 0.8, 6});
  CbclOptions fixed{parse_grid("1.5/3"), 5};
  const SessionState one = run_cbcl_session(ds, make_plan(ds, 1, 4, 3), fixed);
  const SessionState two = run_cbcl_session(ds, make_plan(ds, 2, 4, 3), fixed);
  const SessionState all = run_cbcl_session(ds, make_plan(ds, 9, 4, 3), fixed);
  CHECK(one.store == all.store);
  CHECK(two.store == all.store);
  CHECK(one.metrics.back().accuracy == all.metrics.back().accuracy);
  CHECK(all.metrics.size() == 1);

  // A single increment with every class is plain batch learning + evaluation.
  const IncrementPlan p = make_plan(ds, 9, 4, 3);
  const Split split = split_shots(ds, 4, p.split_seed());
  const ModelStore batch = learn_increment(ModelStore{}, group_by_class(split.train), 1.5);
  CHECK(batch == all.store);
  CHECK(accuracy(CentroidIndex(batch), split.test, 3) == all.metrics.front().accuracy);
}

TEST_CASE("baseline sessions") {
  const Dataset ds = generate_synthetic({6, 8, 12, 20.0, 6.0, 7});
  const IncrementPlan plan = make_plan(ds, 2, 5, 2);
  const TrainConfig cfg{0.001, 100, 8, 99};
  const auto flb = run_baseline_session(ds, plan, BaselineMethod::kFewShotBaseline, cfg);
  const auto ft = run_baseline_session(ds, plan, BaselineMethod::kFineTune, cfg);
  REQUIRE(flb.size() == 3);
  REQUIRE(ft.size() == 3);
  CHECK(ft.front() == flb.front());
  CHECK(run_baseline_session(ds, plan, BaselineMethod::kFineTune, cfg) == ft);

  // Single increment with every class: FT and FLB coincide.
  const IncrementPlan whole = make_plan(ds, 6, 5, 2);
  CHECK(run_baseline_session(ds, whole, BaselineMethod::kFineTune, cfg) ==
        run_baseline_session(ds, whole, BaselineMethod::kFewShotBaseline, cfg));
}

TEST_CASE("FLB tops FT, and one class per increment forgets faster") {
  const Dataset ds = generate_synthetic({12, 8, 30, 20.0, 6.0, 13});
  const TrainConfig cfg{0.001, 100, 8, 0};
  std::vector<std::vector<IncrementMetrics>> flb_runs, ft_runs, ft1_runs;
  for (std::uint64_t run = 0; run < 10; ++run) {
    TrainConfig c = cfg;
    c.seed = derive_seed(run, kTrainStream);
    const IncrementPlan plan = make_plan(ds, 2, 5, run);
    flb_runs.push_back(run_baseline_session(ds, plan, BaselineMethod::kFewShotBaseline, c));
    ft_runs.push_back(run_baseline_session(ds, plan, BaselineMethod::kFineTune, c));
    ft1_runs.push_back(run_baseline_session(ds, make_plan(ds, 1, 5, run),
                                            BaselineMethod::kFineTune, c));
  }
  const RunSummary flb = aggregate_runs(flb_runs);
  const RunSummary ft = aggregate_runs(ft_runs);
  const RunSummary ft1 = aggregate_runs(ft1_runs);
  for (std::size_t i = 0; i < flb.per_increment_mean.size(); ++i) {
    CHECK(flb.per_increment_mean[i] >= ft.per_increment_mean[i]);
  }
  CHECK(ft1.average_incremental_accuracy < ft.average_incremental_accuracy);
  // Forgetting: accuracy on the first increment's classes after the last one.
  CHECK(ft.per_increment_mean.back() < flb.per_increment_mean.back() - 0.2);
}

TEST_CASE("aggregate_runs") {
  auto run = [](std::vector<double> acc) {
    std::vector<IncrementMetrics> r;
    for (std::size_t i = 0; i < acc.size(); ++i) r.push_back({i + 1, 2 * (i + 1), acc[i]});
    return r;
  };
  const RunSummary one = aggregate_runs({run({0.8, 0.6})});
  CHECK(one.per_increment_std == std::vector<double>{0.0, 0.0});

  const RunSummary two = aggregate_runs({run({0.8, 0.6}), run({0.6, 0.4})});
  CHECK(two.per_increment_mean[0] == doctest::Approx(0.7));
  CHECK(two.per_increment_mean[1] == doctest::Approx(0.5));
  CHECK(two.average_incremental_accuracy == doctest::Approx(0.6));
  CHECK(two.per_increment_std[0] == doctest::Approx(std::sqrt(0.02)));
  CHECK(two.n_classes_seen == std::vector<std::size_t>{2, 4});

  const RunSummary swapped = aggregate_runs({run({0.6, 0.4}), run({0.8, 0.6})});
  CHECK(swapped.per_increment_mean == two.per_increment_mean);
  CHECK(swapped.per_increment_std == two.per_increment_std);
  CHECK(swapped.average_incremental_accuracy == two.average_incremental_accuracy);

  CHECK_THROWS_AS(aggregate_runs({run({0.5}), run({0.5, 0.5})}), DataError);
  CHECK_THROWS_AS(aggregate_runs({}), DataError);
}

TEST_CASE("parallel_map is order-preserving") {
  const std::function<int(std::size_t)> sq = [](std::size_t i) { return static_cast<int>(i * i); };
  CHECK(parallel_map(50, 1, sq) == parallel_map(50, 4, sq));
  CHECK(parallel_map(3, 8, sq) == std::vector<int>{0, 1, 4});
  const std::function<int(std::size_t)> boom = [](std::size_t i) -> int {
    if (i == 7) throw DataError(DataError::Kind::kIo, "boom");
    return 0;
  };
  CHECK_THROWS_AS(parallel_map(10, 3, boom), DataError);
}
