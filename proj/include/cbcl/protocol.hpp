#pragma once

// Class-incremental experiment engine. A run fixes a class order and a
// few-shot train/test split, then presents classes a few at a time. After
// every increment the learner is scored on the test examples of all classes
// seen so far.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cbcl/agg_var.hpp"
#include "cbcl/classifier.hpp"
#include "cbcl/feature_space.hpp"
#include "cbcl/linear_head.hpp"
#include "cbcl/random.hpp"

namespace cbcl {

// Stream tags for seeds derived from a run seed.
inline constexpr std::uint64_t kClassOrderStream = 1;
inline constexpr std::uint64_t kSplitStream = 2;
inline constexpr std::uint64_t kTrainStream = 3;

struct IncrementPlan {
  std::size_t classes_per_increment = 2;
  std::size_t shots = 5;
  std::vector<ClassId> class_order;
  std::uint64_t seed = 0;

  void validate(const Dataset& ds) const;
  std::vector<std::vector<ClassId>> increments() const;
  std::uint64_t split_seed() const { return derive_seed(seed, kSplitStream); }
};

// Random class order drawn from the plan seed. The order does not depend on
// classes_per_increment, so plans that differ only there see the same stream.
IncrementPlan make_plan(const Dataset& ds, std::size_t classes_per_increment, std::size_t shots,
                        std::uint64_t seed);

struct IncrementMetrics {
  std::size_t increment_index = 0;  // 1-based
  std::size_t n_classes_seen = 0;
  double accuracy = 0.0;

  bool operator==(const IncrementMetrics&) const = default;
};

struct RunSummary {
  std::vector<std::size_t> n_classes_seen;
  std::vector<double> per_increment_mean;
  std::vector<double> per_increment_std;  // sample std over runs; 0 for one run
  double average_incremental_accuracy = 0.0;
};

// Hyperparameter search space. Explicit points win; otherwise D is taken
// from quantiles of the new classes' intra-class pairwise distances and
// crossed with n_votes.
struct GridSpec {
  std::vector<Hyperparams> points;
  std::vector<double> quantiles{0.10, 0.25, 0.50, 0.75, 0.90};
  std::vector<std::size_t> n_votes{1, 3, 5, 10};

  bool is_fixed() const { return points.size() == 1; }
};

// Parses "auto" or "<D list>/<n list>", e.g. "0.5,1,2/1,3,5".
GridSpec parse_grid(const std::string& text);
std::string format_grid(const GridSpec& grid);

// Linear-interpolated quantile (numpy's default) of unsorted values.
double quantile(std::vector<double> values, double q);

std::vector<double> intra_class_distances(const ClassExamples& per_class);

std::vector<Hyperparams> expand_grid(const GridSpec& grid, const ClassExamples& new_class_data);

struct TuneResult {
  Hyperparams chosen;
  double cv_accuracy = 0.0;
  std::size_t folds_used = 0;  // 0 when tuning was skipped
};

// Used when tuning has nothing to go on and no earlier choice exists.
inline constexpr Hyperparams kDefaultHyperparams{0.0, 1};

// k-fold cross-validation over the new classes' examples only. Each held-out
// fold is classified against the frozen old centroids plus centroids built
// from the remaining folds. Highest mean fold accuracy wins; ties go to the
// smaller D, then the smaller n_vote.
TuneResult tune_hyperparams(const ModelStore& store, const ClassExamples& new_class_data,
                            const std::vector<Hyperparams>& grid, std::size_t folds,
                            std::optional<Hyperparams> fallback = std::nullopt);

struct SessionState {
  ModelStore store;
  std::vector<ClassId> learned_classes;
  std::vector<Hyperparams> hyper_history;
  std::vector<IncrementMetrics> metrics;
};

struct CbclOptions {
  GridSpec grid;
  std::size_t folds = 5;  // capped at the shot count
};

SessionState run_cbcl_session(const Dataset& ds, const IncrementPlan& plan,
                              const CbclOptions& options);

enum class BaselineMethod { kFineTune, kFewShotBaseline };

// `cfg.seed` seeds increment k's training through derive_seed(cfg.seed, k).
std::vector<IncrementMetrics> run_baseline_session(const Dataset& ds, const IncrementPlan& plan,
                                                   BaselineMethod method, const TrainConfig& cfg);

RunSummary aggregate_runs(const std::vector<std::vector<IncrementMetrics>>& runs);

// Evaluates fn(0..n-1) on up to `threads` workers; results are in index order
// and independent of the worker count.
template <typename T>
std::vector<T> parallel_map(std::size_t n, std::size_t threads,
                            const std::function<T(std::size_t)>& fn);

}  // namespace cbcl

#include "cbcl/detail/parallel.hpp"
