#pragma once

// Monte-Carlo model of a table-cleaning task: objects on a table are detected
// with an injected miss rate, recognised by the centroid classifier from
// held-out feature vectors, and the requested class is moved with an
// injected failure rate.

#include <cstdint>
#include <string>
#include <vector>

#include "cbcl/classifier.hpp"
#include "cbcl/feature_space.hpp"

namespace cbcl {

struct CleaningTrialSpec {
  std::size_t n_objects = 6;
  std::size_t n_targets = 2;
  ClassId target_class = 0;
  double p_detect_miss = 0.2;
  double p_move_fail = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ObjectOutcome {
  ClassId true_class = 0;
  bool is_target = false;
  bool detected = false;
  bool classified = false;  // attempted; only for detected objects
  ClassId predicted = 0;
  bool move_attempted = false;  // detected target recognised as the target class
  bool moved = false;
};

struct TrialOutcome {
  std::vector<ObjectOutcome> objects;
};

// Counts behind the three error rates. Each stage only sees objects that
// passed the previous one.
struct StageCounts {
  std::size_t objects = 0;
  std::size_t missed = 0;
  std::size_t classified = 0;
  std::size_t misclassified = 0;
  std::size_t move_attempts = 0;
  std::size_t move_failures = 0;

  StageCounts& operator+=(const StageCounts& other);
};

struct ErrorBreakdown {
  double detection_error = 0.0;       // % of objects not detected
  double classification_error = 0.0;  // % of detected objects misclassified
  double movement_error = 0.0;        // % of move attempts that failed
  StageCounts counts;
};

// Held-out vectors grouped by class for the simulated table.
class TestPool {
 public:
  explicit TestPool(const Dataset& pool);

  const Dataset& data() const { return data_; }
  const std::vector<std::size_t>& members(ClassId c) const;
  const std::vector<ClassId>& classes() const { return classes_; }

 private:
  Dataset data_;
  std::vector<std::vector<std::size_t>> by_class_;
  std::vector<ClassId> classes_;  // classes with at least one vector
};

// One table: n_targets objects of the target class plus n_objects - n_targets
// drawn uniformly (with replacement) from the other pool classes. `trial`
// selects the random stream so trials can run in any order.
TrialOutcome run_trial(const CleaningTrialSpec& spec, const CentroidIndex& classifier,
                       std::size_t n_vote, const TestPool& pool, std::uint64_t trial);

StageCounts count_stages(const TrialOutcome& outcome);
ErrorBreakdown breakdown(const StageCounts& counts);

ErrorBreakdown run_campaign(const CleaningTrialSpec& spec, std::size_t n_trials,
                            const CentroidIndex& classifier, std::size_t n_vote,
                            const TestPool& pool, std::size_t threads = 1);

// Classification error the campaign converges to: every pool vector is
// classified once and per-class error rates are weighted by how often the
// table draws each class.
double expected_classification_error(const CleaningTrialSpec& spec,
                                     const CentroidIndex& classifier, std::size_t n_vote,
                                     const TestPool& pool);

// Three-row table using the task's error names.
std::string format_breakdown(const ErrorBreakdown& b);

}  // namespace cbcl
