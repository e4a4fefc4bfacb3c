#include "cbcl/cleaning_sim.hpp"

#include <cstdio>
#include <functional>

#include "cbcl/detail/parallel.hpp"
#include "cbcl/random.hpp"

namespace cbcl {

void CleaningTrialSpec::validate() const {
  require(n_objects >= 1, "cleaning: n_objects must be >= 1");
  require(n_targets <= n_objects, "cleaning: n_targets must not exceed n_objects");
  require(p_detect_miss >= 0.0 && p_detect_miss <= 1.0, "cleaning: p_detect_miss must be in [0,1]");
  require(p_move_fail >= 0.0 && p_move_fail <= 1.0, "cleaning: p_move_fail must be in [0,1]");
}

StageCounts& StageCounts::operator+=(const StageCounts& other) {
  objects += other.objects;
  missed += other.missed;
  classified += other.classified;
  misclassified += other.misclassified;
  move_attempts += other.move_attempts;
  move_failures += other.move_failures;
  return *this;
}

TestPool::TestPool(const Dataset& pool) : data_(pool), by_class_(pool.indices_by_class()) {
  for (std::size_t c = 0; c < by_class_.size(); ++c) {
    if (!by_class_[c].empty()) classes_.push_back(static_cast<ClassId>(c));
  }
}

const std::vector<std::size_t>& TestPool::members(ClassId c) const {
  if (c >= by_class_.size() || by_class_[c].empty()) {
    throw DataError(DataError::Kind::kInvalidArgument,
                    "cleaning: no held-out vectors for class " + std::to_string(c));
  }
  return by_class_[c];
}

namespace {

std::vector<ClassId> distractor_classes(const CleaningTrialSpec& spec, const TestPool& pool) {
  std::vector<ClassId> out;
  for (auto c : pool.classes()) {
    if (c != spec.target_class) out.push_back(c);
  }
  if (out.empty() && spec.n_objects > spec.n_targets) {
    throw DataError(DataError::Kind::kInvalidArgument,
                    "cleaning: pool has no classes besides the target");
  }
  return out;
}

}  // namespace

TrialOutcome run_trial(const CleaningTrialSpec& spec, const CentroidIndex& classifier,
                       std::size_t n_vote, const TestPool& pool, std::uint64_t trial) {
  spec.validate();
  const auto& target_members = pool.members(spec.target_class);
  const auto others = distractor_classes(spec, pool);
  Rng rng(derive_seed(spec.seed, trial));

  TrialOutcome out;
  out.objects.reserve(spec.n_objects);
  for (std::size_t k = 0; k < spec.n_objects; ++k) {
    ObjectOutcome o;
    o.is_target = k < spec.n_targets;
    o.true_class = o.is_target ? spec.target_class : others[rng.below(others.size())];
    const auto& members = o.is_target ? target_members : pool.members(o.true_class);
    const std::size_t vec = members[rng.below(members.size())];
    o.detected = !rng.bernoulli(spec.p_detect_miss);
    if (o.detected) {
      o.classified = true;
      const Eigen::VectorXd x = pool.data().vector(vec).cast<double>();
      o.predicted = classifier.predict(x, n_vote);
      if (o.is_target && o.predicted == spec.target_class) {
        o.move_attempted = true;
        o.moved = !rng.bernoulli(spec.p_move_fail);
      }
    }
    out.objects.push_back(o);
  }
  return out;
}

StageCounts count_stages(const TrialOutcome& outcome) {
  StageCounts s;
  for (const auto& o : outcome.objects) {
    ++s.objects;
    if (!o.detected) {
      ++s.missed;
      continue;
    }
    ++s.classified;
    if (o.predicted != o.true_class) ++s.misclassified;
    if (o.move_attempted) {
      ++s.move_attempts;
      if (!o.moved) ++s.move_failures;
    }
  }
  return s;
}

ErrorBreakdown breakdown(const StageCounts& counts) {
  auto pct = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
  };
  return {pct(counts.missed, counts.objects), pct(counts.misclassified, counts.classified),
          pct(counts.move_failures, counts.move_attempts), counts};
}

ErrorBreakdown run_campaign(const CleaningTrialSpec& spec, std::size_t n_trials,
                            const CentroidIndex& classifier, std::size_t n_vote,
                            const TestPool& pool, std::size_t threads) {
  spec.validate();
  require(n_trials >= 1, "cleaning: n_trials must be >= 1");
  // Chunked so each worker returns counts rather than every outcome.
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (n_trials + kChunk - 1) / kChunk;
  const std::function<StageCounts(std::size_t)> run_chunk = [&](std::size_t chunk) {
    StageCounts s;
    const std::size_t end = std::min(n_trials, (chunk + 1) * kChunk);
    for (std::size_t t = chunk * kChunk; t < end; ++t) {
      s += count_stages(run_trial(spec, classifier, n_vote, pool, t));
    }
    return s;
  };
  StageCounts total;
  for (const auto& s : parallel_map(chunks, threads, run_chunk)) total += s;
  return breakdown(total);
}

double expected_classification_error(const CleaningTrialSpec& spec,
                                     const CentroidIndex& classifier, std::size_t n_vote,
                                     const TestPool& pool) {
  spec.validate();
  const auto others = distractor_classes(spec, pool);
  auto class_error = [&](ClassId c) {
    const auto& members = pool.members(c);
    std::size_t wrong = 0;
    for (auto i : members) {
      const Eigen::VectorXd x = pool.data().vector(i).cast<double>();
      if (classifier.predict(x, n_vote) != c) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(members.size());
  };
  // Detection is independent of class, so conditioning on it leaves the
  // class mix unchanged.
  const double n = static_cast<double>(spec.n_objects);
  double err = static_cast<double>(spec.n_targets) / n * class_error(spec.target_class);
  if (spec.n_objects > spec.n_targets) {
    const double each = static_cast<double>(spec.n_objects - spec.n_targets) / n /
                        static_cast<double>(others.size());
    for (auto c : others) err += each * class_error(c);
  }
  return 100.0 * err;
}

std::string format_breakdown(const ErrorBreakdown& b) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "Error Type            Error (%%)\n"
                "Detection Error       %.2f\n"
                "Classification Error  %.2f\n"
                "Movement Error        %.2f\n",
                b.detection_error, b.classification_error, b.movement_error);
  return buf;
}

}  // namespace cbcl
