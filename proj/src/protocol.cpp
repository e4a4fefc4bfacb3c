#include "cbcl/protocol.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "cbcl/random.hpp"

namespace cbcl {

void IncrementPlan::validate(const Dataset& ds) const {
  require(classes_per_increment >= 1, "plan: classes_per_increment must be >= 1");
  require(shots >= 1, "plan: shots must be >= 1");
  std::set<ClassId> present(ds.labels.begin(), ds.labels.end());
  std::set<ClassId> ordered(class_order.begin(), class_order.end());
  require(ordered.size() == class_order.size(), "plan: class order repeats a class");
  require(ordered == present, "plan: class order must cover every dataset class exactly once");
}

std::vector<std::vector<ClassId>> IncrementPlan::increments() const {
  std::vector<std::vector<ClassId>> out;
  for (std::size_t i = 0; i < class_order.size(); i += classes_per_increment) {
    const std::size_t end = std::min(class_order.size(), i + classes_per_increment);
    out.emplace_back(class_order.begin() + static_cast<std::ptrdiff_t>(i),
                     class_order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

IncrementPlan make_plan(const Dataset& ds, std::size_t classes_per_increment, std::size_t shots,
                        std::uint64_t seed) {
  IncrementPlan plan;
  plan.classes_per_increment = classes_per_increment;
  plan.shots = shots;
  plan.seed = seed;
  plan.class_order = classes_present(ds);
  Rng rng(derive_seed(seed, kClassOrderStream));
  rng.shuffle(std::span<ClassId>(plan.class_order));
  plan.validate(ds);
  return plan;
}

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(text);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  return out;
}

template <typename T>
T parse_number(const std::string& s, const char* what) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(DataError::Kind::kInvalidArgument,
                    std::string("grid: bad ") + what + " `" + s + "`");
  }
  return v;
}

std::string shortest(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

GridSpec parse_grid(const std::string& text) {
  GridSpec grid;
  if (text.empty() || text == "auto") return grid;
  const auto halves = split(text, '/');
  if (halves.size() != 2) {
    throw DataError(DataError::Kind::kInvalidArgument,
                    "grid: expected `auto` or `<D,...>/<n,...>`, got `" + text + "`");
  }
  std::vector<double> thresholds;
  std::vector<std::size_t> votes;
  for (const auto& d : split(halves[0], ',')) {
    const double v = parse_number<double>(d, "threshold");
    require(v >= 0.0 && std::isfinite(v), "grid: thresholds must be finite and >= 0");
    thresholds.push_back(v);
  }
  for (const auto& n : split(halves[1], ',')) {
    const auto v = parse_number<std::size_t>(n, "n_vote");
    require(v >= 1, "grid: n_vote must be >= 1");
    votes.push_back(v);
  }
  require(!thresholds.empty() && !votes.empty(), "grid: both lists must be non-empty");
  for (double d : thresholds) {
    for (auto n : votes) grid.points.push_back({d, n});
  }
  return grid;
}

std::string format_grid(const GridSpec& grid) {
  if (grid.points.empty()) return "auto";
  std::vector<double> thresholds;
  std::vector<std::size_t> votes;
  for (const auto& p : grid.points) {
    if (std::find(thresholds.begin(), thresholds.end(), p.threshold) == thresholds.end()) {
      thresholds.push_back(p.threshold);
    }
    if (std::find(votes.begin(), votes.end(), p.n_vote) == votes.end()) votes.push_back(p.n_vote);
  }
  std::string out;
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    out += (i ? "," : "") + shortest(thresholds[i]);
  }
  out += '/';
  for (std::size_t i = 0; i < votes.size(); ++i) {
    out += (i ? "," : "") + std::to_string(votes[i]);
  }
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError(DataError::Kind::kInvalidArgument, "quantile of nothing");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<double> intra_class_distances(const ClassExamples& per_class) {
  std::vector<double> out;
  for (const auto& [_, m] : per_class) {
    for (Eigen::Index i = 0; i < m.cols(); ++i) {
      for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
        out.push_back(euclidean_distance(m.col(i), m.col(j)));
      }
    }
  }
  return out;
}

std::vector<Hyperparams> expand_grid(const GridSpec& grid, const ClassExamples& new_class_data) {
  if (!grid.points.empty()) return grid.points;
  const auto dists = intra_class_distances(new_class_data);
  if (dists.empty()) return {};
  std::vector<Hyperparams> out;
  for (double q : grid.quantiles) {
    const double d = quantile(dists, q);
    for (auto n : grid.n_votes) out.push_back({d, n});
  }
  return out;
}

TuneResult tune_hyperparams(const ModelStore& store, const ClassExamples& new_class_data,
                            const std::vector<Hyperparams>& grid, std::size_t folds,
                            std::optional<Hyperparams> fallback) {
  if (new_class_data.empty()) {
    throw DataError(DataError::Kind::kInvalidArgument, "tune_hyperparams: no new-class data");
  }
  if (grid.empty()) {
    return {fallback.value_or(kDefaultHyperparams), 0.0, 0};
  }
  if (grid.size() == 1) return {grid.front(), 0.0, 0};

  Eigen::Index min_size = std::numeric_limits<Eigen::Index>::max();
  for (const auto& [_, m] : new_class_data) min_size = std::min(min_size, m.cols());
  const std::size_t k = std::min(folds, static_cast<std::size_t>(min_size));
  if (k < 2) return {fallback.value_or(kDefaultHyperparams), 0.0, 0};

  // Fold f holds the examples at positions f, f+k, f+2k... of every class.
  auto fold_part = [&](const FeatureMatrix& m, std::size_t f, bool held_out) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index i = 0; i < m.cols(); ++i) {
      if ((static_cast<std::size_t>(i) % k == f) == held_out) cols.push_back(i);
    }
    FeatureMatrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(cols[c]);
    return out;
  };

  std::size_t max_vote = 1;
  for (const auto& h : grid) max_vote = std::max(max_vote, h.n_vote);

  // Mean fold accuracy per grid point. Clustering depends only on D, so each
  // (D, fold) store is built once and scored for every n_vote with D.
  std::vector<double> score(grid.size(), 0.0);
  std::vector<bool> done(grid.size(), false);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (done[g]) continue;
    const double d = grid[g].threshold;
    std::vector<std::size_t> same_d;
    for (std::size_t h = g; h < grid.size(); ++h) {
      if (grid[h].threshold == d) same_d.push_back(h);
    }
    for (std::size_t f = 0; f < k; ++f) {
      ClassExamples train_part;
      for (const auto& [c, m] : new_class_data) train_part.emplace(c, fold_part(m, f, false));
      ModelStore candidate = learn_increment(store, train_part, d);
      CentroidIndex index(candidate);
      std::vector<std::size_t> correct(same_d.size(), 0);
      std::size_t total = 0;
      for (const auto& [c, m] : new_class_data) {
        const FeatureMatrix held = fold_part(m, f, true);
        for (Eigen::Index i = 0; i < held.cols(); ++i) {
          const Eigen::VectorXd x = held.col(i).cast<double>();
          const auto ranked = index.nearest(x, max_vote);
          for (std::size_t s = 0; s < same_d.size(); ++s) {
            if (argmax(vote(ranked, grid[same_d[s]].n_vote)) == c) ++correct[s];
          }
          ++total;
        }
      }
      for (std::size_t s = 0; s < same_d.size(); ++s) {
        score[same_d[s]] += static_cast<double>(correct[s]) / static_cast<double>(total);
      }
    }
    for (auto h : same_d) done[h] = true;
  }

  std::size_t best = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    score[g] /= static_cast<double>(k);
    if (g == 0) continue;
    const auto& a = grid[g];
    const auto& b = grid[best];
    if (score[g] > score[best] ||
        (score[g] == score[best] &&
         (a.threshold < b.threshold || (a.threshold == b.threshold && a.n_vote < b.n_vote)))) {
      best = g;
    }
  }
  return {grid[best], score[best], k};
}

namespace {

Dataset seen_subset(const Dataset& ds, const std::set<ClassId>& seen) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (seen.count(ds.labels[i])) idx.push_back(i);
  }
  return ds.subset(idx);
}

}  // namespace

SessionState run_cbcl_session(const Dataset& ds, const IncrementPlan& plan,
                              const CbclOptions& options) {
  plan.validate(ds);
  const Split split = split_shots(ds, plan.shots, plan.split_seed());
  const ClassExamples train_by_class = group_by_class(split.train);
  const std::size_t folds = std::min(options.folds, plan.shots);

  SessionState state;
  state.store = ModelStore(ds.dim());
  std::set<ClassId> seen;
  std::optional<Hyperparams> previous;
  std::size_t index = 0;
  for (const auto& increment : plan.increments()) {
    ++index;
    ClassExamples fresh;
    for (auto c : increment) fresh.emplace(c, train_by_class.at(c));
    const auto grid = expand_grid(options.grid, fresh);
    const TuneResult tuned = tune_hyperparams(state.store, fresh, grid, folds, previous);
    state.store = learn_increment(std::move(state.store), fresh, tuned.chosen.threshold);
    previous = tuned.chosen;
    state.hyper_history.push_back(tuned.chosen);
    for (auto c : increment) {
      seen.insert(c);
      state.learned_classes.push_back(c);
    }
    const Dataset test = seen_subset(split.test, seen);
    const CentroidIndex centroid_index(state.store);
    state.metrics.push_back({index, seen.size(), accuracy(centroid_index, test, tuned.chosen.n_vote)});
  }
  return state;
}

std::vector<IncrementMetrics> run_baseline_session(const Dataset& ds, const IncrementPlan& plan,
                                                   BaselineMethod method, const TrainConfig& cfg) {
  plan.validate(ds);
  cfg.validate();
  const Split split = split_shots(ds, plan.shots, plan.split_seed());

  std::vector<IncrementMetrics> metrics;
  std::set<ClassId> seen;
  LinearHead head(ds.dim(), {});
  std::size_t index = 0;
  for (const auto& increment : plan.increments()) {
    ++index;
    TrainConfig step = cfg;
    step.seed = derive_seed(cfg.seed, index);
    if (method == BaselineMethod::kFewShotBaseline) {
      for (auto c : increment) seen.insert(c);
      head = run_flb_increment(seen_subset(split.train, seen), step);
    } else {
      const std::set<ClassId> fresh(increment.begin(), increment.end());
      head = run_ft_increment(std::move(head), seen_subset(split.train, fresh), step);
      seen.insert(fresh.begin(), fresh.end());
    }
    metrics.push_back({index, seen.size(), accuracy(head, seen_subset(split.test, seen))});
  }
  return metrics;
}

RunSummary aggregate_runs(const std::vector<std::vector<IncrementMetrics>>& runs) {
  if (runs.empty()) throw DataError(DataError::Kind::kInvalidArgument, "aggregate: no runs");
  const std::size_t n_inc = runs.front().size();
  for (const auto& r : runs) {
    if (r.size() != n_inc) {
      throw DataError(DataError::Kind::kInvalidArgument, "aggregate: runs differ in length");
    }
  }
  RunSummary s;
  const double n_runs = static_cast<double>(runs.size());
  s.per_increment_mean.assign(n_inc, 0.0);
  s.per_increment_std.assign(n_inc, 0.0);
  for (std::size_t i = 0; i < n_inc; ++i) {
    s.n_classes_seen.push_back(runs.front()[i].n_classes_seen);
    // Sum in a fixed order of sorted values so the summary ignores run order.
    std::vector<double> acc;
    for (const auto& r : runs) acc.push_back(r[i].accuracy);
    std::sort(acc.begin(), acc.end());
    const double mean = std::accumulate(acc.begin(), acc.end(), 0.0) / n_runs;
    double ss = 0.0;
    for (double a : acc) ss += (a - mean) * (a - mean);
    s.per_increment_mean[i] = mean;
    s.per_increment_std[i] = runs.size() > 1 ? std::sqrt(ss / (n_runs - 1.0)) : 0.0;
  }
  std::vector<double> sorted_avgs;
  for (const auto& r : runs) {
    double total = 0.0;
    for (const auto& m : r) total += m.accuracy;
    const double avg = n_inc ? total / static_cast<double>(n_inc) : 0.0;
    sorted_avgs.push_back(avg);
  }
  std::sort(sorted_avgs.begin(), sorted_avgs.end());
  s.average_incremental_accuracy =
      std::accumulate(sorted_avgs.begin(), sorted_avgs.end(), 0.0) / n_runs;
  return s;
}

}  // namespace cbcl
