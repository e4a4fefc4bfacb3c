#include "cbcl/linear_head.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "cbcl/random.hpp"

namespace cbcl {

LinearHead::LinearHead(Eigen::Index dim, std::vector<ClassId> row_classes)
    : weights(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(row_classes.size()), dim)),
      bias(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(row_classes.size()))),
      classes(std::move(row_classes)) {
  std::set<ClassId> unique(classes.begin(), classes.end());
  if (unique.size() != classes.size()) {
    throw DataError(DataError::Kind::kInvalidArgument, "LinearHead: duplicate class rows");
  }
}

Eigen::Index LinearHead::row_of(ClassId c) const {
  auto it = std::find(classes.begin(), classes.end(), c);
  return it == classes.end() ? -1 : static_cast<Eigen::Index>(it - classes.begin());
}

void LinearHead::add_classes(const std::vector<ClassId>& new_classes) {
  std::set<ClassId> incoming;
  for (auto c : new_classes) {
    if (row_of(c) >= 0 || !incoming.insert(c).second) {
      throw DataError(DataError::Kind::kInvalidArgument,
                      "LinearHead: class " + std::to_string(c) + " already has a row");
    }
  }
  const Eigen::Index old_rows = n_classes();
  const auto added = static_cast<Eigen::Index>(new_classes.size());
  weights.conservativeResize(old_rows + added, Eigen::NoChange);
  weights.bottomRows(added).setZero();
  bias.conservativeResize(old_rows + added);
  bias.tail(added).setZero();
  classes.insert(classes.end(), new_classes.begin(), new_classes.end());
}

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate),
          "train: learning_rate must be finite and >= 0");
  require(epochs >= 1, "train: epochs must be >= 1");
  require(batch_size >= 1, "train: batch_size must be >= 1");
}

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double top = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - top).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

Eigen::VectorXd forward(const LinearHead& head, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != head.dim()) {
    throw DataError(DataError::Kind::kDimMismatch, "forward: dimension mismatch");
  }
  if (head.n_classes() == 0) throw DataError(DataError::Kind::kInvalidArgument, "empty head");
  const Eigen::MatrixXd logits = head.weights * x + head.bias;
  return softmax_columns(logits).col(0);
}

ClassId predict(const LinearHead& head, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::VectorXd p = forward(head, x);
  Eigen::Index best = 0;
  for (Eigen::Index r = 1; r < p.size(); ++r) {
    if (p(r) > p(best) || (p(r) == p(best) && head.classes[r] < head.classes[best])) best = r;
  }
  return head.classes[static_cast<std::size_t>(best)];
}

namespace {

void check_batch(const LinearHead& head, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                 const std::vector<Eigen::Index>& rows) {
  if (inputs.cols() == 0) throw DataError(DataError::Kind::kInvalidArgument, "empty batch");
  if (inputs.rows() != head.dim()) {
    throw DataError(DataError::Kind::kDimMismatch, "batch: dimension mismatch");
  }
  if (static_cast<Eigen::Index>(rows.size()) != inputs.cols()) {
    throw DataError(DataError::Kind::kInvalidArgument, "batch: one target per column required");
  }
  for (auto r : rows) {
    if (r < 0 || r >= head.n_classes()) {
      throw DataError(DataError::Kind::kUnknownLabel, "batch: target outside the head's classes");
    }
  }
}

}  // namespace

Gradient gradient(const LinearHead& head, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                  const std::vector<Eigen::Index>& rows) {
  check_batch(head, inputs, rows);
  Eigen::MatrixXd logits = head.weights * inputs;
  logits.colwise() += head.bias;
  Eigen::MatrixXd delta = softmax_columns(logits);
  for (std::size_t j = 0; j < rows.size(); ++j) delta(rows[j], static_cast<Eigen::Index>(j)) -= 1.0;
  const double inv = 1.0 / static_cast<double>(inputs.cols());
  return {delta * inputs.transpose() * inv, delta.rowwise().sum() * inv};
}

double loss(const LinearHead& head, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
            const std::vector<Eigen::Index>& rows) {
  check_batch(head, inputs, rows);
  Eigen::MatrixXd logits = head.weights * inputs;
  logits.colwise() += head.bias;
  double total = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double top = logits.col(j).maxCoeff();
    const double log_z = top + std::log((logits.col(j).array() - top).exp().sum());
    total += log_z - logits(rows[static_cast<std::size_t>(j)], j);
  }
  return total / static_cast<double>(inputs.cols());
}

LinearHead train(LinearHead head, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw DataError(DataError::Kind::kInvalidArgument, "train: empty data");
  if (data.dim() != head.dim()) {
    throw DataError(DataError::Kind::kDimMismatch, "train: data dim differs from head");
  }
  std::vector<Eigen::Index> targets(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    targets[i] = head.row_of(data.labels[i]);
    if (targets[i] < 0) {
      throw DataError(DataError::Kind::kUnknownLabel,
                      "train: label " + std::to_string(data.labels[i]) + " has no head row");
    }
  }
  const Eigen::MatrixXd inputs = data.features.cast<double>();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(cfg.seed);

  Eigen::MatrixXd batch;
  std::vector<Eigen::Index> batch_rows;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.resize(inputs.rows(), static_cast<Eigen::Index>(end - start));
      batch_rows.clear();
      for (std::size_t k = start; k < end; ++k) {
        batch.col(static_cast<Eigen::Index>(k - start)) = inputs.col(static_cast<Eigen::Index>(order[k]));
        batch_rows.push_back(targets[order[k]]);
      }
      const Gradient g = gradient(head, batch, batch_rows);
      head.weights -= cfg.learning_rate * g.weights;
      head.bias -= cfg.learning_rate * g.bias;
    }
  }
  return head;
}

std::vector<ClassId> classes_present(const Dataset& ds) {
  std::set<ClassId> s(ds.labels.begin(), ds.labels.end());
  return {s.begin(), s.end()};
}

LinearHead run_flb_increment(const Dataset& all_data_so_far, const TrainConfig& cfg) {
  if (all_data_so_far.empty()) {
    throw DataError(DataError::Kind::kInvalidArgument, "FLB: empty training data");
  }
  return train(LinearHead(all_data_so_far.dim(), classes_present(all_data_so_far)),
               all_data_so_far, cfg);
}

LinearHead run_ft_increment(LinearHead head, const Dataset& new_data_only, const TrainConfig& cfg) {
  if (new_data_only.empty()) {
    throw DataError(DataError::Kind::kInvalidArgument, "FT: empty training data");
  }
  if (head.n_classes() == 0) head = LinearHead(new_data_only.dim(), {});
  head.add_classes(classes_present(new_data_only));
  return train(std::move(head), new_data_only, cfg);
}

double accuracy(const LinearHead& head, const Dataset& test) {
  if (test.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Eigen::VectorXd x = test.vector(i).cast<double>();
    if (predict(head, x) == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace cbcl
