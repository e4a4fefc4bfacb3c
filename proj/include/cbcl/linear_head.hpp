#pragma once

// Linear softmax classifier head trained with plain minibatch SGD on mean
// cross-entropy. Used for the fine-tuning (FT) and few-shot learning
// baseline (FLB) comparisons.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "cbcl/feature_space.hpp"

namespace cbcl {

struct LinearHead {
  Eigen::MatrixXd weights;     // n_classes x dim
  Eigen::VectorXd bias;        // n_classes
  std::vector<ClassId> classes;  // row -> class id

  LinearHead() = default;
  LinearHead(Eigen::Index dim, std::vector<ClassId> row_classes);

  Eigen::Index dim() const { return weights.cols(); }
  Eigen::Index n_classes() const { return weights.rows(); }

  // Row of `c`, or -1 when the head has no row for it.
  Eigen::Index row_of(ClassId c) const;

  // Appends zero-initialized rows. Throws if any class already has a row.
  void add_classes(const std::vector<ClassId>& new_classes);

  bool operator==(const LinearHead& other) const {
    return classes == other.classes && weights.rows() == other.weights.rows() &&
           weights.cols() == other.weights.cols() && weights == other.weights &&
           bias == other.bias;
  }
};

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

// Max-subtracted softmax, column-wise on a logits matrix.
Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits);

Eigen::VectorXd forward(const LinearHead& head, const Eigen::Ref<const Eigen::VectorXd>& x);

ClassId predict(const LinearHead& head, const Eigen::Ref<const Eigen::VectorXd>& x);

struct Gradient {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};

// Gradient of mean cross-entropy over a batch. `inputs` is dim x B and
// `rows` the target row index of each column.
Gradient gradient(const LinearHead& head, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                  const std::vector<Eigen::Index>& rows);

// Mean cross-entropy, the objective `gradient` differentiates.
double loss(const LinearHead& head, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
            const std::vector<Eigen::Index>& rows);

// `epochs` passes over seeded-shuffled minibatches (last short batch kept).
LinearHead train(LinearHead head, const Dataset& data, const TrainConfig& cfg);

// Fresh head over every class in `all_data_so_far`, trained on all of it.
LinearHead run_flb_increment(const Dataset& all_data_so_far, const TrainConfig& cfg);

// Expands `head` with zero rows for the new classes and trains on the new
// increment's data only.
LinearHead run_ft_increment(LinearHead head, const Dataset& new_data_only,
                            const TrainConfig& cfg);

double accuracy(const LinearHead& head, const Dataset& test);

// Distinct labels of a dataset in ascending order.
std::vector<ClassId> classes_present(const Dataset& ds);

}  // namespace cbcl
