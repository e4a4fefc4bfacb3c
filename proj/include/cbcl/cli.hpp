#pragma once

// The `cbcl` command-line tool. Everything lives behind run_cli so tests can
// drive the commands in-process.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cbcl/feature_space.hpp"
#include "cbcl/linear_head.hpp"

namespace cbcl::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kInternalError = 3 };

// "classes=22,dim=32,per_class=30,scale=1,stddev=0.1,seed=0"; omitted keys
// keep their defaults and "default" or "" means all defaults.
SyntheticSpec parse_synthetic(const std::string& text);
std::string format_synthetic(const SyntheticSpec& spec);

struct ExperimentConfig {
  std::string dataset;  // feature file; empty when synthetic is set
  std::optional<SyntheticSpec> synthetic;
  std::size_t shots = 5;
  std::size_t classes_per_increment = 2;
  std::size_t runs = 10;
  std::string method = "cbcl";  // cbcl | ft | flb
  std::uint64_t seed = 0;
  std::string grid = "auto";
  std::size_t folds = 5;
  TrainConfig train;  // baseline optimiser; its seed is derived per run
  std::string out;

  void validate() const;
  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
};

Dataset load_dataset(const ExperimentConfig& cfg);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cbcl::cli
