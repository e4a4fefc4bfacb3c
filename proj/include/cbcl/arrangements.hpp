#pragma once

// Object-arrangement concepts learned from a single example.
//
// A scene is encoded over N known classes as a binary vector of length
// N + 2N^2: class presence, then a row-major N x N left-of matrix, then a
// row-major N x N above matrix. Bit (i, j) of a relation matrix means the
// object of class i is left of (resp. above) the object of class j.

#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cbcl/feature_space.hpp"

namespace cbcl {

struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
};

struct SceneObject {
  ClassId label = 0;
  Box box;
};

struct Scene {
  std::vector<SceneObject> objects;
  double width = 0.0;
  double height = 0.0;

  // Throws on degenerate or out-of-bounds boxes and on repeated classes.
  void validate() const;
};

enum class Relation { kLeftOf, kAbove };

struct RelationFact {
  ClassId first = 0;  // left of / above `second`
  ClassId second = 0;
  Relation relation = Relation::kLeftOf;

  bool operator==(const RelationFact&) const = default;
};

// One fact per unordered pair from box centers: the dominant axis of the
// center offset decides (x wins ties), with y growing downward.
std::vector<RelationFact> derive_relations(const Scene& scene);

class ArrangementVector {
 public:
  ArrangementVector() = default;
  explicit ArrangementVector(std::size_t n_classes);

  std::size_t n_classes() const { return n_; }
  std::size_t size() const { return bits_.size(); }

  bool present(ClassId c) const { return bits_[c]; }
  bool left_of(ClassId i, ClassId j) const { return bits_[n_ + i * n_ + j]; }
  bool above(ClassId i, ClassId j) const { return bits_[n_ + n_ * n_ + i * n_ + j]; }

  void set_present(ClassId c) { bits_[c] = true; }
  void set_left_of(ClassId i, ClassId j) { bits_[n_ + i * n_ + j] = true; }
  void set_above(ClassId i, ClassId j) { bits_[n_ + n_ * n_ + i * n_ + j] = true; }

  std::set<ClassId> present_classes() const;
  std::size_t count() const;
  const std::vector<bool>& bits() const { return bits_; }

  // Bit runs alternating 0s and 1s, starting with a (possibly empty) run of 0s.
  std::string run_length() const;
  static ArrangementVector from_run_length(std::size_t n_classes, const std::string& text);

  bool operator==(const ArrangementVector&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<bool> bits_;
};

constexpr std::size_t arrangement_length(std::size_t n_classes) {
  return n_classes + 2 * n_classes * n_classes;
}

ArrangementVector encode(const Scene& scene, std::size_t n_classes);

// Number of differing bits; equals squared Euclidean distance on {0,1}.
std::size_t hamming_distance(const ArrangementVector& a, const ArrangementVector& b);

struct ArrangementStore {
  LabelMap classes;
  std::vector<std::pair<std::string, ArrangementVector>> centroids;

  std::size_t n_classes() const { return classes.size(); }
};

// Appends encode(scene); the store is unchanged when this throws.
void learn_arrangement(ArrangementStore& store, const std::string& name, const Scene& scene);

enum class VerdictKind { kConsistent, kMissing, kWrong };

std::string to_string(VerdictKind kind);

struct ArrangementVerdict {
  std::vector<std::string> closest;  // every centroid at the minimum distance
  std::size_t distance = 0;
  VerdictKind kind = VerdictKind::kConsistent;
  std::set<ClassId> missing_classes;
  std::set<std::pair<ClassId, ClassId>> wrong_pairs;  // (observed, expected)
  std::set<ClassId> extra_classes;  // present but nothing expected in their place
  bool relations_differ = false;
  bool low_confidence = false;
};

ArrangementVerdict check_arrangement(const ArrangementStore& store, const Scene& scene);

// Scene text: `image <width> <height>` then `<label> x_min y_min x_max y_max`.
Scene parse_scene(const std::string& text, const LabelMap& classes);
Scene load_scene(const std::filesystem::path& path, const LabelMap& classes);
std::string format_scene(const Scene& scene, const LabelMap& classes);

void save_arrangement_store(const ArrangementStore& store, const std::filesystem::path& path);
ArrangementStore load_arrangement_store(const std::filesystem::path& path);

// Human-readable verdict, one fact per line.
std::string format_verdict(const ArrangementVerdict& verdict, const LabelMap& classes);

}  // namespace cbcl
