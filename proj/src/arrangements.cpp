#include "cbcl/arrangements.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace cbcl {
namespace fs = std::filesystem;

namespace {

std::string fmt_number(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool has_whitespace(const std::string& s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char ch) { return std::isspace(ch); });
}

}  // namespace

void Scene::validate() const {
  require(width > 0.0 && height > 0.0, "scene: image size must be positive");
  std::set<ClassId> seen;
  for (const auto& o : objects) {
    const Box& b = o.box;
    require(b.x_min < b.x_max && b.y_min < b.y_max,
            "scene: box of class " + std::to_string(o.label) + " is degenerate");
    require(b.x_min >= 0.0 && b.y_min >= 0.0 && b.x_max <= width && b.y_max <= height,
            "scene: box of class " + std::to_string(o.label) + " leaves the image");
    require(seen.insert(o.label).second,
            "scene: class " + std::to_string(o.label) + " appears more than once");
  }
}

std::vector<RelationFact> derive_relations(const Scene& scene) {
  scene.validate();
  std::vector<RelationFact> facts;
  const auto& objs = scene.objects;
  for (std::size_t a = 0; a < objs.size(); ++a) {
    for (std::size_t b = a + 1; b < objs.size(); ++b) {
      const SceneObject& p = objs[a];
      const SceneObject& q = objs[b];
      const double dx = q.box.center_x() - p.box.center_x();
      const double dy = q.box.center_y() - p.box.center_y();
      if (dx == 0.0 && dy == 0.0) {
        facts.push_back({std::min(p.label, q.label), std::max(p.label, q.label), Relation::kLeftOf});
      } else if (std::abs(dx) >= std::abs(dy)) {
        facts.push_back(dx > 0.0 ? RelationFact{p.label, q.label, Relation::kLeftOf}
                                 : RelationFact{q.label, p.label, Relation::kLeftOf});
      } else {
        facts.push_back(dy > 0.0 ? RelationFact{p.label, q.label, Relation::kAbove}
                                 : RelationFact{q.label, p.label, Relation::kAbove});
      }
    }
  }
  return facts;
}

ArrangementVector::ArrangementVector(std::size_t n_classes)
    : n_(n_classes), bits_(arrangement_length(n_classes), false) {}

std::set<ClassId> ArrangementVector::present_classes() const {
  std::set<ClassId> out;
  for (std::size_t c = 0; c < n_; ++c) {
    if (bits_[c]) out.insert(static_cast<ClassId>(c));
  }
  return out;
}

std::size_t ArrangementVector::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true));
}

std::string ArrangementVector::run_length() const {
  std::string out;
  bool current = false;
  std::size_t run = 0;
  for (bool b : bits_) {
    if (b == current) {
      ++run;
    } else {
      out += std::to_string(run) + ',';
      current = b;
      run = 1;
    }
  }
  out += std::to_string(run);
  return out;
}

ArrangementVector ArrangementVector::from_run_length(std::size_t n_classes,
                                                     const std::string& text) {
  ArrangementVector v(n_classes);
  std::size_t pos = 0;
  bool current = false;
  std::istringstream in(text);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    std::size_t run = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), run);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
      throw DataError(DataError::Kind::kMalformedHeader, "arrangement: bad run `" + cell + "`");
    }
    if (pos + run > v.bits_.size()) {
      throw DataError(DataError::Kind::kDimMismatch, "arrangement: runs exceed vector length");
    }
    std::fill_n(v.bits_.begin() + static_cast<std::ptrdiff_t>(pos), run, current);
    pos += run;
    current = !current;
  }
  if (pos != v.bits_.size()) {
    throw DataError(DataError::Kind::kDimMismatch,
                    "arrangement: runs cover " + std::to_string(pos) + " of " +
                        std::to_string(v.bits_.size()) + " bits");
  }
  return v;
}

ArrangementVector encode(const Scene& scene, std::size_t n_classes) {
  for (const auto& o : scene.objects) {
    if (o.label >= n_classes) {
      throw DataError(DataError::Kind::kUnknownLabel,
                      "encode: class " + std::to_string(o.label) + " outside the " +
                          std::to_string(n_classes) + " known classes");
    }
  }
  ArrangementVector v(n_classes);
  for (const auto& o : scene.objects) v.set_present(o.label);
  for (const auto& f : derive_relations(scene)) {
    if (f.relation == Relation::kLeftOf) {
      v.set_left_of(f.first, f.second);
    } else {
      v.set_above(f.first, f.second);
    }
  }
  return v;
}

std::size_t hamming_distance(const ArrangementVector& a, const ArrangementVector& b) {
  if (a.size() != b.size()) {
    throw DataError(DataError::Kind::kDimMismatch, "arrangement vectors differ in length");
  }
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a.bits()[i] != b.bits()[i];
  return d;
}

void learn_arrangement(ArrangementStore& store, const std::string& name, const Scene& scene) {
  require(!name.empty() && !has_whitespace(name), "arrangement name must be a non-empty word");
  for (const auto& [existing, _] : store.centroids) {
    require(existing != name, "arrangement `" + name + "` already learned");
  }
  ArrangementVector v = encode(scene, store.n_classes());
  store.centroids.emplace_back(name, std::move(v));
}

std::string to_string(VerdictKind kind) {
  switch (kind) {
    case VerdictKind::kConsistent: return "consistent";
    case VerdictKind::kMissing: return "missing";
    case VerdictKind::kWrong: return "wrong";
  }
  return "?";
}

ArrangementVerdict check_arrangement(const ArrangementStore& store, const Scene& scene) {
  if (store.centroids.empty()) {
    throw DataError(DataError::Kind::kInvalidArgument, "check_arrangement: no arrangements learned");
  }
  const ArrangementVector test = encode(scene, store.n_classes());
  ArrangementVerdict verdict;
  verdict.distance = std::numeric_limits<std::size_t>::max();
  std::vector<const ArrangementVector*> nearest;
  for (const auto& [name, v] : store.centroids) {
    const std::size_t d = hamming_distance(test, v);
    if (d < verdict.distance) {
      verdict.distance = d;
      verdict.closest.clear();
      nearest.clear();
    }
    if (d == verdict.distance) {
      verdict.closest.push_back(name);
      nearest.push_back(&v);
    }
  }

  const std::set<ClassId> observed = test.present_classes();
  for (const ArrangementVector* c : nearest) {
    const std::set<ClassId> expected = c->present_classes();
    std::vector<ClassId> absent;  // expected but not observed
    std::vector<ClassId> extra;   // observed but not expected
    std::set_difference(expected.begin(), expected.end(), observed.begin(), observed.end(),
                        std::back_inserter(absent));
    std::set_difference(observed.begin(), observed.end(), expected.begin(), expected.end(),
                        std::back_inserter(extra));
    const std::size_t swaps = std::min(absent.size(), extra.size());
    for (std::size_t k = 0; k < swaps; ++k) verdict.wrong_pairs.emplace(extra[k], absent[k]);
    verdict.missing_classes.insert(absent.begin() + static_cast<std::ptrdiff_t>(swaps), absent.end());
    verdict.extra_classes.insert(extra.begin() + static_cast<std::ptrdiff_t>(swaps), extra.end());
    if (swaps > 1) verdict.low_confidence = true;
    if (absent.empty() && extra.empty() && hamming_distance(test, *c) != 0) {
      verdict.relations_differ = true;
    }
  }
  if (!verdict.wrong_pairs.empty()) {
    verdict.kind = VerdictKind::kWrong;
  } else if (!verdict.missing_classes.empty()) {
    verdict.kind = VerdictKind::kMissing;
  } else {
    verdict.kind = VerdictKind::kConsistent;
  }
  return verdict;
}

Scene parse_scene(const std::string& text, const LabelMap& classes) {
  Scene scene;
  bool have_header = false;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string head;
    if (!(fields >> head)) continue;
    const std::string where = "scene line " + std::to_string(line_no) + ": ";
    if (!have_header) {
      if (head != "image" || !(fields >> scene.width >> scene.height)) {
        throw DataError(DataError::Kind::kMalformedHeader,
                        where + "expected `image <width> <height>`");
      }
      have_header = true;
      continue;
    }
    SceneObject o;
    o.label = classes.id(head);
    if (!(fields >> o.box.x_min >> o.box.y_min >> o.box.x_max >> o.box.y_max)) {
      throw DataError(DataError::Kind::kMalformedHeader,
                      where + "expected `<label> x_min y_min x_max y_max`");
    }
    std::string rest;
    if (fields >> rest) {
      throw DataError(DataError::Kind::kMalformedHeader, where + "unexpected `" + rest + "`");
    }
    scene.objects.push_back(o);
  }
  if (!have_header) {
    throw DataError(DataError::Kind::kMalformedHeader, "scene: missing `image` header");
  }
  scene.validate();
  return scene;
}

Scene load_scene(const fs::path& path, const LabelMap& classes) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::kIo, path.string() + ": cannot open for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_scene(buf.str(), classes);
  } catch (const DataError& e) {
    throw DataError(e.kind(), path.string() + ": " + e.what(), e.byte_offset());
  }
}

std::string format_scene(const Scene& scene, const LabelMap& classes) {
  std::string out = "image " + fmt_number(scene.width) + " " + fmt_number(scene.height) + "\n";
  for (const auto& o : scene.objects) {
    out += classes.name(o.label) + " " + fmt_number(o.box.x_min) + " " + fmt_number(o.box.y_min) +
           " " + fmt_number(o.box.x_max) + " " + fmt_number(o.box.y_max) + "\n";
  }
  return out;
}

void save_arrangement_store(const ArrangementStore& store, const fs::path& path) {
  std::string out = "cbcl-arrangements 1\n";
  out += "classes " + std::to_string(store.n_classes()) + "\n";
  for (std::size_t c = 0; c < store.n_classes(); ++c) {
    out += "class " + std::to_string(c) + " " + store.classes.name(static_cast<ClassId>(c)) + "\n";
  }
  for (const auto& [name, v] : store.centroids) {
    out += "arrangement " + name + " " + v.run_length() + "\n";
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError(DataError::Kind::kIo, path.string() + ": cannot open for writing");
  f << out;
  if (!f) throw DataError(DataError::Kind::kIo, path.string() + ": write failed");
}

ArrangementStore load_arrangement_store(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::kIo, path.string() + ": cannot open for reading");
  auto fail = [&](std::size_t line_no, const std::string& msg) {
    return DataError(DataError::Kind::kMalformedHeader,
                     path.string() + ": line " + std::to_string(line_no) + ": " + msg);
  };
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != "cbcl-arrangements 1") {
    throw fail(1, "expected `cbcl-arrangements 1`");
  }
  ArrangementStore store;
  std::size_t n_classes = 0;
  bool have_count = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string head;
    if (!(fields >> head)) continue;
    if (head == "classes") {
      if (have_count || !(fields >> n_classes)) throw fail(line_no, "bad `classes` line");
      have_count = true;
    } else if (head == "class") {
      std::size_t id = 0;
      std::string name;
      if (!(fields >> id >> name) || id != store.classes.size()) {
        throw fail(line_no, "classes must be listed densely as `class <id> <name>`");
      }
      store.classes.add(name);
    } else if (head == "arrangement") {
      std::string name;
      std::string runs;
      if (!(fields >> name >> runs)) throw fail(line_no, "expected `arrangement <name> <runs>`");
      if (store.classes.size() != n_classes) throw fail(line_no, "class list incomplete");
      try {
        store.centroids.emplace_back(name, ArrangementVector::from_run_length(n_classes, runs));
      } catch (const DataError& e) {
        throw fail(line_no, e.what());
      }
    } else {
      throw fail(line_no, "unknown record `" + head + "`");
    }
  }
  if (!have_count || store.classes.size() != n_classes) throw fail(line_no, "class list incomplete");
  return store;
}

std::string format_verdict(const ArrangementVerdict& verdict, const LabelMap& classes) {
  std::string out = "verdict " + to_string(verdict.kind) + "\n";
  out += "distance " + std::to_string(verdict.distance) + "\n";
  out += "closest";
  for (const auto& n : verdict.closest) out += " " + n;
  out += "\n";
  for (auto c : verdict.missing_classes) out += "missing " + classes.name(c) + "\n";
  for (const auto& [observed, expected] : verdict.wrong_pairs) {
    out += "wrong " + classes.name(observed) + " expected " + classes.name(expected) + "\n";
  }
  for (auto c : verdict.extra_classes) out += "extra " + classes.name(c) + "\n";
  if (verdict.relations_differ) out += "note object placement differs from the closest arrangement\n";
  if (verdict.low_confidence) out += "note several substitutions; pairing is low confidence\n";
  return out;
}

}  // namespace cbcl
