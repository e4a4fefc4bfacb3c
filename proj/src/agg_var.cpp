#include "cbcl/agg_var.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cbcl {
namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kStoreMagic = {'C', 'B', 'M', 'S'};
constexpr std::uint8_t kStoreVersion = 0x01;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  Reader(std::string bytes, fs::path path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += 4;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }

  float f32(const char* what) {
    const std::size_t at = pos_;
    const float v = std::bit_cast<float>(u32(what));
    if (!std::isfinite(v)) {
      throw DataError(DataError::Kind::kNonFinite,
                      path_.string() + ": non-finite " + what + " (byte " + std::to_string(at) + ")",
                      at);
    }
    return v;
  }

  void magic() {
    need(5, "header");
    if (std::memcmp(bytes_.data(), kStoreMagic.data(), 4) != 0) {
      throw DataError(DataError::Kind::kMalformedHeader, path_.string() + ": bad magic (byte 0)", 0);
    }
    if (static_cast<std::uint8_t>(bytes_[4]) != kStoreVersion) {
      throw DataError(DataError::Kind::kMalformedHeader,
                      path_.string() + ": unsupported version (byte 4)", 4);
    }
    pos_ = 5;
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw DataError(DataError::Kind::kTruncated,
                      path_.string() + ": truncated while reading " + what + " (byte " +
                          std::to_string(pos_) + ")",
                      pos_);
    }
  }

  std::string bytes_;
  fs::path path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t ModelStore::centroid_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : models_) n += m.centroids.size();
  return n;
}

const ClassModel& ModelStore::at(ClassId c) const {
  auto it = models_.find(c);
  if (it == models_.end()) {
    throw DataError(DataError::Kind::kUnknownLabel, "no model for class " + std::to_string(c));
  }
  return it->second;
}

std::vector<ClassId> ModelStore::classes() const {
  std::vector<ClassId> out;
  out.reserve(models_.size());
  for (const auto& [c, _] : models_) out.push_back(c);
  return out;
}

void ModelStore::put(ClassModel model) {
  if (model.centroids.empty()) {
    throw InvariantError("ModelStore::put: class model without centroids");
  }
  if (dim_ == 0) dim_ = model.dim();
  if (model.dim() != dim_) {
    throw DataError(DataError::Kind::kDimMismatch,
                    "ModelStore: class dim " + std::to_string(model.dim()) + " != store dim " +
                        std::to_string(dim_));
  }
  const ClassId label = model.label;
  models_.insert_or_assign(label, std::move(model));
}

ModelStore learn_increment(ModelStore store, const ClassExamples& per_class, double threshold) {
  for (const auto& [label, examples] : per_class) {
    if (examples.cols() == 0) continue;
    if (store.dim() != 0 && examples.rows() != store.dim()) {
      throw DataError(DataError::Kind::kDimMismatch,
                      "learn_increment: class " + std::to_string(label) + " has dim " +
                          std::to_string(examples.rows()) + ", store has " +
                          std::to_string(store.dim()));
    }
  }
  for (const auto& [label, examples] : per_class) {
    if (examples.cols() == 0) continue;
    if (store.contains(label)) {
      store.put(update_class(store.at(label), examples, threshold));
    } else {
      store.put(cluster_class(examples, label, threshold));
    }
  }
  return store;
}

ClassExamples group_by_class(const Dataset& ds) {
  ClassExamples out;
  auto by_class = ds.indices_by_class();
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].empty()) continue;
    out.emplace(static_cast<ClassId>(c), ds.gather(by_class[c]));
  }
  return out;
}

void save_model_store(const ModelStore& store, const fs::path& path) {
  std::string out(kStoreMagic.data(), kStoreMagic.size());
  out.push_back(static_cast<char>(kStoreVersion));
  put_u32(out, static_cast<std::uint32_t>(store.dim()));
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [label, model] : store.models()) {
    put_u32(out, label);
    put_f32(out, static_cast<float>(model.threshold));
    put_u32(out, static_cast<std::uint32_t>(model.centroids.size()));
    for (const auto& c : model.centroids) {
      put_u32(out, c.weight);
      for (Eigen::Index k = 0; k < c.mean.size(); ++k) put_f32(out, static_cast<float>(c.mean(k)));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError(DataError::Kind::kIo, path.string() + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError(DataError::Kind::kIo, path.string() + ": write failed");
}

ModelStore load_model_store(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(DataError::Kind::kIo, path.string() + ": cannot open for reading");
  std::ostringstream buf;
  buf << f.rdbuf();
  Reader r(buf.str(), path);
  r.magic();
  const std::uint32_t dim = r.u32("dim");
  const std::uint32_t n_classes = r.u32("class count");
  ModelStore store(dim);
  for (std::uint32_t i = 0; i < n_classes; ++i) {
    ClassModel model;
    model.label = r.u32("class id");
    model.threshold = r.f32("threshold");
    const std::uint32_t n_centroids = r.u32("centroid count");
    if (n_centroids == 0) {
      throw DataError(DataError::Kind::kMalformedHeader,
                      path.string() + ": class " + std::to_string(model.label) +
                          " has no centroids (byte " + std::to_string(r.pos()) + ")",
                      r.pos());
    }
    for (std::uint32_t j = 0; j < n_centroids; ++j) {
      Centroid c;
      c.weight = r.u32("centroid weight");
      c.mean.resize(dim);
      for (std::uint32_t k = 0; k < dim; ++k) c.mean(k) = r.f32("centroid value");
      model.examples_seen += c.weight;
      model.centroids.push_back(std::move(c));
    }
    if (store.contains(model.label)) {
      throw DataError(DataError::Kind::kMalformedHeader,
                      path.string() + ": duplicate class " + std::to_string(model.label));
    }
    store.put(std::move(model));
  }
  if (!r.at_end()) {
    throw DataError(DataError::Kind::kMalformedHeader,
                    path.string() + ": trailing bytes (byte " + std::to_string(r.pos()) + ")",
                    r.pos());
  }
  return store;
}

}  // namespace cbcl
