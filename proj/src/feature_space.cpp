#include "cbcl/feature_space.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "cbcl/random.hpp"

namespace cbcl {
namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kFeatureMagic = {'C', 'B', 'F', 'V'};
constexpr std::uint8_t kFeatureVersion = 0x01;
constexpr std::size_t kHeaderSize = 4 + 1 + 4 + 4;

DataError malformed(const fs::path& path, const std::string& msg, std::uint64_t offset) {
  return DataError(DataError::Kind::kMalformedHeader,
                   path.string() + ": malformed header: " + msg + " (byte " +
                       std::to_string(offset) + ")",
                   offset);
}

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

float read_f32_le(const unsigned char* p) { return std::bit_cast<float>(read_u32_le(p)); }

void write_f32_le(std::string& out, float v) { write_u32_le(out, std::bit_cast<std::uint32_t>(v)); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::kIo, path.string() + ": cannot open for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(DataError::Kind::kIo, path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(DataError::Kind::kIo, path.string() + ": write failed");
}

// File label ids are remapped to dense ids in ascending order of the file id.
struct LabelResolver {
  std::map<std::uint32_t, std::string> names;  // file id -> name
  bool from_sidecar = false;

  static LabelResolver from_path(const fs::path& feature_path) {
    const fs::path side = label_map_path(feature_path);
    if (!fs::exists(side)) return {};
    return from_sidecar_file(side);
  }

  static LabelResolver from_sidecar_file(const fs::path& side) {
    LabelResolver r;
    r.from_sidecar = true;
    std::ifstream in(side);
    if (!in) throw DataError(DataError::Kind::kIo, side.string() + ": cannot open");
    std::string line;
    std::size_t line_no = 0;
    std::map<std::string, std::uint32_t> seen_names;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      std::uint32_t id = 0;
      const char* first = line.data();
      const char* last = line.data() + (tab == std::string::npos ? 0 : tab);
      auto [ptr, ec] = std::from_chars(first, last, id);
      if (tab == std::string::npos || ec != std::errc() || ptr != last || tab + 1 >= line.size()) {
        throw DataError(DataError::Kind::kMalformedHeader,
                        side.string() + ": line " + std::to_string(line_no) +
                            ": expected `label_id<TAB>name`");
      }
      std::string name = line.substr(tab + 1);
      if (r.names.count(id) || seen_names.count(name)) {
        throw DataError(DataError::Kind::kMalformedHeader,
                        side.string() + ": line " + std::to_string(line_no) +
                            ": duplicate label id or name");
      }
      seen_names.emplace(name, id);
      r.names.emplace(id, std::move(name));
    }
    return r;
  }

  // Without a sidecar every id seen in the records is known and named by its
  // decimal value.
  void observe(std::uint32_t file_id) {
    if (!from_sidecar) names.emplace(file_id, std::to_string(file_id));
  }

  bool known(std::uint32_t file_id) const { return names.count(file_id) != 0; }

  std::pair<LabelMap, std::map<std::uint32_t, ClassId>> build() const {
    LabelMap map;
    std::map<std::uint32_t, ClassId> dense;
    for (const auto& [file_id, name] : names) dense.emplace(file_id, map.add(name));
    return {std::move(map), std::move(dense)};
  }
};

Dataset load_binary(const fs::path& path) {
  const std::string bytes = read_file(path);
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kHeaderSize) throw malformed(path, "file shorter than header", bytes.size());
  if (std::memcmp(data, kFeatureMagic.data(), 4) != 0) throw malformed(path, "bad magic", 0);
  if (data[4] != kFeatureVersion) {
    throw malformed(path, "unsupported version " + std::to_string(data[4]), 4);
  }
  const std::uint32_t dim = read_u32_le(data + 5);
  const std::uint32_t count = read_u32_le(data + 9);
  if (dim == 0) throw malformed(path, "dim must be positive", 5);

  const std::uint64_t record_size = 4ULL + 4ULL * dim;
  const std::uint64_t expected = kHeaderSize + record_size * count;
  if (bytes.size() < expected) {
    // Report the start of the first incomplete record.
    const std::uint64_t full = (bytes.size() - kHeaderSize) / record_size;
    const std::uint64_t offset = kHeaderSize + full * record_size;
    throw DataError(DataError::Kind::kTruncated,
                    path.string() + ": truncated: header declares " + std::to_string(count) +
                        " records of dim " + std::to_string(dim) + ", record " +
                        std::to_string(full) + " incomplete (byte " + std::to_string(offset) +
                        ")",
                    offset);
  }
  if (bytes.size() > expected) {
    throw DataError(DataError::Kind::kDimMismatch,
                    path.string() + ": " + std::to_string(bytes.size() - expected) +
                        " trailing bytes after last record; records do not match dim " +
                        std::to_string(dim) + " (byte " + std::to_string(expected) + ")",
                    expected);
  }

  LabelResolver resolver = LabelResolver::from_path(path);
  std::vector<std::uint32_t> file_ids(count);
  FeatureMatrix features(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count));
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::uint64_t base = kHeaderSize + record_size * r;
    const std::uint32_t id = read_u32_le(data + base);
    resolver.observe(id);
    if (!resolver.known(id)) {
      throw DataError(DataError::Kind::kUnknownLabel,
                      path.string() + ": record " + std::to_string(r) + ": unknown label id " +
                          std::to_string(id) + " (byte " + std::to_string(base) + ")",
                      base);
    }
    file_ids[r] = id;
    for (std::uint32_t k = 0; k < dim; ++k) {
      const std::uint64_t at = base + 4 + 4ULL * k;
      const float v = read_f32_le(data + at);
      if (!std::isfinite(v)) {
        throw DataError(DataError::Kind::kNonFinite,
                        path.string() + ": record " + std::to_string(r) +
                            ": non-finite value at component " + std::to_string(k) + " (byte " +
                            std::to_string(at) + ")",
                        at);
      }
      features(k, r) = v;
    }
  }

  auto [map, dense] = resolver.build();
  Dataset ds(static_cast<Eigen::Index>(dim), std::move(map));
  ds.features = std::move(features);
  ds.labels.reserve(count);
  for (auto id : file_ids) ds.labels.push_back(dense.at(id));
  return ds;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Dataset load_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::kIo, path.string() + ": cannot open for reading");
  std::string line;
  std::uint64_t offset = 0;
  if (!std::getline(in, line)) throw malformed(path, "empty file", 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "label") {
    throw malformed(path, "expected `label,f0,...`", 0);
  }
  for (std::size_t k = 1; k < header.size(); ++k) {
    if (header[k] != "f" + std::to_string(k - 1)) {
      throw malformed(path, "unexpected column name `" + header[k] + "`", 0);
    }
  }
  const auto dim = static_cast<Eigen::Index>(header.size() - 1);
  offset += line.size() + 1;

  LabelResolver resolver = LabelResolver::from_path(path);
  std::vector<std::uint32_t> file_ids;
  std::vector<float> values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    const std::uint64_t row_offset = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (static_cast<Eigen::Index>(cells.size()) != dim + 1) {
      throw DataError(DataError::Kind::kDimMismatch,
                      path.string() + ": row " + std::to_string(row) + " has " +
                          std::to_string(cells.size() - 1) + " values, expected " +
                          std::to_string(dim) + " (byte " + std::to_string(row_offset) + ")",
                      row_offset);
    }
    std::uint32_t id = 0;
    {
      const auto& c = cells[0];
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), id);
      if (ec != std::errc() || ptr != c.data() + c.size()) {
        throw DataError(DataError::Kind::kUnknownLabel,
                        path.string() + ": row " + std::to_string(row) + ": bad label `" + c +
                            "` (byte " + std::to_string(row_offset) + ")",
                        row_offset);
      }
    }
    resolver.observe(id);
    if (!resolver.known(id)) {
      throw DataError(DataError::Kind::kUnknownLabel,
                      path.string() + ": row " + std::to_string(row) + ": unknown label id " +
                          std::to_string(id) + " (byte " + std::to_string(row_offset) + ")",
                      row_offset);
    }
    file_ids.push_back(id);
    for (Eigen::Index k = 0; k < dim; ++k) {
      const auto& c = cells[static_cast<std::size_t>(k + 1)];
      float v = 0.0F;
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || ptr != c.data() + c.size()) {
        // from_chars rejects "nan"/"inf" spellings only in some libraries.
        throw DataError(DataError::Kind::kNonFinite,
                        path.string() + ": row " + std::to_string(row) + ": cannot parse `" + c +
                            "` (byte " + std::to_string(row_offset) + ")",
                        row_offset);
      }
      if (!std::isfinite(v)) {
        throw DataError(DataError::Kind::kNonFinite,
                        path.string() + ": row " + std::to_string(row) +
                            ": non-finite value at component " + std::to_string(k) + " (byte " +
                            std::to_string(row_offset) + ")",
                        row_offset);
      }
      values.push_back(v);
    }
    ++row;
  }

  auto [map, dense] = resolver.build();
  Dataset ds(dim, std::move(map));
  ds.features = Eigen::Map<const FeatureMatrix>(values.data(), dim,
                                                static_cast<Eigen::Index>(file_ids.size()));
  for (auto id : file_ids) ds.labels.push_back(dense.at(id));
  return ds;
}

std::string format_float(float v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

}  // namespace

LabelMap::LabelMap(std::vector<std::string> names) {
  for (auto& n : names) add(n);
}

ClassId LabelMap::add(const std::string& name) {
  if (index_.count(name)) {
    throw DataError(DataError::Kind::kInvalidArgument, "duplicate class name `" + name + "`");
  }
  const auto id = static_cast<ClassId>(names_.size());
  names_.push_back(name);
  index_.emplace(name, id);
  return id;
}

const std::string& LabelMap::name(ClassId id) const {
  if (id >= names_.size()) {
    throw DataError(DataError::Kind::kUnknownLabel, "unknown class id " + std::to_string(id));
  }
  return names_[id];
}

std::optional<ClassId> LabelMap::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

ClassId LabelMap::id(const std::string& name) const {
  auto found = find(name);
  if (!found) throw DataError(DataError::Kind::kUnknownLabel, "unknown class `" + name + "`");
  return *found;
}

void Dataset::validate() const {
  if (dim() <= 0) throw DataError(DataError::Kind::kDimMismatch, "dataset dim must be positive");
  if (static_cast<std::size_t>(features.cols()) != labels.size()) {
    throw DataError(DataError::Kind::kDimMismatch, "feature columns and labels differ in count");
  }
  for (auto l : labels) {
    if (l >= label_map.size()) {
      throw DataError(DataError::Kind::kUnknownLabel,
                      "label " + std::to_string(l) + " missing from label map");
    }
  }
  if (!features.allFinite()) throw DataError(DataError::Kind::kNonFinite, "non-finite value");
}

std::vector<std::vector<std::size_t>> Dataset::indices_by_class() const {
  std::vector<std::vector<std::size_t>> out(label_map.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out(dim(), label_map);
  out.features = gather(indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  return out;
}

FeatureMatrix Dataset::gather(const std::vector<std::size_t>& indices) const {
  FeatureMatrix out(dim(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) = features.col(static_cast<Eigen::Index>(indices[k]));
  }
  return out;
}

bool Dataset::operator==(const Dataset& other) const {
  return dim() == other.dim() && labels == other.labels && label_map == other.label_map &&
         features.cols() == other.features.cols() &&
         std::memcmp(features.data(), other.features.data(),
                     sizeof(float) * static_cast<std::size_t>(features.size())) == 0;
}

Dataset make_dataset(const std::vector<std::vector<double>>& vectors,
                     const std::vector<ClassId>& labels, LabelMap map) {
  if (vectors.size() != labels.size()) {
    throw DataError(DataError::Kind::kInvalidArgument, "vectors and labels differ in count");
  }
  if (vectors.empty()) {
    throw DataError(DataError::Kind::kInvalidArgument, "make_dataset needs at least one vector");
  }
  const auto dim = static_cast<Eigen::Index>(vectors.front().size());
  Dataset ds(dim, std::move(map));
  ds.features.resize(dim, static_cast<Eigen::Index>(vectors.size()));
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (static_cast<Eigen::Index>(vectors[i].size()) != dim) {
      throw DataError(DataError::Kind::kDimMismatch,
                      "vector " + std::to_string(i) + " has dim " +
                          std::to_string(vectors[i].size()));
    }
    for (Eigen::Index k = 0; k < dim; ++k) {
      ds.features(k, static_cast<Eigen::Index>(i)) =
          static_cast<float>(vectors[i][static_cast<std::size_t>(k)]);
    }
  }
  ds.labels = labels;
  ds.validate();
  return ds;
}

FeatureFormat parse_format(const std::string& text) {
  if (text == "binary" || text == "bin" || text == "cbfv") return FeatureFormat::kBinary;
  if (text == "csv") return FeatureFormat::kCsv;
  throw DataError(DataError::Kind::kInvalidArgument, "unknown feature format `" + text + "`");
}

FeatureFormat format_from_path(const fs::path& path) {
  return path.extension() == ".csv" ? FeatureFormat::kCsv : FeatureFormat::kBinary;
}

fs::path label_map_path(const fs::path& feature_path) {
  fs::path p = feature_path;
  p += ".labels";
  return p;
}

Dataset load_features(const fs::path& path, FeatureFormat format, const LoadOptions& options) {
  Dataset ds = format == FeatureFormat::kBinary ? load_binary(path) : load_csv(path);
  if (options.l2_normalize) {
    for (Eigen::Index c = 0; c < ds.features.cols(); ++c) {
      const float norm = ds.features.col(c).norm();
      if (norm > 0.0F) ds.features.col(c) /= norm;
    }
  }
  return ds;
}

void save_features(const Dataset& ds, const fs::path& path, FeatureFormat format) {
  if (ds.dim() <= 0) throw DataError(DataError::Kind::kDimMismatch, "cannot save dim 0 dataset");
  std::string out;
  if (format == FeatureFormat::kBinary) {
    const auto dim = static_cast<std::uint32_t>(ds.dim());
    out.reserve(kHeaderSize + ds.size() * (4 + 4 * dim));
    out.append(kFeatureMagic.data(), kFeatureMagic.size());
    out.push_back(static_cast<char>(kFeatureVersion));
    write_u32_le(out, dim);
    write_u32_le(out, static_cast<std::uint32_t>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) {
      write_u32_le(out, ds.labels[i]);
      for (std::uint32_t k = 0; k < dim; ++k) {
        write_f32_le(out, ds.features(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)));
      }
    }
  } else {
    out += "label";
    for (Eigen::Index k = 0; k < ds.dim(); ++k) out += ",f" + std::to_string(k);
    out += '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
      out += std::to_string(ds.labels[i]);
      for (Eigen::Index k = 0; k < ds.dim(); ++k) {
        out += ',';
        out += format_float(ds.features(k, static_cast<Eigen::Index>(i)));
      }
      out += '\n';
    }
  }
  write_file(path, out);
  save_label_map(ds.label_map, label_map_path(path));
}

LabelMap load_label_map(const fs::path& path) {
  if (!fs::exists(path)) {
    throw DataError(DataError::Kind::kIo, path.string() + ": label map not found");
  }
  return LabelResolver::from_sidecar_file(path).build().first;
}

void save_label_map(const LabelMap& map, const fs::path& path) {
  std::string out;
  for (std::size_t i = 0; i < map.size(); ++i) {
    out += std::to_string(i);
    out += '\t';
    out += map.name(static_cast<ClassId>(i));
    out += '\n';
  }
  write_file(path, out);
}

void SyntheticSpec::validate() const {
  require(n_classes >= 1, "synthetic: n_classes must be >= 1");
  require(dim >= 1, "synthetic: dim must be >= 1");
  require(per_class_count >= 1, "synthetic: per_class_count must be >= 1");
  require(std::isfinite(class_mean_scale) && class_mean_scale >= 0.0,
          "synthetic: class_mean_scale must be finite and >= 0");
  require(std::isfinite(within_class_stddev) && within_class_stddev >= 0.0,
          "synthetic: within_class_stddev must be finite and >= 0");
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  LabelMap map;
  const int width = spec.n_classes > 100 ? 3 : 2;
  for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
    std::string digits = std::to_string(c);
    if (static_cast<int>(digits.size()) < width) {
      digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
    }
    map.add("class_" + digits);
  }
  Dataset ds(spec.dim, std::move(map));
  const auto total = static_cast<Eigen::Index>(spec.n_classes) * spec.per_class_count;
  ds.features.resize(spec.dim, total);
  ds.labels.reserve(static_cast<std::size_t>(total));

  // Order of draws: for each class, dim mean coordinates, then the samples
  // component by component.
  Rng rng(spec.seed);
  Eigen::VectorXd mean(spec.dim);
  Eigen::Index col = 0;
  for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
    for (std::uint32_t k = 0; k < spec.dim; ++k) {
      mean(k) = rng.uniform(-spec.class_mean_scale, spec.class_mean_scale);
    }
    for (std::uint32_t s = 0; s < spec.per_class_count; ++s, ++col) {
      for (std::uint32_t k = 0; k < spec.dim; ++k) {
        const double noise = spec.within_class_stddev > 0.0
                                 ? spec.within_class_stddev * rng.normal()
                                 : 0.0;
        ds.features(k, col) = static_cast<float>(mean(k) + noise);
      }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

Split split_shots(const Dataset& ds, std::size_t shots, std::uint64_t seed) {
  auto by_class = ds.indices_by_class();
  Rng rng(seed);
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() <= shots) {
      throw DataError(DataError::Kind::kInvalidArgument,
                      "split_shots: class `" + ds.label_map.name(static_cast<ClassId>(c)) +
                          "` has " + std::to_string(members.size()) +
                          " examples, needs more than " + std::to_string(shots));
    }
    rng.shuffle(std::span<std::size_t>(members));
    train_idx.insert(train_idx.end(), members.begin(),
                     members.begin() + static_cast<std::ptrdiff_t>(shots));
    test_idx.insert(test_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(shots),
                    members.end());
  }
  return {ds.subset(train_idx), ds.subset(test_idx)};
}

}  // namespace cbcl
