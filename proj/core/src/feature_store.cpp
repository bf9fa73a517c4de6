#include "eigenshot/feature_store.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace eigenshot {

namespace {

constexpr std::array<char, 4> kFeatureMagic = {'E', 'I', 'G', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

template <typename UInt>
void put_le(std::ostream& out, UInt value) {
  std::array<char, sizeof(UInt)> bytes{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename UInt>
UInt get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(UInt)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) {
    throw ParseError(std::string("truncated binary feature file while reading ") + what);
  }
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    value |= static_cast<UInt>(bytes[i]) << (8 * i);
  }
  return value;
}

std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

float parse_float(const std::string& text, std::size_t row) {
  float value = 0.0F;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first != last && *first == ' ') ++first;
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ParseError("cannot parse '" + text + "' as a number", row);
  }
  if (!std::isfinite(value)) {
    throw ParseError("non-finite value '" + text + "'", row);
  }
  return value;
}

std::string format_float(float value) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

void check_csv_id(const std::string& id) {
  if (id.find_first_of(",\r\n") != std::string::npos) {
    throw std::invalid_argument("id '" + id + "' cannot be written to CSV");
  }
}

std::ofstream open_for_write(const std::filesystem::path& path, std::ios::openmode mode) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_for_read(const std::filesystem::path& path, std::ios::openmode mode) {
  std::ifstream in(path, mode);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return in;
}

FeatureSet load_csv(const std::filesystem::path& path) {
  auto in = open_for_read(path, std::ios::in);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing CSV header");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "id") {
    throw ParseError("CSV header must be id,f0,...,f{d-1}");
  }
  const std::size_t dim = header.size() - 1;
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[j + 1] != "f" + std::to_string(j)) {
      throw ParseError("unexpected header column '" + header[j + 1] + "'");
    }
  }

  std::vector<std::string> ids;
  std::vector<float> values;
  std::set<std::string> seen;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (is_blank(line)) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != dim + 1) {
      throw ParseError("expected " + std::to_string(dim + 1) + " fields, got " +
                           std::to_string(fields.size()),
                       row);
    }
    if (fields[0].empty()) throw ParseError("empty id", row);
    if (!seen.insert(fields[0]).second) throw ParseError("duplicate id '" + fields[0] + "'", row);
    ids.push_back(fields[0]);
    for (std::size_t j = 0; j < dim; ++j) values.push_back(parse_float(fields[j + 1], row));
    ++row;
  }
  return FeatureSet(std::move(ids), std::move(values), dim);
}

FeatureSet load_binary(const std::filesystem::path& path) {
  auto in = open_for_read(path, std::ios::in | std::ios::binary);
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kFeatureMagic) throw ParseError("bad magic, expected EIGF");
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kFeatureVersion) {
    throw ParseError("unsupported EIGF version " + std::to_string(version));
  }
  const auto count = get_le<std::uint64_t>(in, "row count");
  const auto dim = get_le<std::uint32_t>(in, "dimension");
  if (dim == 0) throw ParseError("dimension must be >= 1");

  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(in, "id length");
    std::string id(len, '\0');
    in.read(id.data(), len);
    if (!in) throw ParseError("truncated id table", i);
    if (id.empty()) throw ParseError("empty id", i);
    if (!seen.insert(id).second) throw ParseError("duplicate id '" + id + "'", i);
    ids.push_back(std::move(id));
  }

  std::vector<float> values;
  values.reserve(count * dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (std::uint32_t j = 0; j < dim; ++j) {
      const auto bits = get_le<std::uint32_t>(in, "feature values");
      const auto value = std::bit_cast<float>(bits);
      if (!std::isfinite(value)) throw ParseError("non-finite value", i);
      values.push_back(value);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes after feature block");
  return FeatureSet(std::move(ids), std::move(values), dim);
}

void save_csv(const FeatureSet& fs, const std::filesystem::path& path) {
  for (const auto& id : fs.ids()) check_csv_id(id);
  auto out = open_for_write(path, std::ios::out | std::ios::trunc);
  out << "id";
  for (std::size_t j = 0; j < fs.dim(); ++j) out << ",f" << j;
  out << '\n';
  for (std::size_t i = 0; i < fs.size(); ++i) {
    out << fs.id(i);
    for (const float v : fs.row(i)) out << ',' << format_float(v);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void save_binary(const FeatureSet& fs, const std::filesystem::path& path) {
  auto out = open_for_write(path, std::ios::out | std::ios::binary | std::ios::trunc);
  out.write(kFeatureMagic.data(), kFeatureMagic.size());
  put_le<std::uint32_t>(out, kFeatureVersion);
  put_le<std::uint64_t>(out, fs.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(fs.dim()));
  for (const auto& id : fs.ids()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  for (const float v : fs.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace

ParseError::ParseError(const std::string& what, std::size_t row)
    : std::runtime_error(row == npos ? what : "row " + std::to_string(row) + ": " + what),
      row_(row) {}

FeatureFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? FeatureFormat::kCsv : FeatureFormat::kBinary;
}

FeatureSet::FeatureSet(std::vector<std::string> ids, std::vector<float> values, std::size_t dim)
    : ids_(std::move(ids)), values_(std::move(values)), dim_(dim) {
  if (dim_ == 0) throw std::invalid_argument("feature dimension must be >= 1");
  if (values_.size() != ids_.size() * dim_) {
    throw std::invalid_argument("value count does not match ids x dim");
  }
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) {
      throw std::invalid_argument("duplicate id '" + ids_[i] + "'");
    }
  }
  for (std::size_t k = 0; k < values_.size(); ++k) {
    if (!std::isfinite(values_[k])) {
      throw std::invalid_argument("non-finite value in row " + std::to_string(k / dim_));
    }
  }
}

std::optional<std::size_t> FeatureSet::index_of(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

FeatureSet FeatureSet::subset(std::span<const std::size_t> rows) const {
  std::vector<std::string> ids;
  std::vector<float> values;
  ids.reserve(rows.size());
  values.reserve(rows.size() * dim_);
  for (const auto r : rows) {
    ids.push_back(ids_.at(r));
    const auto src = row(r);
    values.insert(values.end(), src.begin(), src.end());
  }
  return FeatureSet(std::move(ids), std::move(values), dim_);
}

LabelSet::LabelSet(std::map<std::string, int> labels, int num_classes)
    : labels_(std::move(labels)), num_classes_(num_classes) {
  if (num_classes_ < 2) throw std::invalid_argument("number of classes must be >= 2");
  for (const auto& [id, label] : labels_) {
    if (label < 0 || label >= num_classes_) {
      throw std::invalid_argument("label " + std::to_string(label) + " for '" + id +
                                  "' outside [0," + std::to_string(num_classes_) + ")");
    }
  }
}

int LabelSet::at(const std::string& id) const {
  const auto it = labels_.find(id);
  if (it == labels_.end()) throw std::out_of_range("no label for '" + id + "'");
  return it->second;
}

std::optional<int> LabelSet::find(const std::string& id) const {
  const auto it = labels_.find(id);
  if (it == labels_.end()) return std::nullopt;
  return it->second;
}

LabelSet LabelSet::with(const std::string& id, int label) const {
  if (labels_.contains(id)) throw std::invalid_argument("id '" + id + "' already labeled");
  auto copy = labels_;
  copy.emplace(id, label);
  return LabelSet(std::move(copy), num_classes_);
}

void LabelSet::check_covered_by(const FeatureSet& features) const {
  for (const auto& [id, label] : labels_) {
    if (!features.contains(id)) {
      throw std::invalid_argument("labeled id '" + id + "' not present in feature set");
    }
  }
}

FeatureSet load_features(const std::filesystem::path& path, FeatureFormat format) {
  return format == FeatureFormat::kCsv ? load_csv(path) : load_binary(path);
}

FeatureSet load_features(const std::filesystem::path& path) {
  return load_features(path, format_from_path(path));
}

void save_features(const FeatureSet& features, const std::filesystem::path& path,
                   FeatureFormat format) {
  if (format == FeatureFormat::kCsv) {
    save_csv(features, path);
  } else {
    save_binary(features, path);
  }
}

void save_features(const FeatureSet& features, const std::filesystem::path& path) {
  save_features(features, path, format_from_path(path));
}

LabelSet load_labels(const std::filesystem::path& path, int num_classes) {
  auto in = open_for_read(path, std::ios::in);
  std::map<std::string, int> labels;
  std::string line;
  if (!std::getline(in, line) || is_blank(line)) return LabelSet({}, num_classes);
  const auto header = split_csv_line(line);
  if (header.size() != 2 || header[0] != "id" || header[1] != "label") {
    throw ParseError("labels CSV header must be id,label");
  }
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (is_blank(line)) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 2) throw ParseError("expected id,label", row);
    int label = 0;
    const auto& text = fields[1];
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), label);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw ParseError("cannot parse label '" + text + "'", row);
    }
    if (label < 0 || label >= num_classes) {
      throw ParseError("label " + text + " outside [0," + std::to_string(num_classes) + ")", row);
    }
    if (!labels.emplace(fields[0], label).second) {
      throw ParseError("duplicate id '" + fields[0] + "'", row);
    }
    ++row;
  }
  return LabelSet(std::move(labels), num_classes);
}

void save_labels(const LabelSet& labels, const std::filesystem::path& path) {
  auto out = open_for_write(path, std::ios::out | std::ios::trunc);
  out << "id,label\n";
  for (const auto& [id, label] : labels.entries()) {
    check_csv_id(id);
    out << id << ',' << label << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  auto in = open_for_read(path, std::ios::in);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest is not valid JSON: ") + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  DatasetManifest manifest;
  try {
    manifest.features = resolve(doc.at("features").get<std::string>());
    if (doc.contains("labels") && !doc["labels"].is_null()) {
      manifest.labels = resolve(doc["labels"].get<std::string>());
    }
    const auto role = doc.at("role").get<std::string>();
    if (role == "source") {
      manifest.role = DatasetRole::kSource;
    } else if (role == "target") {
      manifest.role = DatasetRole::kTarget;
    } else {
      throw ParseError("manifest role must be 'source' or 'target', got '" + role + "'");
    }
    if (doc.contains("assets") && !doc["assets"].is_null()) {
      manifest.assets = doc["assets"].get<std::map<std::string, std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed manifest: ") + e.what());
  }

  if (!std::filesystem::exists(manifest.features)) {
    throw std::runtime_error("manifest features file '" + manifest.features.string() +
                             "' does not exist");
  }
  if (manifest.labels && !std::filesystem::exists(*manifest.labels)) {
    throw std::runtime_error("manifest labels file '" + manifest.labels->string() +
                             "' does not exist");
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["features"] = manifest.features.string();
  if (manifest.labels) doc["labels"] = manifest.labels->string();
  doc["role"] = manifest.role == DatasetRole::kSource ? "source" : "target";
  if (!manifest.assets.empty()) doc["assets"] = manifest.assets;
  auto out = open_for_write(path, std::ios::out | std::ios::trunc);
  out << doc.dump(2) << '\n';
}

}  // namespace eigenshot
