#include "vtlab/data/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "vtlab/errors.hpp"
#include "vtlab/models/config.hpp"
#include "vtlab/tensor/rng.hpp"

namespace vtlab {

static_assert(std::endian::native == std::endian::little, "payloads are written in host order");

namespace {

constexpr char kMagic[4] = {'V', 'T', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

nlohmann::json params_json(const SampleParams& p) {
  return {{"shape", p.shape}, {"hue", p.hue}, {"saturation", p.saturation}, {"value", p.value},
          {"size", p.size},   {"x0", p.x0},   {"y0", p.y0},                 {"vx", p.vx},
          {"vy", p.vy},       {"background", p.background}, {"pan", p.pan}};
}

SampleParams params_from_json(const nlohmann::json& j) {
  SampleParams p;
  p.shape = j.at("shape").get<int>();
  p.hue = j.at("hue").get<double>();
  p.saturation = j.at("saturation").get<double>();
  p.value = j.at("value").get<double>();
  p.size = j.at("size").get<double>();
  p.x0 = j.at("x0").get<double>();
  p.y0 = j.at("y0").get<double>();
  p.vx = j.at("vx").get<double>();
  p.vy = j.at("vy").get<double>();
  p.background = j.at("background").get<double>();
  p.pan = j.value("pan", false);
  return p;
}

template <class T>
void put(std::string& out, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  out.append(bytes, sizeof(T));
}

template <class T>
T get(const std::string& in, std::size_t offset) {
  T v;
  std::memcpy(&v, in.data() + offset, sizeof(T));
  return v;
}

std::uint32_t crc_of(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t pos = 0; pos < size; pos += kChunk) {
    const std::size_t n = std::min(kChunk, size - pos);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data + pos), static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string SplitSpec::key() const {
  std::ostringstream os;
  os.precision(17);
  os << fraction << '/' << seed << '/' << (stratified ? 1 : 0);
  return hex64(fnv1a(os.str()));
}

Dataset::Dataset(GenSpec spec, std::vector<float> data, std::vector<int> labels, std::vector<SampleParams> params)
    : spec_(spec), data_(std::move(data)), labels_(std::move(labels)), params_(std::move(params)) {
  if (static_cast<std::int64_t>(labels_.size()) != spec_.total())
    throw ContractError("dataset has " + std::to_string(labels_.size()) + " labels for " + std::to_string(spec_.total()) +
                        " samples");
  if (static_cast<std::int64_t>(data_.size()) != spec_.total() * spec_.geometry.numel())
    throw ContractError("dataset payload size does not match its geometry");
  if (params_.size() != labels_.size()) throw ContractError("dataset needs one parameter record per sample");
}

std::span<const float> Dataset::clip(std::int64_t index) const {
  if (index < 0 || index >= size()) throw IndexError("sample " + std::to_string(index) + " out of range");
  const std::int64_t per = spec_.geometry.numel();
  return std::span<const float>(data_).subspan(static_cast<std::size_t>(index * per), static_cast<std::size_t>(per));
}

int Dataset::label(std::int64_t index) const {
  if (index < 0 || index >= size()) throw IndexError("sample " + std::to_string(index) + " out of range");
  return labels_[index];
}

const SampleParams& Dataset::params(std::int64_t index) const {
  if (index < 0 || index >= size()) throw IndexError("sample " + std::to_string(index) + " out of range");
  return params_[index];
}

VideoSample Dataset::sample(std::int64_t index, Dtype dtype) const {
  auto values = clip(index);
  std::vector<double> v(values.begin(), values.end());
  VideoSample s;
  s.clip = Tensor::from_values(spec_.geometry.shape(), v, dtype);
  s.label = label(index);
  s.task = spec_.task;
  s.seed = spec_.seed;
  s.params = params_[index];
  return s;
}

std::vector<std::int64_t> Dataset::train_indices() const {
  std::vector<std::int64_t> out(static_cast<std::size_t>(spec_.n_train));
  std::iota(out.begin(), out.end(), 0);
  return out;
}

std::vector<std::int64_t> Dataset::val_indices() const {
  std::vector<std::int64_t> out(static_cast<std::size_t>(spec_.n_val));
  std::iota(out.begin(), out.end(), spec_.n_train);
  return out;
}

Tensor Dataset::batch(std::span<const std::int64_t> indices, Dtype dtype) const {
  const std::int64_t per = spec_.geometry.numel();
  Shape shape{static_cast<std::int64_t>(indices.size())};
  for (auto d : spec_.geometry.shape()) shape.push_back(d);
  Buffer buf(dtype, static_cast<std::size_t>(per * shape[0]));
  for (std::size_t b = 0; b < indices.size(); ++b) {
    auto src = clip(indices[b]);
    if (dtype == Dtype::F32) {
      std::copy(src.begin(), src.end(), buf.as<float>().begin() + static_cast<std::ptrdiff_t>(b * per));
    } else {
      std::copy(src.begin(), src.end(), buf.as<double>().begin() + static_cast<std::ptrdiff_t>(b * per));
    }
  }
  return Tensor::from_buffer(shape, std::move(buf));
}

std::vector<int> Dataset::labels(std::span<const std::int64_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(label(i));
  return out;
}

DatasetManifest Dataset::manifest() const {
  DatasetManifest m;
  m.spec = spec_;
  m.labels = labels_;
  m.train = train_indices();
  m.val = val_indices();
  const std::uint64_t bytes = static_cast<std::uint64_t>(spec_.geometry.numel()) * sizeof(float);
  for (std::int64_t i = 0; i < size(); ++i) m.offsets.push_back(static_cast<std::uint64_t>(i) * bytes);
  return m;
}

std::string Dataset::content_hash() const {
  std::ostringstream os;
  os << to_string(spec_.task) << ':' << spec_.geometry.t << 'x' << spec_.geometry.h << 'x' << spec_.geometry.w << 'x'
     << spec_.geometry.c << ':' << spec_.classes << ':' << spec_.n_train << ':' << spec_.n_val;
  std::uint64_t h = fnv1a(os.str());
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(labels_.data()), labels_.size() * sizeof(int)), h);
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(data_.data()), data_.size() * sizeof(float)), h);
  return hex64(h);
}

void DatasetManifest::check() const {
  const auto n = count();
  if (n != spec.total())
    throw FormatError("manifest lists " + std::to_string(n) + " samples, spec expects " + std::to_string(spec.total()));
  if (static_cast<std::int64_t>(offsets.size()) != n) throw FormatError("manifest offsets do not cover every sample");
  for (std::size_t i = 1; i < offsets.size(); ++i)
    if (offsets[i] <= offsets[i - 1]) throw FormatError("manifest offsets not strictly increasing at sample " + std::to_string(i));
  for (int l : labels)
    if (l < 0 || l >= spec.classes) throw FormatError("label " + std::to_string(l) + " outside class range");
  std::vector<char> is_train(static_cast<std::size_t>(n), 0);
  for (auto i : train) {
    if (i < 0 || i >= n) throw FormatError("train index " + std::to_string(i) + " out of range");
    is_train[i] = 1;
  }
  for (auto i : val)
    if (i < 0 || i >= n) throw FormatError("val index " + std::to_string(i) + " out of range");
  for (const auto& [key, members] : splits)
    for (auto i : members)
      if (i < 0 || i >= n || !is_train[i]) throw FormatError("split " + key + " contains non-train index " + std::to_string(i));
}

std::vector<std::int64_t> sample_split(const DatasetManifest& manifest, const SplitSpec& spec) {
  if (!(spec.fraction > 0.0 && spec.fraction <= 1.0))
    throw ConfigError("split fraction must be in (0, 1], got " + std::to_string(spec.fraction));
  const auto& train = manifest.train;
  const auto n = static_cast<std::int64_t>(train.size());
  if (spec.fraction == 1.0) {
    std::vector<std::int64_t> all = train;
    std::sort(all.begin(), all.end());
    return all;
  }

  // Every split is a prefix of one seeded ranking of the train set, so
  // nesting across fractions holds by construction.
  struct Ranked {
    double key;
    int cls;
    std::int64_t rank;
    std::int64_t index;
  };
  std::vector<Ranked> ranking;
  std::int64_t take = std::max<std::int64_t>(1, std::llround(spec.fraction * static_cast<double>(n)));

  if (spec.stratified) {
    std::map<int, std::vector<std::int64_t>> by_class;
    for (auto i : train) by_class[manifest.labels.at(static_cast<std::size_t>(i))].push_back(i);
    Rng offsets(spec.seed, 4);
    for (auto& [cls, members] : by_class) {
      std::sort(members.begin(), members.end());
      Rng rng(hash_combine(spec.seed, static_cast<std::uint64_t>(cls)), 3);
      for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
      const double u = offsets.uniform();
      const auto nc = static_cast<double>(members.size());
      // Rank 0 of every class sorts first so any prefix of at least
      // `classes` entries covers all classes.
      for (std::size_t r = 0; r < members.size(); ++r)
        ranking.push_back({r == 0 ? 0.0 : (static_cast<double>(r) + u) / nc, cls, static_cast<std::int64_t>(r),
                           members[r]});
    }
    take = std::max<std::int64_t>(take, static_cast<std::int64_t>(by_class.size()));
    std::sort(ranking.begin(), ranking.end(), [](const Ranked& a, const Ranked& b) {
      if (a.key != b.key) return a.key < b.key;
      return a.cls < b.cls;
    });
  } else {
    std::vector<std::int64_t> order = train;
    std::sort(order.begin(), order.end());
    Rng rng(spec.seed, 5);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t r = 0; r < order.size(); ++r)
      ranking.push_back({static_cast<double>(r), 0, static_cast<std::int64_t>(r), order[r]});
  }

  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(take));
  for (std::int64_t i = 0; i < take && i < static_cast<std::int64_t>(ranking.size()); ++i) out.push_back(ranking[i].index);
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json to_json(const GenSpec& spec) {
  return {{"task", to_string(spec.task)},
          {"n_train", spec.n_train},
          {"n_val", spec.n_val},
          {"classes", spec.classes},
          {"geometry", {spec.geometry.t, spec.geometry.h, spec.geometry.w, spec.geometry.c}},
          {"seed", spec.seed}};
}

GenSpec gen_spec_from_json(const nlohmann::json& doc) {
  GenSpec s;
  try {
    if (doc.contains("task")) s.task = task_from_string(doc.at("task").get<std::string>());
    if (doc.contains("n_train")) s.n_train = doc.at("n_train").get<std::int64_t>();
    if (doc.contains("n_val")) s.n_val = doc.at("n_val").get<std::int64_t>();
    if (doc.contains("classes")) s.classes = doc.at("classes").get<int>();
    if (doc.contains("seed")) s.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("geometry")) {
      const auto g = doc.at("geometry").get<std::vector<std::int64_t>>();
      if (g.size() != 4) throw ConfigError("geometry needs [t, h, w, c]");
      s.geometry = {g[0], g[1], g[2], g[3]};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  }
  return s;
}

void write_dataset(const Dataset& dataset, const std::string& path, std::span<const SplitSpec> splits) {
  DatasetManifest m = dataset.manifest();
  for (const auto& s : splits) m.splits[s.key()] = sample_split(m, s);

  nlohmann::json doc;
  doc["spec"] = to_json(m.spec);
  doc["offsets"] = m.offsets;
  doc["labels"] = m.labels;
  doc["train"] = m.train;
  doc["val"] = m.val;
  doc["splits"] = m.splits;
  nlohmann::json split_specs = nlohmann::json::array();
  for (const auto& s : splits)
    split_specs.push_back({{"key", s.key()}, {"fraction", s.fraction}, {"seed", s.seed}, {"stratified", s.stratified}});
  doc["split_specs"] = split_specs;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : dataset.all_params()) params.push_back(params_json(p));
  doc["params"] = params;
  doc["content_hash"] = dataset.content_hash();
  const std::string manifest = doc.dump();

  std::string bytes;
  bytes.append(kMagic, 4);
  put<std::uint32_t>(bytes, kVersion);
  put<std::uint64_t>(bytes, manifest.size());
  bytes += manifest;
  bytes.append(reinterpret_cast<const char*>(dataset.data().data()), dataset.data().size() * sizeof(float));
  put<std::uint32_t>(bytes, crc_of(bytes.data(), bytes.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write to '" + path + "' failed");
}

Dataset read_dataset(const std::string& path, DatasetManifest* manifest_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto fail = [&](std::size_t offset, const std::string& what) {
    throw FormatError(path + ": " + what + " at offset " + std::to_string(offset));
  };

  constexpr std::size_t kHeader = 4 + 4 + 8;
  if (bytes.size() < kHeader + 4) fail(bytes.size(), "file truncated before header end");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(0, "bad magic");
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kVersion) fail(4, "unsupported version " + std::to_string(version));
  const auto manifest_len = get<std::uint64_t>(bytes, 8);
  if (manifest_len > bytes.size() - kHeader - 4) fail(8, "manifest length exceeds file size");
  const std::size_t crc_at = bytes.size() - 4;
  if (crc_of(bytes.data(), crc_at) != get<std::uint32_t>(bytes, crc_at)) fail(crc_at, "checksum mismatch");

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.begin() + kHeader, bytes.begin() + static_cast<std::ptrdiff_t>(kHeader + manifest_len));
  } catch (const nlohmann::json::exception& e) {
    fail(kHeader, std::string("manifest is not valid JSON: ") + e.what());
  }

  DatasetManifest m;
  std::vector<SampleParams> params;
  try {
    m.spec = gen_spec_from_json(doc.at("spec"));
    m.offsets = doc.at("offsets").get<std::vector<std::uint64_t>>();
    m.labels = doc.at("labels").get<std::vector<int>>();
    m.train = doc.at("train").get<std::vector<std::int64_t>>();
    m.val = doc.at("val").get<std::vector<std::int64_t>>();
    m.splits = doc.at("splits").get<std::map<std::string, std::vector<std::int64_t>>>();
    for (const auto& p : doc.at("params")) params.push_back(params_from_json(p));
  } catch (const nlohmann::json::exception& e) {
    fail(kHeader, std::string("manifest missing fields: ") + e.what());
  } catch (const ConfigError& e) {
    fail(kHeader, e.what());
  }
  m.check();

  const std::size_t payload_at = kHeader + manifest_len;
  const std::size_t payload_bytes = static_cast<std::size_t>(m.spec.total() * m.spec.geometry.numel()) * sizeof(float);
  if (payload_at + payload_bytes != crc_at)
    fail(payload_at, "payload holds " + std::to_string(crc_at - payload_at) + " bytes, manifest expects " +
                         std::to_string(payload_bytes));
  const std::uint64_t per = static_cast<std::uint64_t>(m.spec.geometry.numel()) * sizeof(float);
  for (std::size_t i = 0; i < m.offsets.size(); ++i)
    if (m.offsets[i] != i * per) fail(payload_at, "sample " + std::to_string(i) + " offset does not match geometry");

  std::vector<float> data(payload_bytes / sizeof(float));
  std::memcpy(data.data(), bytes.data() + payload_at, payload_bytes);
  Dataset ds(m.spec, std::move(data), m.labels, std::move(params));
  if (manifest_out) *manifest_out = std::move(m);
  return ds;
}

}  // namespace vtlab
