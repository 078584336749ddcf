#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "vtlab/errors.hpp"
#include "vtlab/training/training.hpp"

namespace vtlab {

namespace {

constexpr char kMagic[4] = {'V', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeader = 4 + 4 + 8;

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

std::uint32_t crc_of(const std::string& bytes, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t pos = 0; pos < size; pos += kChunk)
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(std::min(kChunk, size - pos)));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, std::int64_t step, const Metrics& metrics,
                     const Provenance* provenance) {
  static_assert(std::endian::native == std::endian::little);
  nlohmann::json header;
  header["config"] = to_json(model.config());
  header["config_hash"] = config_hash(model.config());
  header["step"] = step;
  header["metrics"] = to_json(metrics);
  header["dtype"] = std::string(dtype_name(model.dtype()));
  if (provenance) header["provenance"] = to_json(*provenance);
  nlohmann::json entries = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : model.params().entries()) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    if (t.dtype() == Dtype::F32) {
      auto d = t.data<float>();
      payload.append(reinterpret_cast<const char*>(d.data()), d.size_bytes());
    } else {
      auto d = t.data<double>();
      payload.append(reinterpret_cast<const char*>(d.data()), d.size_bytes());
    }
  }
  header["params"] = entries;
  const std::string text = header.dump();

  std::string bytes;
  bytes.append(kMagic, 4);
  put<std::uint32_t>(bytes, kVersion);
  put<std::uint64_t>(bytes, text.size());
  bytes += text;
  bytes += payload;
  put<std::uint32_t>(bytes, crc_of(bytes, bytes.size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto fail = [&](std::size_t offset, const std::string& what) {
    throw FormatError(path + ": " + what + " at offset " + std::to_string(offset));
  };
  if (bytes.size() < kHeader + 4) fail(bytes.size(), "file truncated before header end");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(0, "bad magic");
  if (get<std::uint32_t>(bytes, 4) != kVersion) fail(4, "unsupported version");
  const auto len = get<std::uint64_t>(bytes, 8);
  if (len > bytes.size() - kHeader - 4) fail(8, "header length exceeds file size");
  const std::size_t crc_at = bytes.size() - 4;
  if (crc_of(bytes, crc_at) != get<std::uint32_t>(bytes, crc_at)) fail(crc_at, "checksum mismatch");

  Checkpoint ck;
  const std::size_t payload_at = kHeader + len;
  try {
    const auto header = nlohmann::json::parse(bytes.begin() + kHeader, bytes.begin() + static_cast<std::ptrdiff_t>(payload_at));
    ck.config = model_config_from_json(header.at("config"));
    if (header.at("config_hash").get<std::uint64_t>() != config_hash(ck.config)) fail(kHeader, "config hash mismatch");
    ck.step = header.at("step").get<std::int64_t>();
    ck.metrics = metrics_from_json(header.at("metrics"));
    if (header.contains("provenance")) ck.provenance = provenance_from_json(header.at("provenance"));
    const std::string dt = header.at("dtype").get<std::string>();
    const Dtype dtype = dt == "f32" ? Dtype::F32 : Dtype::F64;
    const std::size_t width = dtype == Dtype::F32 ? sizeof(float) : sizeof(double);
    for (const auto& e : header.at("params")) {
      const Shape shape = e.at("shape").get<Shape>();
      const std::size_t offset = e.at("offset").get<std::size_t>();
      const auto count = static_cast<std::size_t>(numel_of(shape));
      if (payload_at + offset + count * width > crc_at) fail(payload_at + offset, "parameter payload truncated");
      Buffer buf(dtype, count);
      if (dtype == Dtype::F32)
        std::memcpy(buf.as<float>().data(), bytes.data() + payload_at + offset, count * width);
      else
        std::memcpy(buf.as<double>().data(), bytes.data() + payload_at + offset, count * width);
      ck.params.add(e.at("name").get<std::string>(), Tensor::from_buffer(shape, std::move(buf)));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(kHeader, std::string("malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    fail(kHeader, e.what());
  }
  return ck;
}

Model model_from_checkpoint(const Checkpoint& ck) {
  Dtype dtype = Dtype::F32;
  if (ck.params.size() > 0) dtype = ck.params.entries().front().second.dtype();
  Model model = build_model(ck.config, 0, dtype);
  load_params(model.params(), ck.params);
  return model;
}

}  // namespace vtlab
