#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "wordlearn/corpus.hpp"
#include "wordlearn/lm.hpp"

namespace wordlearn {

/// Trained model plus everything needed to use it.
///
/// File layout (all integers little-endian):
///   8 bytes   magic "WRDLRNCK"
///   u32       format version
///   u64       header length n
///   n bytes   UTF-8 JSON header: config, vocab, parameter names and shapes,
///             dtype, payload size and FNV-1a checksum, metadata
///   payload   parameters in header order, raw little-endian IEEE-754 values
struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab;
  ParamSet params;
  nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "WRDLRNCK";

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

template <typename T>
void put_le(std::string& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(buf), std::end(buf));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::string_view in, std::size_t offset) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(buf), std::end(buf));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline const char* dtype_name() { return sizeof(Real) == 8 ? "f64" : "f32"; }

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  check_params(ck.config, ck.params);
  std::string payload;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& name : parameter_order(ck.config)) {
    const Tensor& t = ck.params[name];
    plist.push_back({{"name", name}, {"shape", t.shape()}});
    for (Real v : t.values()) detail::put_le(payload, v);
  }
  nlohmann::json header{{"format", "wordlearn-checkpoint"},
                        {"version", kCheckpointVersion},
                        {"dtype", detail::dtype_name()},
                        {"config", ck.config},
                        {"vocab", ck.vocab.to_json()},
                        {"params", plist},
                        {"payload_bytes", payload.size()},
                        {"payload_fnv1a", detail::hex64(detail::fnv1a(payload))},
                        {"metadata", ck.metadata}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic);
  detail::put_le(out, kCheckpointVersion);
  detail::put_le(out, static_cast<std::uint64_t>(h.size()));
  out += h;
  out += payload;
  return out;
}

/// Byte range of one parameter inside a serialized checkpoint.
struct PayloadEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;  // from start of file
  std::size_t bytes = 0;
};

struct ParsedHeader {
  nlohmann::json header;
  std::vector<PayloadEntry> entries;
  std::size_t payload_offset = 0;
};

inline ParsedHeader parse_checkpoint_header(std::string_view bytes) {
  const std::size_t prefix = kCheckpointMagic.size() + 4 + 8;
  if (bytes.size() < prefix || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw DataError("checkpoint: bad magic or truncated file");
  }
  const auto version = detail::get_le<std::uint32_t>(bytes, kCheckpointMagic.size());
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const auto hlen = detail::get_le<std::uint64_t>(bytes, kCheckpointMagic.size() + 4);
  if (hlen > bytes.size() - prefix) throw DataError("checkpoint: truncated header");
  ParsedHeader out;
  try {
    out.header = nlohmann::json::parse(bytes.substr(prefix, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  out.payload_offset = prefix + hlen;
  try {
    if (out.header.at("dtype").get<std::string>() != detail::dtype_name()) {
      throw DataError("checkpoint: dtype " + out.header.at("dtype").get<std::string>() + " does not match this build");
    }
    std::size_t offset = out.payload_offset;
    for (const auto& p : out.header.at("params")) {
      PayloadEntry e;
      e.name = p.at("name").get<std::string>();
      e.shape = p.at("shape").get<Shape>();
      e.offset = offset;
      e.bytes = shape_size(e.shape) * sizeof(Real);
      offset += e.bytes;
      out.entries.push_back(std::move(e));
    }
    if (offset - out.payload_offset != out.header.at("payload_bytes").get<std::size_t>()) {
      throw DataError("checkpoint: payload size disagrees with parameter shapes");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  }
  return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  ParsedHeader ph = parse_checkpoint_header(bytes);
  const auto& header = ph.header;
  const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
  if (bytes.size() != ph.payload_offset + payload_bytes) throw DataError("checkpoint: truncated or oversized payload");
  const std::string_view payload = bytes.substr(ph.payload_offset);
  if (detail::hex64(detail::fnv1a(payload)) != header.at("payload_fnv1a").get<std::string>()) {
    throw DataError("checkpoint: payload checksum mismatch");
  }
  Checkpoint ck;
  try {
    ck.config = header.at("config").get<ModelConfig>();
    ck.vocab = Vocabulary::from_json(header.at("vocab"));
    ck.metadata = header.at("metadata");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  }
  for (const auto& e : ph.entries) {
    Tensor t(e.shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = detail::get_le<Real>(bytes, e.offset + i * sizeof(Real));
    ck.params.add(e.name, std::move(t));
  }
  check_params(ck.config, ck.params);
  if (ck.vocab.size() != ck.config.vocab_size) throw DataError("checkpoint: vocabulary size disagrees with config");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint '" + path.string() + "'");
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file_bytes(path)); }

/// Parameter rows whose bytes differ between two serialized checkpoints of
/// the same layout, as (name, row) pairs. Header differences are ignored.
inline std::vector<std::pair<std::string, std::size_t>> diff_payload_rows(std::string_view a, std::string_view b) {
  const ParsedHeader ha = parse_checkpoint_header(a);
  const ParsedHeader hb = parse_checkpoint_header(b);
  if (ha.entries.size() != hb.entries.size()) throw DataError("diff: checkpoints have different layouts");
  std::vector<std::pair<std::string, std::size_t>> out;
  for (std::size_t k = 0; k < ha.entries.size(); ++k) {
    const auto& ea = ha.entries[k];
    const auto& eb = hb.entries[k];
    if (ea.name != eb.name || ea.shape != eb.shape) throw DataError("diff: checkpoints have different layouts");
    const std::size_t rows = ea.shape.empty() ? 1 : ea.shape[0];
    const std::size_t row_bytes = rows == 0 ? 0 : ea.bytes / rows;
    for (std::size_t r = 0; r < rows; ++r) {
      if (a.substr(ea.offset + r * row_bytes, row_bytes) != b.substr(eb.offset + r * row_bytes, row_bytes)) {
        out.emplace_back(ea.name, r);
      }
    }
  }
  return out;
}

}  // namespace wordlearn
