#pragma once

// Checkpoint container.
//
//   "SMBK" | u32 version | record*
//   record = u32 name_len | name bytes | u8 dtype | u32 rank | u64 extent[rank] | payload
//
// dtype: 0 = f32, 1 = f64, 2 = raw bytes (used for the embedded model config).
// All integers and payload values are little-endian. Records run to EOF.

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "samamba/blocks.hpp"

namespace samamba {

inline constexpr char kCheckpointMagic[4] = {'S', 'M', 'B', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kBytes = 2 };

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointRecord {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<std::uint8_t> payload;  // little-endian
};

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
}

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  std::uint8_t b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  out.insert(out.end(), b, b + sizeof(U));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  std::uint8_t b[sizeof(U)];
  std::memcpy(b, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  U v;
  std::memcpy(&v, b, sizeof(U));
  return v;
}

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kBytes: return 1;
  }
  throw CheckpointError("unknown dtype tag");
}

}  // namespace detail

template <typename T>
CheckpointRecord make_record(const std::string& name, const Tensor<T>& t) {
  CheckpointRecord r{name, dtype_of<T>(), t.shape(), {}};
  r.payload.reserve(t.size() * sizeof(T));
  for (const T v : t.data()) detail::put_le(r.payload, v);
  return r;
}

inline CheckpointRecord make_bytes_record(const std::string& name, const std::string& bytes) {
  return {name, DType::kBytes, {bytes.size()}, {bytes.begin(), bytes.end()}};
}

/// Decodes a numeric record into T (f32 <-> f64 conversion allowed).
template <typename T>
std::vector<T> record_values(const CheckpointRecord& r) {
  std::vector<T> out(numel(r.shape));
  if (r.dtype == DType::kF32) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(detail::get_le<float>(&r.payload[i * 4]));
  } else if (r.dtype == DType::kF64) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(detail::get_le<double>(&r.payload[i * 8]));
  } else {
    throw CheckpointError("record '" + r.name + "' is not numeric");
  }
  return out;
}

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& r : records) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<std::uint8_t>(r.dtype));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (const auto e : r.shape) detail::put_le<std::uint64_t>(out, e);
    if (r.payload.size() != numel(r.shape) * detail::dtype_size(r.dtype))
      throw CheckpointError("record '" + r.name + "' payload size does not match its shape");
    out.insert(out.end(), r.payload.begin(), r.payload.end());
  }
  return out;
}

inline std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() - pos < n)
      throw CheckpointError(std::string("truncated checkpoint reading ") + what + " at byte " + std::to_string(pos));
  };
  need(8, "header");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  pos = 4;
  const auto version = detail::get_le<std::uint32_t>(&bytes[pos]);
  pos += 4;
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::vector<CheckpointRecord> records;
  while (pos < bytes.size()) {
    CheckpointRecord r;
    need(4, "name length");
    const auto nlen = detail::get_le<std::uint32_t>(&bytes[pos]);
    pos += 4;
    need(nlen, "name");
    r.name.assign(bytes.begin() + pos, bytes.begin() + pos + nlen);
    pos += nlen;
    need(5, "dtype/rank");
    const auto tag = bytes[pos++];
    if (tag > 2) throw CheckpointError("unknown dtype tag " + std::to_string(tag) + " at byte " + std::to_string(pos - 1));
    r.dtype = static_cast<DType>(tag);
    const auto rank = detail::get_le<std::uint32_t>(&bytes[pos]);
    pos += 4;
    need(std::size_t{8} * rank, "extents");
    for (std::uint32_t k = 0; k < rank; ++k) {
      r.shape.push_back(detail::get_le<std::uint64_t>(&bytes[pos]));
      pos += 8;
    }
    const std::size_t n = numel(r.shape) * detail::dtype_size(r.dtype);
    need(n, "payload");
    r.payload.assign(bytes.begin() + pos, bytes.begin() + pos + n);
    pos += n;
    records.push_back(std::move(r));
  }
  return records;
}

inline void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records) {
  const auto bytes = encode_checkpoint(records);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed for '" + path + "'");
}

inline std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Records for every parameter and buffer in `params`.
template <typename T>
std::vector<CheckpointRecord> to_records(const ParamList<T>& params) {
  std::vector<CheckpointRecord> out;
  for (const auto& p : params) out.push_back(make_record(p.name, p.tensor));
  return out;
}

/// Copies matching records into `params`; every parameter must be present
/// with an identical shape.
template <typename T>
void load_records(ParamList<T>& params, const std::vector<CheckpointRecord>& records) {
  for (auto& p : params) {
    const auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.name == p.name; });
    if (it == records.end()) throw CheckpointError("checkpoint is missing tensor '" + p.name + "'");
    if (it->shape != p.tensor.shape())
      throw CheckpointError("tensor '" + p.name + "' has shape " + to_string(it->shape) + " in checkpoint but " +
                            to_string(p.tensor.shape()) + " in model");
    const auto values = record_values<T>(*it);
    std::copy(values.begin(), values.end(), p.tensor.mutable_data().begin());
  }
}

}  // namespace samamba
