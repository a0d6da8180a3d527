// SPDX-License-Identifier: Apache-2.0

#include "propnet/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace propnet {
namespace {

constexpr char kMagic[4] = {'P', 'R', 'P', 'T'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos));
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in[pos + i]) << (8 * i));
  pos += sizeof(U);
  return v;
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) {
    return DType::kF32;
  } else {
    return DType::kF64;
  }
}

std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }

const char* dtype_name(DType d) {
  switch (d) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kU64: return "u64";
  }
  return "?";
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

void Checkpoint::add(CheckpointEntry e) {
  if (contains(e.name)) throw CheckpointError("duplicate checkpoint entry '" + e.name + "'");
  if (e.name.size() > 0xffff) throw CheckpointError("checkpoint entry name too long");
  entries_.push_back(std::move(e));
}

template <typename T>
void Checkpoint::put(const std::string& name, const Tensor<T>& t) {
  CheckpointEntry e;
  e.name = name;
  e.dtype = dtype_of<T>();
  for (auto d : t.shape().dims()) e.dims.push_back(static_cast<std::uint32_t>(d));
  e.payload.reserve(t.numel() * sizeof(T));
  for (std::size_t i = 0; i < t.numel(); ++i) put_le(e.payload, std::bit_cast<Bits<T>>(t[i]));
  add(std::move(e));
}

void Checkpoint::put_u64(const std::string& name, std::span<const std::uint64_t> values) {
  CheckpointEntry e;
  e.name = name;
  e.dtype = DType::kU64;
  e.dims = {static_cast<std::uint32_t>(values.size())};
  for (auto v : values) put_le(e.payload, v);
  add(std::move(e));
}

bool Checkpoint::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
}

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

template <typename T>
Tensor<T> Checkpoint::get(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != dtype_of<T>()) {
    throw CheckpointError("tensor '" + name + "' stored as " + dtype_name(e.dtype) + ", requested " +
                          dtype_name(dtype_of<T>()));
  }
  std::vector<std::size_t> dims(e.dims.begin(), e.dims.end());
  Tensor<T> t{Shape(dims)};
  std::size_t pos = 0;
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::bit_cast<T>(get_le<Bits<T>>(e.payload, pos));
  return t;
}

std::vector<std::uint64_t> Checkpoint::get_u64(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::kU64) throw CheckpointError("entry '" + name + "' is not u64");
  std::vector<std::uint64_t> out(e.dims.empty() ? 0 : e.dims[0]);
  std::size_t pos = 0;
  for (auto& v : out) v = get_le<std::uint64_t>(e.payload, pos);
  return out;
}

std::vector<std::uint8_t> Checkpoint::encode() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put_le(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.dtype));
    out.push_back(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) put_le(out, d);
  }
  for (const auto& e : entries_) out.insert(out.end(), e.payload.begin(), e.payload.end());
  put_le(out, crc32_of(out));
  return out;
}

Checkpoint Checkpoint::decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw CheckpointError("not a checkpoint: bad magic");
  }
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  std::size_t crc_pos = bytes.size() - 4;
  const auto stored = get_le<std::uint32_t>(bytes, crc_pos);
  if (stored != crc32_of(bytes.first(bytes.size() - 4))) throw CheckpointError("checkpoint CRC mismatch");
  const auto body = bytes.first(bytes.size() - 4);

  const auto count = get_le<std::uint32_t>(body, pos);
  Checkpoint ck;
  std::vector<std::size_t> sizes;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = get_le<std::uint16_t>(body, pos);
    if (pos + len > body.size()) throw CheckpointError("checkpoint truncated in manifest");
    e.name.assign(reinterpret_cast<const char*>(body.data() + pos), len);
    pos += len;
    const auto dtype = get_le<std::uint8_t>(body, pos);
    if (dtype > 2) throw CheckpointError("unknown dtype " + std::to_string(dtype) + " for '" + e.name + "'");
    e.dtype = static_cast<DType>(dtype);
    const auto rank = get_le<std::uint8_t>(body, pos);
    std::size_t numel = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      e.dims.push_back(get_le<std::uint32_t>(body, pos));
      numel *= e.dims.back();
    }
    sizes.push_back(numel * dtype_size(e.dtype));
    ck.entries_.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < ck.entries_.size(); ++i) {
    if (pos + sizes[i] > body.size()) throw CheckpointError("checkpoint payload truncated");
    ck.entries_[i].payload.assign(body.begin() + static_cast<std::ptrdiff_t>(pos),
                                  body.begin() + static_cast<std::ptrdiff_t>(pos + sizes[i]));
    pos += sizes[i];
  }
  if (pos != body.size()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& file) const {
  const auto bytes = encode();
  const auto tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, file);
}

Checkpoint Checkpoint::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

template void Checkpoint::put<float>(const std::string&, const Tensor<float>&);
template void Checkpoint::put<double>(const std::string&, const Tensor<double>&);
template Tensor<float> Checkpoint::get<float>(const std::string&) const;
template Tensor<double> Checkpoint::get<double>(const std::string&) const;

}  // namespace propnet
