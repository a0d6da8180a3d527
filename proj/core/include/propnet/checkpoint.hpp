// SPDX-License-Identifier: Apache-2.0
//
// Binary snapshot format:
//   "PRPT" | u32 version | u32 entry count
//   per entry: u16 name length, name bytes, u8 dtype, u8 rank, u32 dims[rank]
//   payloads, in entry order, little-endian
//   u32 CRC-32 of every preceding byte

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "propnet/tensor.hpp"

namespace propnet {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU64 = 2 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;  // little-endian
};

class Checkpoint {
 public:
  template <typename T>
  void put(const std::string& name, const Tensor<T>& t);
  void put_u64(const std::string& name, std::span<const std::uint64_t> values);

  bool contains(const std::string& name) const;
  const CheckpointEntry& entry(const std::string& name) const;
  /// Reads a floating tensor; the stored dtype must match T.
  template <typename T>
  Tensor<T> get(const std::string& name) const;
  std::vector<std::uint64_t> get_u64(const std::string& name) const;

  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  std::vector<std::uint8_t> encode() const;
  static Checkpoint decode(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& file) const;
  static Checkpoint load(const std::filesystem::path& file);

 private:
  void add(CheckpointEntry e);
  std::vector<CheckpointEntry> entries_;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace propnet
