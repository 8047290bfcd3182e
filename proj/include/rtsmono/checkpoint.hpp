#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rtsmono/tensor.hpp"

namespace rtsmono {

/// Flat tensor archive.
///
///   magic   8 bytes  "RTSCKPT1"
///   count   u32      number of records
///   records count x { u32 name length, name bytes, u8 dtype (0 = f32, 1 = u8), u32 rank, rank x u64 dims }
///   payload each record's elements in manifest order, little-endian
///
/// The file must end exactly after the payload.
struct ArchiveEntry {
  enum class Dtype : std::uint8_t { F32 = 0, U8 = 1 };
  std::string name;
  Dtype dtype = Dtype::F32;
  Shape shape;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  static ArchiveEntry from_tensor(std::string name, const Tensor<float>& t);
  static ArchiveEntry from_bytes(std::string name, const std::string& bytes);
  Tensor<float> tensor() const;
  std::string bytes() const { return {u8.begin(), u8.end()}; }
};

void write_archive(const std::filesystem::path& path, const std::vector<ArchiveEntry>& entries);
/// Throws std::runtime_error naming the byte offset of the first inconsistency.
std::vector<ArchiveEntry> read_archive(const std::filesystem::path& path);

}  // namespace rtsmono
