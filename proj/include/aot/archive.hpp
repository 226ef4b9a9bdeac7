#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace aot {

/// Element type of a stored tensor.
enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

struct ArchiveTensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  DType dtype = DType::kFloat64;
  std::vector<double> values;

  std::uint64_t numel() const;
};

/// Named-tensor archive with a JSON metadata header.
///
/// Byte layout (all integers little-endian):
///   magic      8 bytes  "AOTARCH1"
///   meta_len   u32      length of the UTF-8 JSON metadata document
///   meta       bytes
///   count      u32      number of tensors
///   per tensor:
///     name_len u32, name bytes (UTF-8, hierarchical "a.b.c")
///     dtype    u8       1 = float32, 2 = float64
///     ndim     u8
///     dims     u64 * ndim
///     data     numel * sizeof(dtype), IEEE-754 little-endian, row-major
struct Archive {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<ArchiveTensor> tensors;

  const ArchiveTensor* find(const std::string& name) const;
  const ArchiveTensor& get(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_archive(const Archive& archive);
Archive parse_archive(std::span<const std::uint8_t> bytes);

void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

}  // namespace aot
