#pragma once

// On-disk weight container.
//
//   magic "TELLME01" | u32 version | config record | u32 tensor count
//   | tensor directory | u32 crc32(version .. end of directory) | payloads
//
// All integers are little-endian. Each directory entry is
//   u16 name length, name bytes, u8 element type, u8 rank, u64 dims[rank],
//   u32 group size, u32 tables, f32 scale, u64 offset, u64 byte length,
//   u32 crc32(payload)
// Payloads are laid out back to back in directory order and the file ends
// exactly at the last payload. Ternary-packed payloads store one group index
// per byte.

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "tellme/model_config.hpp"
#include "tellme/ternary_pack.hpp"

namespace tellme {

inline constexpr char kWeightMagic[8] = {'T', 'E', 'L', 'L', 'M', 'E', '0', '1'};
inline constexpr std::uint32_t kWeightVersion = 1;

enum class ElementType : std::uint8_t { kTernaryPacked = 0, kInt8 = 1, kFp32 = 2 };

struct Int8Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<std::int8_t> data;
  bool operator==(const Int8Tensor&) const = default;
};

struct Fp32Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;
  bool operator==(const Fp32Tensor&) const = default;
};

using TensorPayload = std::variant<PackedTernaryMatrix, Int8Tensor, Fp32Tensor>;

struct NamedTensor {
  std::string name;
  TensorPayload payload;
  bool operator==(const NamedTensor&) const = default;
};

struct WeightRecord {
  ModelConfig config;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  bool operator==(const WeightRecord&) const = default;
};

std::vector<std::uint8_t> serialize_weights(const WeightRecord& record);
// Errors: kBadMagic, kBadVersion, kTruncated, kChecksum, kLengthMismatch,
// kShape, kRange. Never returns a partially parsed record.
WeightRecord deserialize_weights(const std::vector<std::uint8_t>& bytes);

void write_weights(const std::filesystem::path& path, const WeightRecord& record);
WeightRecord read_weights(const std::filesystem::path& path);

}  // namespace tellme
