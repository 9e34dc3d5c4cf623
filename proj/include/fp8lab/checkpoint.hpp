// SPDX-License-Identifier: Apache-2.0
//
// Flat binary checkpoint container, little-endian throughout:
//
//   magic   8 bytes "F8LABCK1"
//   u32     version (1)
//   u32     flags (bit 0: folded inference weights)
//   u64     record count
//   record* { u32 name_len; name bytes;
//             u32 dtype (0=f64 1=fp16 2=bf16 3=e4m3 4=e5m2 5=u64);
//             u32 ndim; u64 dims[ndim];
//             u64 nscales; f64 scales[nscales];
//             payload (f64/u64 raw; code dtypes: u8 for 8-bit formats,
//             u16 little-endian for 16-bit formats) }

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fp8lab/scaling.hpp"
#include "fp8lab/tensor.hpp"

namespace fp8lab {

enum class CheckpointDtype : std::uint32_t {
  f64 = 0,
  fp16 = 1,
  bf16 = 2,
  e4m3 = 3,
  e5m2 = 4,
  u64 = 5,
};

struct CheckpointRecord {
  std::string name;
  CheckpointDtype dtype = CheckpointDtype::f64;
  std::vector<std::size_t> dims;
  std::vector<double> f64;            // dtype f64
  std::vector<std::uint64_t> u64;     // dtype u64
  std::vector<std::uint16_t> codes;   // code dtypes
  std::vector<double> scales;         // code dtypes

  static CheckpointRecord tensor(std::string name, const Tensor& t);
  static CheckpointRecord scaled(std::string name, const ScaledTensor& t);
  static CheckpointRecord scalar_u64(std::string name, std::uint64_t v);
  static CheckpointRecord vector_f64(std::string name,
                                     const std::vector<double>& v);

  Tensor as_tensor() const;            // f64 records
  ScaledTensor as_scaled() const;      // code records
  std::uint64_t as_u64() const;        // single-element u64 records
};

struct Checkpoint {
  std::uint32_t flags = 0;
  std::vector<CheckpointRecord> records;

  static constexpr std::uint32_t kFoldedFlag = 1u;

  const CheckpointRecord* find(const std::string& name) const;
  const CheckpointRecord& require(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace fp8lab
