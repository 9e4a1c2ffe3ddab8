// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tce/param_store.hpp"
#include "tce/tensor.hpp"

namespace tce {

// TCEM container layout (all integers little-endian):
//
//   "TCEM" | version u32 (=1) | count u32 | precision u32 (4 = f32, 8 = f64)
//   then per tensor:
//   name_len u16 | name (UTF-8) | rank u32 | dims u32 x rank | payload
//
// The payload is row-major IEEE-754 in the precision named by the header.
enum class StoragePrecision : std::uint32_t { f32 = 4, f64 = 8 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors,
                   StoragePrecision precision = StoragePrecision::f64);
NamedTensors read_tensors(const std::filesystem::path& path);

// Saves every parameter and buffer value.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     StoragePrecision precision = StoragePrecision::f64);
// Overwrites values of parameters already present in `store`; every stored
// parameter must appear in the file with a matching shape.
void load_checkpoint(const std::filesystem::path& path, ParamStore& store);

}  // namespace tce
