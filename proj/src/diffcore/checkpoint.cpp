// SPDX-License-Identifier: Apache-2.0
#include "tce/checkpoint.hpp"

#include <fstream>
#include <limits>
#include <map>

#include "tce/binary_io.hpp"
#include "tce/error.hpp"

namespace tce {

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors, StoragePrecision precision) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
  os.write("TCEM", 4);
  binary::write_le<std::uint32_t>(os, kCheckpointVersion);
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(precision));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("checkpoint: name too long");
    binary::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : t.data()) {
      if (precision == StoragePrecision::f32) {
        binary::write_f32(os, v);
      } else {
        binary::write_f64(os, v);
      }
    }
  }
  if (!os) throw FormatError("checkpoint: write failed for " + path.string());
}

NamedTensors read_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  const std::string what = "checkpoint " + path.string();
  if (!is) throw FormatError(what + ": cannot open");
  binary::expect_magic(is, "TCEM", what);
  const auto version = binary::read_le<std::uint32_t>(is, what);
  if (version != kCheckpointVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
  const auto count = binary::read_le<std::uint32_t>(is, what);
  const auto flag = binary::read_le<std::uint32_t>(is, what);
  if (flag != 4 && flag != 8) throw FormatError(what + ": bad precision flag " + std::to_string(flag));

  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = binary::read_le<std::uint16_t>(is, what);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError(what + ": truncated name");
    const auto rank = binary::read_le<std::uint32_t>(is, what);
    if (rank == 0 || rank > 8) throw FormatError(what + ": bad rank for '" + name + "'");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = binary::read_le<std::uint32_t>(is, what);
      if (d == 0) throw FormatError(what + ": zero dimension in '" + name + "'");
      n *= d;
    }
    std::vector<double> data(n);
    for (double& v : data) v = flag == 4 ? binary::read_f32(is, what) : binary::read_f64(is, what);
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, StoragePrecision precision) {
  NamedTensors tensors;
  for (const auto& [name, p] : store.entries()) tensors.emplace_back(name, p.value);
  write_tensors(path, tensors, precision);
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  std::map<std::string, Tensor> loaded;
  for (auto& [name, t] : read_tensors(path)) loaded.emplace(name, std::move(t));
  for (auto& [name, p] : store.entries()) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw FormatError("checkpoint " + path.string() + ": missing tensor '" + name + "'");
    if (!it->second.same_shape(p.value)) {
      throw FormatError("checkpoint " + path.string() + ": tensor '" + name + "' has shape " +
                        it->second.shape_string() + ", expected " + p.value.shape_string());
    }
    p.value = std::move(it->second);
  }
}

}  // namespace tce
