#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "embridge/common.hpp"

namespace embridge {

// Binary tensor container.
//
// File layout (all integers little-endian):
//   bytes 0..3   magic "EMT1"
//   bytes 4..7   dtype  u32   (1 = f32, 2 = f64, 3 = complex<f32>, 4 = complex<f64>)
//   bytes 8..11  rank   u32
//   next 8*rank  dims   u64 each
//   payload      row-major element data (last dim fastest), native IEEE-754 LE
//
// Writes are atomic: data lands in a sibling temp file which is renamed over
// the destination, so readers never observe a partially written tensor.

enum class TensorDtype : std::uint32_t {
  f32 = 1,
  f64 = 2,
  c64 = 3,
  c128 = 4,
};

struct TensorIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TensorF64 {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  std::size_t size() const;
};

struct TensorC128 {
  std::vector<std::uint64_t> dims;
  std::vector<cplx> data;

  std::size_t size() const;
};

void write_tensor(const std::filesystem::path& path, const TensorF64& t);
void write_tensor(const std::filesystem::path& path, const TensorC128& t);

TensorF64 read_tensor_f64(const std::filesystem::path& path);
TensorC128 read_tensor_c128(const std::filesystem::path& path);

// Peeks at the header without loading the payload.
TensorDtype peek_dtype(const std::filesystem::path& path);

// Atomic text-artifact write (manifests, CSVs, markers): same temp-then-rename
// contract as the tensor writers.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

} // namespace embridge
