#include "embridge/tensor_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");
static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559,
              "tensor container assumes IEEE-754 binary64");

namespace embridge {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'T', '1'};

std::size_t checked_size(const std::vector<std::uint64_t>& dims, const char* what) {
  std::size_t n = 1;
  for (std::uint64_t d : dims) {
    if (d == 0) throw TensorIoError(std::string(what) + ": zero-length dimension");
    if (n > std::numeric_limits<std::size_t>::max() / d)
      throw TensorIoError(std::string(what) + ": dimension overflow");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void write_header(std::ofstream& out, TensorDtype dtype,
                  const std::vector<std::uint64_t>& dims) {
  out.write(kMagic, 4);
  std::uint32_t dt = static_cast<std::uint32_t>(dtype);
  std::uint32_t rank = static_cast<std::uint32_t>(dims.size());
  out.write(reinterpret_cast<const char*>(&dt), 4);
  out.write(reinterpret_cast<const char*>(&rank), 4);
  for (std::uint64_t d : dims) out.write(reinterpret_cast<const char*>(&d), 8);
}

template <typename Elem>
void write_file(const std::filesystem::path& path, TensorDtype dtype,
                const std::vector<std::uint64_t>& dims, const std::vector<Elem>& data) {
  if (checked_size(dims, "write_tensor") != data.size())
    throw TensorIoError("write_tensor: dims/data size mismatch for " + path.string());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw TensorIoError("write_tensor: cannot open " + tmp.string());
    write_header(out, dtype, dims);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(Elem)));
    if (!out) throw TensorIoError("write_tensor: short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw TensorIoError("write_tensor: rename to " + path.string() + " failed: " + ec.message());
  }
}

struct Header {
  TensorDtype dtype;
  std::vector<std::uint64_t> dims;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw TensorIoError("read_tensor: bad magic in " + path.string());
  std::uint32_t dt = 0, rank = 0;
  in.read(reinterpret_cast<char*>(&dt), 4);
  in.read(reinterpret_cast<char*>(&rank), 4);
  if (!in) throw TensorIoError("read_tensor: truncated header in " + path.string());
  if (dt < 1 || dt > 4)
    throw TensorIoError("read_tensor: unknown dtype code " + std::to_string(dt) + " in " +
                        path.string());
  if (rank > 32) throw TensorIoError("read_tensor: implausible rank in " + path.string());
  Header h;
  h.dtype = static_cast<TensorDtype>(dt);
  h.dims.resize(rank);
  for (auto& d : h.dims) in.read(reinterpret_cast<char*>(&d), 8);
  if (!in) throw TensorIoError("read_tensor: truncated dims in " + path.string());
  return h;
}

template <typename Elem>
std::vector<Elem> read_payload(std::ifstream& in, std::size_t n,
                               const std::filesystem::path& path) {
  std::vector<Elem> data(n);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(n * sizeof(Elem)));
  if (!in || in.gcount() != static_cast<std::streamsize>(n * sizeof(Elem)))
    throw TensorIoError("read_tensor: truncated payload in " + path.string());
  // any trailing bytes indicate a corrupted or mismatched file
  in.peek();
  if (!in.eof()) throw TensorIoError("read_tensor: trailing bytes in " + path.string());
  return data;
}

} // namespace

std::size_t TensorF64::size() const { return checked_size(dims, "TensorF64"); }
std::size_t TensorC128::size() const { return checked_size(dims, "TensorC128"); }

void write_tensor(const std::filesystem::path& path, const TensorF64& t) {
  write_file(path, TensorDtype::f64, t.dims, t.data);
}

void write_tensor(const std::filesystem::path& path, const TensorC128& t) {
  write_file(path, TensorDtype::c128, t.dims, t.data);
}

TensorF64 read_tensor_f64(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorIoError("read_tensor: cannot open " + path.string());
  Header h = read_header(in, path);
  if (h.dtype != TensorDtype::f64)
    throw TensorIoError("read_tensor: expected f64 payload in " + path.string());
  std::size_t n = checked_size(h.dims, "read_tensor");
  TensorF64 t;
  t.dims = std::move(h.dims);
  t.data = read_payload<double>(in, n, path);
  return t;
}

TensorC128 read_tensor_c128(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorIoError("read_tensor: cannot open " + path.string());
  Header h = read_header(in, path);
  if (h.dtype != TensorDtype::c128)
    throw TensorIoError("read_tensor: expected c128 payload in " + path.string());
  std::size_t n = checked_size(h.dims, "read_tensor");
  TensorC128 t;
  t.dims = std::move(h.dims);
  t.data = read_payload<cplx>(in, n, path);
  return t;
}

TensorDtype peek_dtype(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorIoError("read_tensor: cannot open " + path.string());
  return read_header(in, path).dtype;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw TensorIoError("write_text_atomic: cannot open " + tmp.string());
    out << text;
    if (!out) throw TensorIoError("write_text_atomic: short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw TensorIoError("write_text_atomic: rename to " + path.string() +
                        " failed: " + ec.message());
  }
}

} // namespace embridge
