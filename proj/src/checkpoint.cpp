#include "relpose/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "relpose/error.hpp"

namespace relpose {
namespace {

void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff),
                     static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

std::uint16_t get_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2))
    throw IoError(std::string("truncated file reading ") + what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoError(std::string("truncated file reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& is, const char* what) {
  const std::uint32_t bits = get_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void check_magic(std::istream& is, const char* magic, const std::string& path) {
  char got[4];
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0)
    throw IoError("bad magic in " + path + " (expected " + magic + ")");
}

}  // namespace

void save_rpck(const std::string& path,
               const std::vector<NamedTensor>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("RPCK", 4);
  put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff)
      throw IoError("checkpoint entry name too long: " + e.name);
    put_u16(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    os.put(static_cast<char>(e.data.ndim()));
    for (int d : e.data.shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (float v : e.data.data) put_f32(os, v);
  }
  if (!os) throw IoError("write failed for " + path);
}

std::vector<NamedTensor> load_rpck(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  check_magic(is, "RPCK", path);
  const std::uint32_t count = get_u32(is, "entry count");
  std::vector<NamedTensor> entries;
  entries.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint16_t name_len = get_u16(is, "name length");
    std::string name(name_len, '\0');
    if (name_len && !is.read(name.data(), name_len))
      throw IoError("truncated name in " + path);
    const int ndim = is.get();
    if (ndim < 0) throw IoError("truncated ndim in " + path);
    std::vector<int> shape(static_cast<std::size_t>(ndim));
    for (int& d : shape) d = static_cast<int>(get_u32(is, "dim"));
    ad::Tensor<float> t(shape);
    for (int i = 0; i < t.size(); ++i) t[i] = get_f32(is, "tensor data");
    entries.push_back({std::move(name), std::move(t)});
  }
  return entries;
}

void save_rptn(const std::string& path, const ad::Tensor<float>& tensor) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("RPTN", 4);
  put_u32(os, static_cast<std::uint32_t>(tensor.ndim()));
  for (int d : tensor.shape) put_u32(os, static_cast<std::uint32_t>(d));
  for (float v : tensor.data) put_f32(os, v);
  if (!os) throw IoError("write failed for " + path);
}

ad::Tensor<float> load_rptn(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  check_magic(is, "RPTN", path);
  const std::uint32_t ndim = get_u32(is, "ndim");
  if (ndim > 8) throw IoError("implausible ndim in " + path);
  std::vector<int> shape(ndim);
  for (int& d : shape) d = static_cast<int>(get_u32(is, "dim"));
  ad::Tensor<float> t(shape);
  for (int i = 0; i < t.size(); ++i) t[i] = get_f32(is, "tensor data");
  return t;
}

}  // namespace relpose
