#include "cerberus/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace cerberus {

namespace {

constexpr char kMagic[4] = {'C', 'E', 'R', 'B'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw ParseError("truncated tensor block in " + path);
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) {
    throw ParseError("truncated tensor payload in " + path);
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  write_u32(os, kTensorFormatVersion);
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) write_u32(os, static_cast<std::uint32_t>(t.dim(i)));
  for (long i = 0; i < t.size(); ++i) write_f64(os, t.array()[i]);
}

Tensor read_tensor(std::istream& is, const std::string& path) {
  char magic[4];
  if (!is.read(magic, 4)) throw ParseError("missing tensor magic in " + path);
  if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError("bad tensor magic in " + path);
  const std::uint32_t version = read_u32(is, path);
  if (version != kTensorFormatVersion) {
    throw ParseError("unsupported tensor format version " + std::to_string(version) + " in " +
                     path);
  }
  const std::uint32_t rank = read_u32(is, path);
  if (rank > 8) throw ParseError("implausible tensor rank in " + path);
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<int>(read_u32(is, path));
  }
  const long n = shape_numel(shape);
  Eigen::ArrayXd data(n);
  for (long i = 0; i < n; ++i) data[i] = read_f64(is, path);
  return Tensor::from_array(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_tensor(os, t);
  if (!os) throw IoError("failed writing " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_tensor(is, path);
}

}  // namespace cerberus
