#include "fidn/tensor.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace fidn {

std::size_t shape_size(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

namespace io {

namespace {
void put_bytes(std::ostream& out, std::uint32_t v, int n) {
  char buf[4];
  for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(buf, n);
}

std::uint32_t get_bytes(std::istream& in, int n) {
  unsigned char buf[4] = {};
  in.read(reinterpret_cast<char*>(buf), n);
  if (in.gcount() != n) throw FormatError("unexpected end of file");
  std::uint32_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}
}  // namespace

void write_u16(std::ostream& out, std::uint16_t v) { put_bytes(out, v, 2); }
void write_u32(std::ostream& out, std::uint32_t v) { put_bytes(out, v, 4); }
std::uint16_t read_u16(std::istream& in) { return static_cast<std::uint16_t>(get_bytes(in, 2)); }
std::uint32_t read_u32(std::istream& in) { return get_bytes(in, 4); }

}  // namespace io

void write_tnsr(std::ostream& out, const Tensor<float>& tensor) {
  if (tensor.rank() == 0) throw ShapeError("cannot serialise an empty tensor");
  out.write("TNSR", 4);
  io::write_u32(out, kTnsrVersion);
  io::write_u32(out, static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) io::write_u32(out, static_cast<std::uint32_t>(d));
  for (float v : tensor.data()) io::write_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw FormatError("failed writing TNSR payload");
}

Tensor<float> read_tnsr(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string_view(magic, 4) != "TNSR") {
    throw FormatError("bad TNSR magic");
  }
  const std::uint32_t version = io::read_u32(in);
  if (version != kTnsrVersion) {
    throw FormatError("unsupported TNSR version " + std::to_string(version));
  }
  const std::uint32_t ndim = io::read_u32(in);
  if (ndim == 0 || ndim > 8) throw FormatError("bad TNSR rank " + std::to_string(ndim));
  Shape shape(ndim);
  for (auto& d : shape) {
    d = io::read_u32(in);
    if (d == 0) throw FormatError("TNSR dimension is zero");
  }
  const std::size_t n = shape_size(shape);
  std::vector<unsigned char> raw(n * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw FormatError("truncated TNSR payload");
  }
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* p = raw.data() + 4 * i;
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    data[i] = std::bit_cast<float>(bits);
  }
  return Tensor<float>(std::move(shape), std::move(data));
}

void save_tnsr(const std::filesystem::path& path, const Tensor<float>& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tnsr(out, tensor);
}

Tensor<float> load_tnsr(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return read_tnsr(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace fidn
