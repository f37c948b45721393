#include "sncp/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "sncp/error.hpp"

namespace sncp {

namespace {

constexpr std::array<char, 4> kMagic{'D', 'N', 'T', '1'};
// Guards against absurd headers before allocating.
constexpr std::uint32_t kMaxOrder = 64;

template <typename UInt>
void put_le(std::ostream& out, UInt v) {
  std::array<char, sizeof(UInt)> bytes{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename UInt>
UInt get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(UInt)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw DataError(std::string("DNT1: truncated ") + what);
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_dnt(std::ostream& out, const DenseTensor& t) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.order()));
  for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw DataError("DNT1: write failed");
}

void write_dnt(const std::filesystem::path& path, const DenseTensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_dnt(out, t);
}

void write_dnt(const std::filesystem::path& path, const Matrix& m) { write_dnt(path, to_tensor(m)); }

DenseTensor read_dnt(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("DNT1: bad magic bytes");
  const auto order = get_le<std::uint32_t>(in, "header");
  if (order == 0 || order > kMaxOrder) throw DataError("DNT1: unsupported order " + std::to_string(order));
  Shape shape(order);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    const auto v = get_le<std::uint64_t>(in, "extents");
    if (v == 0) throw DataError("DNT1: zero extent");
    if (count > (std::uint64_t{1} << 40) / v) throw DataError("DNT1: tensor too large");
    count *= v;
    e = static_cast<std::size_t>(v);
  }
  std::vector<double> data(static_cast<std::size_t>(count));
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw DataError("DNT1: truncated data");
  } else {
    for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(in, "data"));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("DNT1: trailing bytes after data");
  try {
    return DenseTensor(std::move(shape), std::move(data));
  } catch (const ShapeError& e) {
    throw DataError(std::string("DNT1: ") + e.what());
  }
}

DenseTensor read_dnt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return read_dnt(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Matrix read_dnt_matrix(const std::filesystem::path& path) {
  const DenseTensor t = read_dnt(path);
  if (t.order() != 2) throw DataError(path.string() + ": expected a matrix (order 2), got order " + std::to_string(t.order()));
  return to_matrix(t);
}

DenseTensor to_tensor(const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return DenseTensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(data));
}

Matrix to_matrix(const DenseTensor& t) {
  if (t.order() != 2) throw ShapeError("to_matrix: tensor is not of order 2");
  return Eigen::Map<const Matrix>(t.data().data(), static_cast<Eigen::Index>(t.extent(0)),
                                  static_cast<Eigen::Index>(t.extent(1)));
}

}  // namespace sncp
