#include "sp/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace sp {

namespace {

constexpr std::size_t kMaxRank = 8;

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  put_bytes(out, b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, b, 8);
}

bool get_bytes(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount()) == n;
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!get_bytes(in, b, 4)) throw IoError(IoErrorCode::truncated, "truncated header");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!get_bytes(in, b, 8)) throw IoError(IoErrorCode::truncated, "truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

std::uint64_t to_le_bits(double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  return bits;  // written byte-by-byte below, so host endianness never leaks
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  put_bytes(out, kTensorMagic, sizeof(kTensorMagic));
  put_u32(out, kTensorVersion);
  const unsigned char et = static_cast<unsigned char>(t.elem_type());
  put_bytes(out, &et, 1);
  const unsigned char rank = static_cast<unsigned char>(t.rank());
  put_bytes(out, &rank, 1);
  for (std::size_t d : t.shape()) put_u64(out, d);

  if (t.elem_type() == ElemType::f64) {
    for (double v : t.values()) put_u64(out, to_le_bits(v));
  } else {
    for (double v : t.values()) {
      const float f = static_cast<float>(v);
      put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  if (!out) throw IoError(IoErrorCode::write_failed, "tensor write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[sizeof(kTensorMagic)];
  if (!get_bytes(in, magic, sizeof(magic)))
    throw IoError(IoErrorCode::truncated, "file shorter than magic");
  if (std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0)
    throw IoError(IoErrorCode::bad_magic, "bad magic");

  const std::uint32_t version = get_u32(in);
  if (version != kTensorVersion)
    throw IoError(IoErrorCode::bad_header, "unsupported container version");

  unsigned char et = 0, rank = 0;
  if (!get_bytes(in, &et, 1) || !get_bytes(in, &rank, 1))
    throw IoError(IoErrorCode::truncated, "truncated header");
  if (et > 1) throw IoError(IoErrorCode::bad_header, "unknown element type code");
  if (rank == 0 || rank > kMaxRank)
    throw IoError(IoErrorCode::bad_header, "unsupported rank");

  std::vector<std::size_t> shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    const std::uint64_t dim = get_u64(in);
    if (dim == 0 || dim > std::numeric_limits<std::uint32_t>::max())
      throw IoError(IoErrorCode::bad_header, "bad dimension");
    d = static_cast<std::size_t>(dim);
    count *= d;
  }

  std::vector<double> data(count);
  if (et == static_cast<unsigned char>(ElemType::f64)) {
    for (auto& v : data) {
      unsigned char b[8];
      if (!get_bytes(in, b, 8))
        throw IoError(IoErrorCode::truncated, "truncated payload");
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
      v = std::bit_cast<double>(bits);
    }
  } else {
    for (auto& v : data) {
      unsigned char b[4];
      if (!get_bytes(in, b, 4))
        throw IoError(IoErrorCode::truncated, "truncated payload");
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= std::uint32_t(b[i]) << (8 * i);
      v = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return Tensor::from_data(std::move(shape), std::move(data),
                           static_cast<ElemType>(et));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  write_tensor(out, t);
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  Tensor t = read_tensor(in);
  // A standalone tensor file must end exactly after the payload.
  char extra;
  if (in.read(&extra, 1))
    throw IoError(IoErrorCode::trailing_data, "trailing bytes after payload");
  return t;
}

}  // namespace sp
