#include "sp/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "sp/errors.hpp"
#include "sp/tensor_io.hpp"

namespace sp {

namespace {

void put_u16(std::ostream& out, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v),
                              static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw IoError(IoErrorCode::truncated, "truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  if (in.gcount() != 2) throw IoError(IoErrorCode::truncated, "truncated checkpoint");
  return static_cast<std::uint16_t>(b[0] | (std::uint16_t(b[1]) << 8));
}

}  // namespace

void save_records(const std::filesystem::path& path, const NamedTensors& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, tensor] : records) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, tensor);
  }
  if (!out) throw IoError(IoErrorCode::write_failed, "checkpoint write failed");
}

NamedTensors load_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic))
    throw IoError(IoErrorCode::truncated, "file shorter than magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IoError(IoErrorCode::bad_magic, "bad checkpoint magic");
  if (get_u32(in) != kCheckpointVersion)
    throw IoError(IoErrorCode::bad_header, "unsupported checkpoint version");

  const std::uint32_t count = get_u32(in);
  NamedTensors records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = get_u16(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (in.gcount() != len)
      throw IoError(IoErrorCode::truncated, "truncated record name");
    records.emplace_back(std::move(name), read_tensor(in));
  }
  return records;
}

}  // namespace sp
