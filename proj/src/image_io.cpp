#include "sp/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "sp/errors.hpp"

namespace sp {

namespace {

unsigned char to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

// Reads the next header token, skipping whitespace and '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw IoError(IoErrorCode::truncated, "netpbm header truncated");
  return tok;
}

struct PnmHeader {
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
};

PnmHeader read_header(std::istream& in) {
  PnmHeader hd;
  hd.magic = next_token(in);
  hd.w = std::stoul(next_token(in));
  hd.h = std::stoul(next_token(in));
  hd.maxval = std::stoul(next_token(in));
  if (hd.w == 0 || hd.h == 0 || hd.maxval == 0 || hd.maxval > 255)
    throw IoError(IoErrorCode::bad_header, "unsupported netpbm header");
  return hd;
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t n) {
  std::vector<unsigned char> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw IoError(IoErrorCode::truncated, "netpbm payload truncated");
  return bytes;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Tensor& gray) {
  if (gray.rank() != 2) throw std::invalid_argument("write_pgm: expected H×W");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  out << "P5\n" << gray.dim(1) << " " << gray.dim(0) << "\n255\n";
  for (double v : gray.values()) out.put(static_cast<char>(to_byte(v)));
  if (!out) throw IoError(IoErrorCode::write_failed, "pgm write failed");
}

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3)
    throw std::invalid_argument("write_ppm: expected 3×H×W");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  out << "P6\n" << w << " " << h << "\n255\n";
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.put(static_cast<char>(to_byte(rgb(c, y, x))));
  if (!out) throw IoError(IoErrorCode::write_failed, "ppm write failed");
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  const PnmHeader hd = read_header(in);
  if (hd.magic != "P5") throw IoError(IoErrorCode::bad_magic, "not a P5 file");
  const auto bytes = read_payload(in, hd.w * hd.h);
  Tensor out({hd.h, hd.w});
  const double scale = 1.0 / static_cast<double>(hd.maxval);
  for (std::size_t i = 0; i < bytes.size(); ++i)
    out.values()[i] = static_cast<double>(bytes[i]) * scale;
  return out;
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  const PnmHeader hd = read_header(in);
  if (hd.magic != "P6") throw IoError(IoErrorCode::bad_magic, "not a P6 file");
  const auto bytes = read_payload(in, hd.w * hd.h * 3);
  Tensor out({3, hd.h, hd.w});
  const double scale = 1.0 / static_cast<double>(hd.maxval);
  for (std::size_t y = 0; y < hd.h; ++y)
    for (std::size_t x = 0; x < hd.w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out(c, y, x) =
            static_cast<double>(bytes[(y * hd.w + x) * 3 + c]) * scale;
  return out;
}

}  // namespace sp
