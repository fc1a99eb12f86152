#include "sp/mask_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sp {

std::optional<Box> mask_to_box(const Tensor& mask) {
  if (mask.rank() != 2) throw std::invalid_argument("mask_to_box: expected H×W");
  const int h = static_cast<int>(mask.dim(0));
  const int w = static_cast<int>(mask.dim(1));
  Box box{w, h, -1, -1};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask(y, x) != 0.0) {
        box.x0 = std::min(box.x0, x);
        box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x);
        box.y1 = std::max(box.y1, y);
      }
  if (!box.valid()) return std::nullopt;
  return box;
}

double box_iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) return 0.0;
  const int ix0 = std::max(a.x0, b.x0);
  const int iy0 = std::max(a.y0, b.y0);
  const int ix1 = std::min(a.x1, b.x1);
  const int iy1 = std::min(a.y1, b.y1);
  if (ix1 < ix0 || iy1 < iy0) return 0.0;
  const long long inter =
      static_cast<long long>(ix1 - ix0 + 1) * (iy1 - iy0 + 1);
  const long long uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double mask_iou(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mask_iou: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a[i] != 0.0, pb = b[i] != 0.0;
    inter += pa && pb;
    uni += pa || pb;
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double mask_iou(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mask_iou: shape mismatch");
  return mask_iou(std::span<const double>(a.values()),
                  std::span<const double>(b.values()));
}

std::size_t mask_area(const Tensor& mask) {
  std::size_t n = 0;
  for (double v : mask.values()) n += v != 0.0;
  return n;
}

std::vector<std::uint32_t> rle_encode(const Tensor& mask) {
  std::vector<std::uint32_t> runs;
  bool current = false;  // runs start with a 0-run
  std::uint32_t len = 0;
  for (double v : mask.values()) {
    const bool bit = v != 0.0;
    if (bit == current) {
      ++len;
    } else {
      runs.push_back(len);
      current = bit;
      len = 1;
    }
  }
  runs.push_back(len);
  return runs;
}

Tensor rle_decode(const std::vector<std::uint32_t>& runs, std::size_t h,
                  std::size_t w) {
  Tensor mask({h, w});
  std::size_t pos = 0;
  bool current = false;
  for (std::uint32_t run : runs) {
    if (pos + run > h * w) throw std::invalid_argument("rle_decode: runs exceed H*W");
    if (current)
      for (std::uint32_t i = 0; i < run; ++i) mask.values()[pos + i] = 1.0;
    pos += run;
    current = !current;
  }
  if (pos != h * w) throw std::invalid_argument("rle_decode: runs do not cover H*W");
  return mask;
}

Tensor resize_bilinear(const Tensor& src, std::size_t out_h, std::size_t out_w) {
  if (src.rank() != 2) throw std::invalid_argument("resize_bilinear: expected H×W");
  if (out_h == 0 || out_w == 0)
    throw std::invalid_argument("resize_bilinear: empty output");
  const std::size_t h = src.dim(0), w = src.dim(1);
  Tensor out({out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = src(y0, x0) * (1.0 - wx) + src(y0, x1) * wx;
      const double bot = src(y1, x0) * (1.0 - wx) + src(y1, x1) * wx;
      out(oy, ox) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

}  // namespace sp
