#include "sp/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sp {

namespace {

std::size_t checked_volume(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, ElemType et)
    : shape_(std::move(shape)), data_(checked_volume(shape_), 0.0), elem_type_(et) {}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         ElemType et) {
  Tensor t;
  const std::size_t n = checked_volume(shape);
  if (n != data.size())
    throw std::invalid_argument("tensor data length does not match shape");
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  t.elem_type_ = et;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::vector<double> avg_pool_region(const Tensor& chw, const Box& box) {
  if (chw.rank() != 3) throw std::invalid_argument("avg_pool_region: expected C×H×W");
  const std::size_t channels = chw.dim(0);
  const int h = static_cast<int>(chw.dim(1));
  const int w = static_cast<int>(chw.dim(2));
  if (!box.valid() || box.x0 < 0 || box.y0 < 0 || box.x1 >= w || box.y1 >= h)
    throw std::invalid_argument("avg_pool_region: box empty or out of range");

  std::vector<double> out(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (int y = box.y0; y <= box.y1; ++y)
      for (int x = box.x0; x <= box.x1; ++x) sum += chw(c, y, x);
    out[c] = sum / static_cast<double>(box.area());
  }
  return out;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine: length mismatch");
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu < 1e-12 || nv < 1e-12) return 0.0;
  return dot / (nu * nv);
}

Tensor linear_normalize(const Tensor& t) {
  Tensor out = t;
  if (t.size() == 0) return out;
  double lo = t.data()[0], hi = t.data()[0];
  for (double v : t.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) {
    for (double& v : out.values()) v = 0.0;
    return out;
  }
  const double scale = 1.0 / (hi - lo);
  for (double& v : out.values()) v = (v - lo) * scale;
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor sigmoid(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.values()) v = sigmoid(v);
  return out;
}

Tensor dot_conv(std::span<const double> weights, const Tensor& chw) {
  if (chw.rank() != 3) throw std::invalid_argument("dot_conv: expected C×H×W");
  const std::size_t channels = chw.dim(0);
  if (weights.size() != channels)
    throw std::invalid_argument("dot_conv: channel count mismatch");
  const std::size_t hw = chw.dim(1) * chw.dim(2);

  Tensor out({chw.dim(1), chw.dim(2)});
  double* o = out.data();
  const double* f = chw.data();
  for (std::size_t c = 0; c < channels; ++c) {
    const double wc = weights[c];
    const double* plane = f + c * hw;
    for (std::size_t i = 0; i < hw; ++i) o[i] += wc * plane[i];
  }
  return out;
}

}  // namespace sp
