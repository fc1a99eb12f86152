#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sp {

// On-disk element type. Computation is always double; float32 data is widened
// on load and narrowed on store.
enum class ElemType : std::uint8_t { f32 = 0, f64 = 1 };

// Axis-aligned pixel rectangle with inclusive corners: covers columns
// [x0, x1] and rows [y0, y1]. Default-constructed boxes are invalid (empty).
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = -1;
  int y1 = -1;

  bool valid() const { return x1 >= x0 && y1 >= y0; }
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  long long area() const {
    return valid() ? static_cast<long long>(width()) * height() : 0;
  }
  bool operator==(const Box&) const = default;
};

// Dense row-major numeric array. Values live as double regardless of the
// declared elem_type; the elem_type only selects the serialized payload.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, ElemType et = ElemType::f64);
  static Tensor from_data(std::vector<std::size_t> shape,
                          std::vector<double> data,
                          ElemType et = ElemType::f64);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  bool empty() const { return data_.empty(); }

  ElemType elem_type() const { return elem_type_; }
  void set_elem_type(ElemType et) { elem_type_ = et; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator()(std::size_t i) {
    assert(rank() == 1);
    return data_[i];
  }
  double operator()(std::size_t i) const {
    assert(rank() == 1);
    return data_[i];
  }
  double& operator()(std::size_t i, std::size_t j) {
    assert(rank() == 2);
    return data_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    assert(rank() == 2);
    return data_[i * shape_[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    assert(rank() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    assert(rank() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Row i of a rank-2 tensor as a contiguous view.
  std::span<const double> row(std::size_t i) const {
    assert(rank() == 2);
    return {data_.data() + i * shape_[1], shape_[1]};
  }
  std::span<double> row(std::size_t i) {
    assert(rank() == 2);
    return {data_.data() + i * shape_[1], shape_[1]};
  }
  // Plane i of a rank-3 tensor (e.g. one kernel's H*W mask) as a flat view.
  std::span<const double> plane(std::size_t i) const {
    assert(rank() == 3);
    const std::size_t hw = shape_[1] * shape_[2];
    return {data_.data() + i * hw, hw};
  }
  std::span<double> plane(std::size_t i) {
    assert(rank() == 3);
    const std::size_t hw = shape_[1] * shape_[2];
    return {data_.data() + i * hw, hw};
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  ElemType elem_type_ = ElemType::f64;
};

// Per-channel mean of a C×H×W map over an inclusive pixel rect.
// Rejects boxes that are empty or fall outside [0,W)×[0,H).
std::vector<double> avg_pool_region(const Tensor& chw, const Box& box);

// u·v / (|u||v|). Returns 0 when either norm is below 1e-12 ("no affinity"),
// which keeps downstream argmax matching NaN-free. Rejects length mismatch.
double cosine(std::span<const double> u, std::span<const double> v);

// (x - min) / (max - min), mapping the tensor onto [0,1]. A constant input
// maps to all zeros (no salient region).
Tensor linear_normalize(const Tensor& t);

// Elementwise logistic 1 / (1 + e^-x).
Tensor sigmoid(const Tensor& t);
double sigmoid(double x);

// 1×1 convolution: out(h,w) = sum_c weights[c] * feat(c,h,w).
// Rejects a channel-count mismatch.
Tensor dot_conv(std::span<const double> weights, const Tensor& chw);

}  // namespace sp
