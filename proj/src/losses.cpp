#include "sp/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sp {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

void check_pair(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("loss: pred/gt size mismatch");
  if (pred.empty()) throw std::invalid_argument("loss: empty input");
}

}  // namespace

double focal_loss(double p, int target, double gamma, double alpha) {
  const double pc = clamp_prob(p);
  if (target != 0) return -alpha * std::pow(1.0 - pc, gamma) * std::log(pc);
  return -(1.0 - alpha) * std::pow(pc, gamma) * std::log(1.0 - pc);
}

double focal_loss_grad(double p, int target, double gamma, double alpha) {
  const double pc = clamp_prob(p);
  if (target != 0) {
    const double pow_term = std::pow(1.0 - pc, gamma);
    const double pow_dm1 = gamma != 0.0 ? std::pow(1.0 - pc, gamma - 1.0) : 0.0;
    return alpha * gamma * pow_dm1 * std::log(pc) - alpha * pow_term / pc;
  }
  const double pow_term = std::pow(pc, gamma);
  const double pow_dm1 = gamma != 0.0 ? std::pow(pc, gamma - 1.0) : 0.0;
  return -(1.0 - alpha) * gamma * pow_dm1 * std::log(1.0 - pc) +
         (1.0 - alpha) * pow_term / (1.0 - pc);
}

double dice_loss(std::span<const double> pred, std::span<const double> gt,
                 double eps) {
  check_pair(pred, gt);
  double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * gt[i];
    sum_p += pred[i];
    sum_g += gt[i];
  }
  return 1.0 - (2.0 * inter + eps) / (sum_p + sum_g + eps);
}

double dice_loss(const Tensor& pred, const Tensor& gt, double eps) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("dice_loss: shape mismatch");
  return dice_loss(std::span<const double>(pred.values()),
                   std::span<const double>(gt.values()), eps);
}

void dice_loss_grad(std::span<const double> pred, std::span<const double> gt,
                    double eps, double scale, std::span<double> grad) {
  check_pair(pred, gt);
  double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * gt[i];
    sum_p += pred[i];
    sum_g += gt[i];
  }
  const double num = 2.0 * inter + eps;
  const double den = sum_p + sum_g + eps;
  const double inv_den2 = 1.0 / (den * den);
  for (std::size_t i = 0; i < pred.size(); ++i)
    grad[i] += scale * (num - 2.0 * gt[i] * den) * inv_den2;
}

double bce_loss(std::span<const double> pred, std::span<const double> gt) {
  check_pair(pred, gt);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double pc = clamp_prob(pred[i]);
    sum -= gt[i] * std::log(pc) + (1.0 - gt[i]) * std::log(1.0 - pc);
  }
  return sum / static_cast<double>(pred.size());
}

double bce_loss(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("bce_loss: shape mismatch");
  return bce_loss(std::span<const double>(pred.values()),
                  std::span<const double>(gt.values()));
}

void bce_loss_grad(std::span<const double> pred, std::span<const double> gt,
                   double scale, std::span<double> grad) {
  check_pair(pred, gt);
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double pc = clamp_prob(pred[i]);
    grad[i] += scale * inv_n * (-gt[i] / pc + (1.0 - gt[i]) / (1.0 - pc));
  }
}

CosineGrad cosine_with_grad(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw std::invalid_argument("cosine_with_grad: length mismatch");
  CosineGrad out;
  out.d_u.assign(u.size(), 0.0);
  out.d_v.assign(v.size(), 0.0);

  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu < 1e-12 || nv < 1e-12) return out;  // "no affinity": flat at 0

  out.value = dot / (nu * nv);
  const double inv_nunv = 1.0 / (nu * nv);
  const double inv_uu = 1.0 / uu;
  const double inv_vv = 1.0 / vv;
  for (std::size_t i = 0; i < u.size(); ++i) {
    out.d_u[i] = v[i] * inv_nunv - out.value * u[i] * inv_uu;
    out.d_v[i] = u[i] * inv_nunv - out.value * v[i] * inv_vv;
  }
  return out;
}

}  // namespace sp
