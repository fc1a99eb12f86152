#pragma once

#include <span>
#include <vector>

#include "sp/tensor.hpp"

namespace sp {

// Loss-term weights and shape parameters. Defaults follow the training recipe
// this head was built around: cls 2, dice 4, ce 1, ker 1, focal gamma 2 /
// alpha 0.25, dice smoothing 1.
struct LossWeights {
  double cls = 2.0;
  double dice = 4.0;
  double ce = 1.0;
  double ker = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_eps = 1.0;
  // Kernel supervision covers update stages 1..T; optionally also the
  // pre-update kernels K^0.
  bool kernel_loss_include_stage0 = false;
};

// Probabilities are clamped to [kProbEps, 1-kProbEps] inside logs and
// divisions so saturated sigmoids cannot produce infinities.
inline constexpr double kProbEps = 1e-12;

// Binary focal loss -alpha_t (1-p_t)^gamma log(p_t) for a single probability.
double focal_loss(double p, int target, double gamma, double alpha);
// d focal / d p, evaluated with the same clamping.
double focal_loss_grad(double p, int target, double gamma, double alpha);

// 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps).
double dice_loss(std::span<const double> pred, std::span<const double> gt, double eps);
double dice_loss(const Tensor& pred, const Tensor& gt, double eps);
// Accumulates scale * d dice / d pred into grad (same length as pred).
void dice_loss_grad(std::span<const double> pred, std::span<const double> gt,
                    double eps, double scale, std::span<double> grad);

// Pixel-mean binary cross entropy.
double bce_loss(std::span<const double> pred, std::span<const double> gt);
double bce_loss(const Tensor& pred, const Tensor& gt);
void bce_loss_grad(std::span<const double> pred, std::span<const double> gt,
                   double scale, std::span<double> grad);

// Cosine similarity with partial derivatives w.r.t. both vectors. Returns
// value 0 and zero gradients under the small-norm rule.
struct CosineGrad {
  double value = 0.0;
  std::vector<double> d_u;
  std::vector<double> d_v;
};
CosineGrad cosine_with_grad(std::span<const double> u, std::span<const double> v);

}  // namespace sp
