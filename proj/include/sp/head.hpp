#pragma once

#include <cstdint>
#include <vector>

#include "sp/hungarian.hpp"
#include "sp/losses.hpp"
#include "sp/proposal.hpp"
#include "sp/tensor.hpp"

namespace sp {

// Learnable state of the kernel-mask head:
//   kernels0          N×C   initial kernels K^0
//   update_weight/bias C×C,C residual kernel update from mask-pooled features
//   cls_weight/bias   C,1   foreground logit on the final kernels
//   seed_proj_*       C×D,C projection of seed features for kernel supervision
struct HeadParams {
  Tensor kernels0;
  Tensor update_weight;
  Tensor update_bias;
  Tensor cls_weight;
  double cls_bias = 0.0;
  Tensor seed_proj_weight;
  Tensor seed_proj_bias;

  std::size_t n_kernels() const { return kernels0.dim(0); }
  std::size_t channels() const { return kernels0.dim(1); }
  std::size_t seed_dim() const { return seed_proj_weight.dim(1); }

  // FNV-1a over all parameter bytes; forward stamps it into the trace and
  // backward refuses traces produced by different parameters.
  std::uint64_t digest() const;
};

// Seeded init: every weight uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)).
HeadParams init_head_params(std::size_t n_kernels, std::size_t channels,
                            std::size_t seed_dim, std::uint64_t seed);

// Everything forward() computed, cached for the analytic backward pass.
// Stage i produces mask M^i = sigmoid(K^i * F) and the updated kernels
// K^{i+1} = K^i + Wu * g^i + bu with g^i the M^i-weighted mean feature.
struct ForwardTrace {
  int stages = 0;                // T
  Tensor feat;                   // C×H×W
  std::vector<Tensor> kernels;   // K^0..K^T, each N×C
  std::vector<Tensor> masks;     // M^0..M^{T-1}, each N×H×W
  std::vector<Tensor> pooled;    // g^0..g^{T-1}, each N×C
  Tensor mask_sums;              // T×N, sum over pixels of M^i_n
  std::vector<double> fg_prob;   // p_n = sigmoid(cls(K^T_n))
  std::uint64_t params_digest = 0;

  const Tensor& final_masks() const { return masks.back(); }
  const Tensor& final_kernels() const { return kernels.back(); }
};

inline constexpr double kPoolEps = 1e-6;  // denominator guard in g^i

ForwardTrace forward(const HeadParams& params, const Tensor& injected_kernels,
                     const Tensor& feat_chw, int stages);

// Matching cost: C[n,l] = cls_w * (-p_n) + dice_w * dice(M_n, Z_l)
//              + ce_w * bce(M_n, Z_l), on final-stage masks.
Tensor build_cost(const ForwardTrace& trace,
                  const std::vector<MaskProposal>& proposals,
                  const LossWeights& weights);

// build_cost + Hungarian. Requires at least one proposal.
MatchResult match_for_loss(const ForwardTrace& trace,
                           const std::vector<MaskProposal>& proposals,
                           const LossWeights& weights);

// Kernel supervision: mean over matched pairs of
// sum_{i in stages} (1 - cos(Ws*S_l + bs, K^i_{n_l})).
double kernel_loss(const HeadParams& params, const ForwardTrace& trace,
                   const std::vector<std::pair<int, int>>& pairs,
                   const Tensor& seed_feats, bool include_stage0);

struct LossBreakdown {
  double cls = 0.0;
  double dice = 0.0;
  double ce = 0.0;
  double ker = 0.0;
  double total = 0.0;
};

// Matched kernels contribute focal(target=1) + dice + bce + kernel terms;
// unmatched kernels contribute focal(target=0). Each term is the mean over
// its contributing items; the total applies the lambda weights.
LossBreakdown loss_given_match(const HeadParams& params, const ForwardTrace& trace,
                               const std::vector<MaskProposal>& proposals,
                               const Tensor& seed_feats, const LossWeights& weights,
                               const MatchResult& match);

// Convenience: matches internally (empty proposal lists yield the
// background-only classification loss).
LossBreakdown total_loss(const HeadParams& params, const ForwardTrace& trace,
                         const std::vector<MaskProposal>& proposals,
                         const Tensor& seed_feats, const LossWeights& weights);

struct HeadGrads {
  Tensor kernels0;
  Tensor update_weight;
  Tensor update_bias;
  Tensor cls_weight;
  double cls_bias = 0.0;
  Tensor seed_proj_weight;
  Tensor seed_proj_bias;
};

HeadGrads zero_grads(const HeadParams& params);

// Exact gradients of the total loss w.r.t. every HeadParams field, with the
// match held fixed. The gradient w.r.t. kernels0 equals the gradient w.r.t.
// the injected kernels (injection is an additive constant).
HeadGrads backward_given_match(const HeadParams& params, const ForwardTrace& trace,
                               const std::vector<MaskProposal>& proposals,
                               const Tensor& seed_feats, const LossWeights& weights,
                               const MatchResult& match);

HeadGrads backward(const HeadParams& params, const ForwardTrace& trace,
                   const std::vector<MaskProposal>& proposals,
                   const Tensor& seed_feats, const LossWeights& weights);

// Momentum SGD on a flat parameter view: v <- mu*v + g; theta <- theta - lr*v.
void sgd_update(std::span<double> theta, std::span<double> velocity,
                std::span<const double> grad, double lr, double momentum);

// Applies sgd_update to every field; velocity must come from zero_grads() on
// the same params initially.
void sgd_step(HeadParams& params, HeadGrads& velocity, const HeadGrads& grads,
              double lr, double momentum);

}  // namespace sp
