#include "sp/head.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "sp/rng.hpp"

namespace sp {

namespace {

void fill_uniform(Tensor& t, SplitMix64& rng, double bound) {
  for (double& v : t.values()) v = rng.next_in(-bound, bound);
}

std::uint64_t fnv1a_doubles(std::uint64_t hash, const Tensor& t) {
  for (double v : t.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      hash ^= (bits >> (8 * i)) & 0xffu;
      hash *= 0x100000001B3ull;
    }
  }
  return hash;
}

// out[c] += sum_hw weights_hw[hw] * feat(c, hw)
void accumulate_feature_sum(const Tensor& feat_chw, std::span<const double> weights_hw,
                            std::span<double> out) {
  const std::size_t channels = feat_chw.dim(0);
  const std::size_t hw = feat_chw.dim(1) * feat_chw.dim(2);
  const double* f = feat_chw.data();
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = f + c * hw;
    double sum = 0.0;
    for (std::size_t i = 0; i < hw; ++i) sum += weights_hw[i] * plane[i];
    out[c] += sum;
  }
}

// out[i] += sum_c weights_c[c] * feat(c, i)
void accumulate_dot_map(const Tensor& feat_chw, std::span<const double> weights_c,
                        std::span<double> out) {
  const std::size_t channels = feat_chw.dim(0);
  const std::size_t hw = feat_chw.dim(1) * feat_chw.dim(2);
  const double* f = feat_chw.data();
  for (std::size_t c = 0; c < channels; ++c) {
    const double wc = weights_c[c];
    const double* plane = f + c * hw;
    for (std::size_t i = 0; i < hw; ++i) out[i] += wc * plane[i];
  }
}

std::vector<int> matched_proposal_per_kernel(std::size_t n_kernels,
                                             const MatchResult& match) {
  std::vector<int> matched(n_kernels, -1);
  for (const auto& [kn, pl] : match.pairs) {
    if (kn < 0 || static_cast<std::size_t>(kn) >= n_kernels)
      throw std::invalid_argument("match: kernel index out of range");
    matched[static_cast<std::size_t>(kn)] = pl;
  }
  return matched;
}

void check_trace(const HeadParams& params, const ForwardTrace& trace) {
  if (trace.params_digest != params.digest())
    throw std::invalid_argument("trace is stale: parameters changed since forward()");
  if (trace.stages < 1 || trace.masks.empty() || trace.kernels.empty())
    throw std::invalid_argument("trace is empty");
}

void check_proposal_masks(const ForwardTrace& trace,
                          const std::vector<MaskProposal>& proposals) {
  const std::size_t h = trace.feat.dim(1), w = trace.feat.dim(2);
  for (const auto& p : proposals)
    if (p.mask.rank() != 2 || p.mask.dim(0) != h || p.mask.dim(1) != w)
      throw std::invalid_argument("proposal mask extent does not match features");
}

}  // namespace

std::uint64_t HeadParams::digest() const {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  hash = fnv1a_doubles(hash, kernels0);
  hash = fnv1a_doubles(hash, update_weight);
  hash = fnv1a_doubles(hash, update_bias);
  hash = fnv1a_doubles(hash, cls_weight);
  Tensor bias_wrap = Tensor::from_data({1}, {cls_bias});
  hash = fnv1a_doubles(hash, bias_wrap);
  hash = fnv1a_doubles(hash, seed_proj_weight);
  hash = fnv1a_doubles(hash, seed_proj_bias);
  return hash;
}

HeadParams init_head_params(std::size_t n_kernels, std::size_t channels,
                            std::size_t seed_dim, std::uint64_t seed) {
  if (n_kernels == 0 || channels == 0 || seed_dim == 0)
    throw std::invalid_argument("init_head_params: dimensions must be positive");
  SplitMix64 rng(seed);
  const double bound_c = 1.0 / std::sqrt(static_cast<double>(channels));
  const double bound_d = 1.0 / std::sqrt(static_cast<double>(seed_dim));

  HeadParams p;
  p.kernels0 = Tensor({n_kernels, channels});
  fill_uniform(p.kernels0, rng, bound_c);
  p.update_weight = Tensor({channels, channels});
  fill_uniform(p.update_weight, rng, bound_c);
  p.update_bias = Tensor({channels});
  fill_uniform(p.update_bias, rng, bound_c);
  p.cls_weight = Tensor({channels});
  fill_uniform(p.cls_weight, rng, bound_c);
  p.cls_bias = rng.next_in(-bound_c, bound_c);
  p.seed_proj_weight = Tensor({channels, seed_dim});
  fill_uniform(p.seed_proj_weight, rng, bound_d);
  p.seed_proj_bias = Tensor({channels});
  fill_uniform(p.seed_proj_bias, rng, bound_d);
  return p;
}

ForwardTrace forward(const HeadParams& params, const Tensor& injected_kernels,
                     const Tensor& feat_chw, int stages) {
  if (stages < 1) throw std::invalid_argument("forward: stages must be >= 1");
  if (feat_chw.rank() != 3) throw std::invalid_argument("forward: expected C×H×W");
  if (injected_kernels.rank() != 2 ||
      injected_kernels.dim(0) != params.n_kernels() ||
      injected_kernels.dim(1) != params.channels())
    throw std::invalid_argument("forward: kernel shape mismatch");
  if (feat_chw.dim(0) != params.channels())
    throw std::invalid_argument("forward: feature channel mismatch");

  const std::size_t n = params.n_kernels();
  const std::size_t channels = params.channels();
  const std::size_t h = feat_chw.dim(1), w = feat_chw.dim(2);

  ForwardTrace trace;
  trace.stages = stages;
  trace.feat = feat_chw;
  trace.kernels.reserve(static_cast<std::size_t>(stages) + 1);
  trace.kernels.push_back(injected_kernels);
  trace.masks.reserve(static_cast<std::size_t>(stages));
  trace.pooled.reserve(static_cast<std::size_t>(stages));
  trace.mask_sums = Tensor({static_cast<std::size_t>(stages), n});

  for (int i = 0; i < stages; ++i) {
    const Tensor& cur = trace.kernels.back();
    Tensor mask({n, h, w});
    Tensor pooled({n, channels});
    Tensor next({n, channels});
    for (std::size_t kn = 0; kn < n; ++kn) {
      auto m_row = mask.plane(kn);
      std::fill(m_row.begin(), m_row.end(), 0.0);
      accumulate_dot_map(feat_chw, cur.row(kn), m_row);
      double sum = 0.0;
      for (double& v : m_row) {
        v = sigmoid(v);
        sum += v;
      }
      trace.mask_sums(static_cast<std::size_t>(i), kn) = sum;

      auto g_row = pooled.row(kn);
      std::fill(g_row.begin(), g_row.end(), 0.0);
      accumulate_feature_sum(feat_chw, m_row, g_row);
      const double inv = 1.0 / (sum + kPoolEps);
      for (double& v : g_row) v *= inv;

      auto next_row = next.row(kn);
      const auto cur_row = cur.row(kn);
      for (std::size_t a = 0; a < channels; ++a) {
        double acc = params.update_bias(a);
        const auto w_row = params.update_weight.row(a);
        for (std::size_t b = 0; b < channels; ++b) acc += w_row[b] * g_row[b];
        next_row[a] = cur_row[a] + acc;
      }
    }
    trace.masks.push_back(std::move(mask));
    trace.pooled.push_back(std::move(pooled));
    trace.kernels.push_back(std::move(next));
  }

  trace.fg_prob.resize(n);
  const Tensor& final_k = trace.kernels.back();
  for (std::size_t kn = 0; kn < n; ++kn) {
    double z = params.cls_bias;
    const auto k_row = final_k.row(kn);
    for (std::size_t c = 0; c < channels; ++c) z += params.cls_weight(c) * k_row[c];
    trace.fg_prob[kn] = sigmoid(z);
  }
  trace.params_digest = params.digest();
  return trace;
}

Tensor build_cost(const ForwardTrace& trace,
                  const std::vector<MaskProposal>& proposals,
                  const LossWeights& weights) {
  if (proposals.empty()) throw std::invalid_argument("build_cost: no proposals");
  check_proposal_masks(trace, proposals);
  const Tensor& masks = trace.final_masks();
  const std::size_t n = masks.dim(0);

  Tensor cost({n, proposals.size()});
  for (std::size_t kn = 0; kn < n; ++kn) {
    const auto pred = masks.plane(kn);
    for (std::size_t l = 0; l < proposals.size(); ++l) {
      const std::span<const double> gt(proposals[l].mask.values());
      cost(kn, l) = weights.cls * (-trace.fg_prob[kn]) +
                    weights.dice * dice_loss(pred, gt, weights.dice_eps) +
                    weights.ce * bce_loss(pred, gt);
    }
  }
  return cost;
}

MatchResult match_for_loss(const ForwardTrace& trace,
                           const std::vector<MaskProposal>& proposals,
                           const LossWeights& weights) {
  return match_hungarian(build_cost(trace, proposals, weights));
}

double kernel_loss(const HeadParams& params, const ForwardTrace& trace,
                   const std::vector<std::pair<int, int>>& pairs,
                   const Tensor& seed_feats, bool include_stage0) {
  if (pairs.empty()) return 0.0;
  const std::size_t channels = params.channels();
  const std::size_t d = params.seed_dim();
  if (seed_feats.rank() != 2 || seed_feats.dim(1) != d)
    throw std::invalid_argument("kernel_loss: seed feature dim mismatch");

  const int first_stage = include_stage0 ? 0 : 1;
  double sum = 0.0;
  std::vector<double> projected(channels);
  for (const auto& [kn, pl] : pairs) {
    const auto seed = seed_feats.row(static_cast<std::size_t>(pl));
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = params.seed_proj_bias(c);
      const auto w_row = params.seed_proj_weight.row(c);
      for (std::size_t j = 0; j < d; ++j) acc += w_row[j] * seed[j];
      projected[c] = acc;
    }
    for (int i = first_stage; i <= trace.stages; ++i)
      sum += 1.0 - cosine(projected,
                          trace.kernels[static_cast<std::size_t>(i)].row(
                              static_cast<std::size_t>(kn)));
  }
  return sum / static_cast<double>(pairs.size());
}

LossBreakdown loss_given_match(const HeadParams& params, const ForwardTrace& trace,
                               const std::vector<MaskProposal>& proposals,
                               const Tensor& seed_feats, const LossWeights& weights,
                               const MatchResult& match) {
  check_trace(params, trace);
  check_proposal_masks(trace, proposals);
  const std::size_t n = params.n_kernels();
  const auto matched = matched_proposal_per_kernel(n, match);

  LossBreakdown out;
  for (std::size_t kn = 0; kn < n; ++kn)
    out.cls += focal_loss(trace.fg_prob[kn], matched[kn] >= 0 ? 1 : 0,
                          weights.focal_gamma, weights.focal_alpha);
  out.cls /= static_cast<double>(n);

  const std::size_t m = match.pairs.size();
  if (m > 0) {
    const Tensor& masks = trace.final_masks();
    for (const auto& [kn, pl] : match.pairs) {
      const auto pred = masks.plane(static_cast<std::size_t>(kn));
      const std::span<const double> gt(
          proposals[static_cast<std::size_t>(pl)].mask.values());
      out.dice += dice_loss(pred, gt, weights.dice_eps);
      out.ce += bce_loss(pred, gt);
    }
    out.dice /= static_cast<double>(m);
    out.ce /= static_cast<double>(m);
    if (weights.ker != 0.0)
      out.ker = kernel_loss(params, trace, match.pairs, seed_feats,
                            weights.kernel_loss_include_stage0);
  }

  out.total = weights.cls * out.cls + weights.dice * out.dice +
              weights.ce * out.ce + weights.ker * out.ker;
  return out;
}

LossBreakdown total_loss(const HeadParams& params, const ForwardTrace& trace,
                         const std::vector<MaskProposal>& proposals,
                         const Tensor& seed_feats, const LossWeights& weights) {
  if (proposals.empty())
    return loss_given_match(params, trace, proposals, seed_feats, weights,
                            MatchResult{});
  return loss_given_match(params, trace, proposals, seed_feats, weights,
                          match_for_loss(trace, proposals, weights));
}

HeadGrads zero_grads(const HeadParams& params) {
  HeadGrads g;
  g.kernels0 = Tensor(params.kernels0.shape());
  g.update_weight = Tensor(params.update_weight.shape());
  g.update_bias = Tensor(params.update_bias.shape());
  g.cls_weight = Tensor(params.cls_weight.shape());
  g.cls_bias = 0.0;
  g.seed_proj_weight = Tensor(params.seed_proj_weight.shape());
  g.seed_proj_bias = Tensor(params.seed_proj_bias.shape());
  return g;
}

HeadGrads backward_given_match(const HeadParams& params, const ForwardTrace& trace,
                               const std::vector<MaskProposal>& proposals,
                               const Tensor& seed_feats, const LossWeights& weights,
                               const MatchResult& match) {
  check_trace(params, trace);
  check_proposal_masks(trace, proposals);

  const std::size_t n = params.n_kernels();
  const std::size_t channels = params.channels();
  const std::size_t hw = trace.feat.dim(1) * trace.feat.dim(2);
  const int stages = trace.stages;
  const std::size_t m = match.pairs.size();
  const auto matched = matched_proposal_per_kernel(n, match);

  const double w_cls = weights.cls / static_cast<double>(n);
  const double w_dice = m > 0 ? weights.dice / static_cast<double>(m) : 0.0;
  const double w_ce = m > 0 ? weights.ce / static_cast<double>(m) : 0.0;
  const double w_ker = m > 0 ? weights.ker / static_cast<double>(m) : 0.0;

  HeadGrads grads = zero_grads(params);

  // Adjoint of the final kernels K^T: classification path.
  Tensor kappa({n, channels});
  const Tensor& final_k = trace.final_kernels();
  for (std::size_t kn = 0; kn < n; ++kn) {
    const double p = trace.fg_prob[kn];
    const double dfdp = focal_loss_grad(p, matched[kn] >= 0 ? 1 : 0,
                                        weights.focal_gamma, weights.focal_alpha);
    const double dz = w_cls * dfdp * p * (1.0 - p);
    grads.cls_bias += dz;
    const auto k_row = final_k.row(kn);
    auto kap_row = kappa.row(kn);
    for (std::size_t c = 0; c < channels; ++c) {
      grads.cls_weight(c) += dz * k_row[c];
      kap_row[c] += dz * params.cls_weight(c);
    }
  }

  // Kernel-supervision path: direct adjoints of each stage's kernels plus the
  // seed-projection gradients.
  std::vector<Tensor> direct;
  if (w_ker != 0.0) {
    if (seed_feats.rank() != 2 || seed_feats.dim(1) != params.seed_dim() ||
        seed_feats.dim(0) < proposals.size())
      throw std::invalid_argument("backward: seed feature shape mismatch");
    direct.assign(static_cast<std::size_t>(stages) + 1, Tensor({n, channels}));
    const int first_stage = weights.kernel_loss_include_stage0 ? 0 : 1;
    std::vector<double> projected(channels), d_proj(channels);
    for (const auto& [kn, pl] : match.pairs) {
      const auto seed = seed_feats.row(static_cast<std::size_t>(pl));
      for (std::size_t c = 0; c < channels; ++c) {
        double acc = params.seed_proj_bias(c);
        const auto w_row = params.seed_proj_weight.row(c);
        for (std::size_t j = 0; j < seed.size(); ++j) acc += w_row[j] * seed[j];
        projected[c] = acc;
      }
      std::fill(d_proj.begin(), d_proj.end(), 0.0);
      for (int i = first_stage; i <= stages; ++i) {
        const auto k_row = trace.kernels[static_cast<std::size_t>(i)].row(
            static_cast<std::size_t>(kn));
        const CosineGrad cg = cosine_with_grad(projected, k_row);
        auto dir_row = direct[static_cast<std::size_t>(i)].row(
            static_cast<std::size_t>(kn));
        for (std::size_t c = 0; c < channels; ++c) {
          dir_row[c] -= w_ker * cg.d_v[c];
          d_proj[c] -= w_ker * cg.d_u[c];
        }
      }
      for (std::size_t c = 0; c < channels; ++c) {
        grads.seed_proj_bias(c) += d_proj[c];
        auto w_row = grads.seed_proj_weight.row(c);
        for (std::size_t j = 0; j < seed.size(); ++j) w_row[j] += d_proj[c] * seed[j];
      }
    }
    for (std::size_t c = 0; c < kappa.size(); ++c)
      kappa.values()[c] += direct.back().values()[c];
  }

  // Reverse pass over the update recurrence K^{i+1} = K^i + Wu g^i + bu.
  std::vector<double> beta(channels), dq(channels), dm(hw), da(hw);
  for (int i = stages - 1; i >= 0; --i) {
    const Tensor& g_i = trace.pooled[static_cast<std::size_t>(i)];
    const Tensor& m_i = trace.masks[static_cast<std::size_t>(i)];
    Tensor kappa_prev = kappa;  // identity term of the recurrence

    for (std::size_t kn = 0; kn < n; ++kn) {
      const auto kap_row = kappa.row(kn);
      const auto g_row = g_i.row(kn);

      // Update parameters see the adjoint of K^{i+1} directly.
      for (std::size_t a = 0; a < channels; ++a) {
        grads.update_bias(a) += kap_row[a];
        auto gw_row = grads.update_weight.row(a);
        for (std::size_t b = 0; b < channels; ++b) gw_row[b] += kap_row[a] * g_row[b];
      }

      // beta = Wu^T kappa: adjoint of g^i.
      std::fill(beta.begin(), beta.end(), 0.0);
      for (std::size_t a = 0; a < channels; ++a) {
        const double ka = kap_row[a];
        if (ka == 0.0) continue;
        const auto w_row = params.update_weight.row(a);
        for (std::size_t b = 0; b < channels; ++b) beta[b] += ka * w_row[b];
      }

      const double denom =
          trace.mask_sums(static_cast<std::size_t>(i), kn) + kPoolEps;
      double beta_dot_g = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        dq[c] = beta[c] / denom;
        beta_dot_g += beta[c] * g_row[c];
      }
      const double ds = -beta_dot_g / denom;

      // dM = dq·F(:,hw) + ds, plus the segmentation losses at the last stage.
      std::fill(dm.begin(), dm.end(), ds);
      accumulate_dot_map(trace.feat, dq, dm);
      if (i == stages - 1 && matched[kn] >= 0) {
        const auto pred = m_i.plane(kn);
        const std::span<const double> gt(
            proposals[static_cast<std::size_t>(matched[kn])].mask.values());
        if (w_dice != 0.0) dice_loss_grad(pred, gt, weights.dice_eps, w_dice, dm);
        if (w_ce != 0.0) bce_loss_grad(pred, gt, w_ce, dm);
      }

      // Through the sigmoid, then the 1×1 conv back into the kernels.
      const auto m_row = m_i.plane(kn);
      for (std::size_t j = 0; j < hw; ++j) da[j] = dm[j] * m_row[j] * (1.0 - m_row[j]);
      accumulate_feature_sum(trace.feat, da, kappa_prev.row(kn));
    }

    if (w_ker != 0.0 && (i > 0 || weights.kernel_loss_include_stage0)) {
      const Tensor& dir = direct[static_cast<std::size_t>(i)];
      for (std::size_t c = 0; c < kappa_prev.size(); ++c)
        kappa_prev.values()[c] += dir.values()[c];
    }
    kappa = std::move(kappa_prev);
  }

  grads.kernels0 = std::move(kappa);
  return grads;
}

HeadGrads backward(const HeadParams& params, const ForwardTrace& trace,
                   const std::vector<MaskProposal>& proposals,
                   const Tensor& seed_feats, const LossWeights& weights) {
  if (proposals.empty())
    return backward_given_match(params, trace, proposals, seed_feats, weights,
                                MatchResult{});
  return backward_given_match(params, trace, proposals, seed_feats, weights,
                              match_for_loss(trace, proposals, weights));
}

void sgd_update(std::span<double> theta, std::span<double> velocity,
                std::span<const double> grad, double lr, double momentum) {
  if (theta.size() != velocity.size() || theta.size() != grad.size())
    throw std::invalid_argument("sgd_update: size mismatch");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i];
    theta[i] -= lr * velocity[i];
  }
}

void sgd_step(HeadParams& params, HeadGrads& velocity, const HeadGrads& grads,
              double lr, double momentum) {
  const auto apply = [&](Tensor& theta, Tensor& vel, const Tensor& g) {
    sgd_update(theta.values(), vel.values(), g.values(), lr, momentum);
  };
  apply(params.kernels0, velocity.kernels0, grads.kernels0);
  apply(params.update_weight, velocity.update_weight, grads.update_weight);
  apply(params.update_bias, velocity.update_bias, grads.update_bias);
  apply(params.cls_weight, velocity.cls_weight, grads.cls_weight);
  velocity.cls_bias = momentum * velocity.cls_bias + grads.cls_bias;
  params.cls_bias -= lr * velocity.cls_bias;
  apply(params.seed_proj_weight, velocity.seed_proj_weight, grads.seed_proj_weight);
  apply(params.seed_proj_bias, velocity.seed_proj_bias, grads.seed_proj_bias);
}

}  // namespace sp
