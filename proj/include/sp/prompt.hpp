#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sp/proposal.hpp"
#include "sp/tensor.hpp"

namespace sp {

// L prompt vectors pooled from the head feature map, one per surviving
// proposal (L may be 0). source[l] is the index of the proposal the prompt
// came from.
struct PromptSet {
  Tensor prompts;  // L × C
  std::vector<int> source;

  std::size_t count() const { return source.size(); }
};

// Per-kernel choice of prompt. delta[n] is the prompt index injected into
// kernel n; similarity is the full N×L cosine matrix when the strategy
// computed one (empty for the sequential/random baselines).
struct Assignment {
  std::vector<int> delta;
  Tensor similarity;
  std::string strategy;
};

// Crops the C×H×W head features with each proposal's tightest box and average
// pools to a C-vector. Proposal boxes given at a different H×W are rescaled
// by the extent ratio, outer-bounding the region (floor/ceil).
PromptSet make_prompts(const Tensor& feat_chw,
                       const std::vector<MaskProposal>& proposals,
                       std::size_t proposal_h, std::size_t proposal_w);

// Convenience overload for boxes already in feature coordinates.
PromptSet make_prompts(const Tensor& feat_chw,
                       const std::vector<MaskProposal>& proposals);

// E[n,l] = cosine(kernel n, prompt l). Requires L >= 1 and matching C.
Tensor similarity_matrix(const Tensor& kernels, const Tensor& prompts);

// Argmax over prompts per kernel; ties resolved to the lowest prompt index.
Assignment match_cosine(const Tensor& similarity);

// delta[n] = n mod L (prompt list cyclically expanded over the kernels).
Assignment match_sequential(int n_kernels, int n_prompts);

// delta[n] uniform over [0,L), splitmix64-seeded.
Assignment match_random(int n_kernels, int n_prompts, std::uint64_t rng_seed);

// K0' = K0 + P[delta], rowwise. An empty prompt set returns the kernels
// unchanged. Rejects out-of-range delta entries.
Tensor inject(const Tensor& kernels, const PromptSet& prompts,
              const std::vector<int>& delta);

// Debug dump: N, L, strategy, delta, and the per-kernel similarity maxima.
void write_assignment_json(const std::filesystem::path& path,
                           const Assignment& a, int n_kernels, int n_prompts);

}  // namespace sp
