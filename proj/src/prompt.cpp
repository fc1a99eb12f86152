#include "sp/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "sp/errors.hpp"
#include "sp/rng.hpp"

namespace sp {

namespace {

// Outer-bounds a source-resolution box in destination coordinates.
Box rescale_box(const Box& box, std::size_t src_h, std::size_t src_w,
                std::size_t dst_h, std::size_t dst_w) {
  if (src_h == dst_h && src_w == dst_w) return box;
  const double ry = static_cast<double>(dst_h) / static_cast<double>(src_h);
  const double rx = static_cast<double>(dst_w) / static_cast<double>(src_w);
  Box out;
  out.x0 = static_cast<int>(std::floor(box.x0 * rx));
  out.y0 = static_cast<int>(std::floor(box.y0 * ry));
  out.x1 = static_cast<int>(std::ceil((box.x1 + 1) * rx)) - 1;
  out.y1 = static_cast<int>(std::ceil((box.y1 + 1) * ry)) - 1;
  out.x1 = std::min(out.x1, static_cast<int>(dst_w) - 1);
  out.y1 = std::min(out.y1, static_cast<int>(dst_h) - 1);
  return out;
}

}  // namespace

PromptSet make_prompts(const Tensor& feat_chw,
                       const std::vector<MaskProposal>& proposals,
                       std::size_t proposal_h, std::size_t proposal_w) {
  if (feat_chw.rank() != 3) throw std::invalid_argument("make_prompts: expected C×H×W");
  const std::size_t channels = feat_chw.dim(0);
  const std::size_t h = feat_chw.dim(1), w = feat_chw.dim(2);

  PromptSet set;
  if (proposals.empty()) {
    set.prompts = Tensor();
    return set;
  }
  set.prompts = Tensor({proposals.size(), channels});
  set.source.reserve(proposals.size());
  for (std::size_t l = 0; l < proposals.size(); ++l) {
    const Box box = rescale_box(proposals[l].box, proposal_h, proposal_w, h, w);
    const auto pooled = avg_pool_region(feat_chw, box);  // rejects bad boxes
    std::copy(pooled.begin(), pooled.end(), set.prompts.row(l).begin());
    set.source.push_back(static_cast<int>(l));
  }
  return set;
}

PromptSet make_prompts(const Tensor& feat_chw,
                       const std::vector<MaskProposal>& proposals) {
  return make_prompts(feat_chw, proposals, feat_chw.dim(1), feat_chw.dim(2));
}

Tensor similarity_matrix(const Tensor& kernels, const Tensor& prompts) {
  if (kernels.rank() != 2 || prompts.rank() != 2)
    throw std::invalid_argument("similarity_matrix: expected N×C and L×C");
  if (kernels.dim(1) != prompts.dim(1))
    throw std::invalid_argument("similarity_matrix: channel mismatch");
  if (prompts.dim(0) < 1)
    throw std::invalid_argument("similarity_matrix: needs at least one prompt");

  Tensor sim({kernels.dim(0), prompts.dim(0)});
  for (std::size_t n = 0; n < kernels.dim(0); ++n)
    for (std::size_t l = 0; l < prompts.dim(0); ++l)
      sim(n, l) = cosine(kernels.row(n), prompts.row(l));
  return sim;
}

Assignment match_cosine(const Tensor& similarity) {
  if (similarity.rank() != 2 || similarity.dim(1) < 1)
    throw std::invalid_argument("match_cosine: expected N×L with L >= 1");
  Assignment a;
  a.strategy = "cosine";
  a.similarity = similarity;
  a.delta.resize(similarity.dim(0));
  for (std::size_t n = 0; n < similarity.dim(0); ++n) {
    std::size_t best = 0;
    for (std::size_t l = 1; l < similarity.dim(1); ++l)
      if (similarity(n, l) > similarity(n, best)) best = l;
    a.delta[n] = static_cast<int>(best);
  }
  return a;
}

Assignment match_sequential(int n_kernels, int n_prompts) {
  if (n_kernels < 1 || n_prompts < 1)
    throw std::invalid_argument("match_sequential: needs kernels and prompts");
  Assignment a;
  a.strategy = "sequential";
  a.delta.resize(static_cast<std::size_t>(n_kernels));
  for (int n = 0; n < n_kernels; ++n) a.delta[n] = n % n_prompts;
  return a;
}

Assignment match_random(int n_kernels, int n_prompts, std::uint64_t rng_seed) {
  if (n_kernels < 1 || n_prompts < 1)
    throw std::invalid_argument("match_random: needs kernels and prompts");
  Assignment a;
  a.strategy = "random";
  a.delta.resize(static_cast<std::size_t>(n_kernels));
  SplitMix64 rng(rng_seed);
  for (int n = 0; n < n_kernels; ++n)
    a.delta[n] = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_prompts)));
  return a;
}

Tensor inject(const Tensor& kernels, const PromptSet& prompts,
              const std::vector<int>& delta) {
  if (kernels.rank() != 2) throw std::invalid_argument("inject: expected N×C kernels");
  if (prompts.count() == 0) return kernels;  // no-prompt images pass through
  if (delta.size() != kernels.dim(0))
    throw std::invalid_argument("inject: delta length must equal kernel count");
  if (prompts.prompts.dim(1) != kernels.dim(1))
    throw std::invalid_argument("inject: channel mismatch");

  Tensor out = kernels;
  for (std::size_t n = 0; n < kernels.dim(0); ++n) {
    const int l = delta[n];
    if (l < 0 || static_cast<std::size_t>(l) >= prompts.count())
      throw std::invalid_argument("inject: delta index out of range");
    auto dst = out.row(n);
    const auto src = prompts.prompts.row(static_cast<std::size_t>(l));
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
  }
  return out;
}

void write_assignment_json(const std::filesystem::path& path, const Assignment& a,
                           int n_kernels, int n_prompts) {
  nlohmann::json doc;
  doc["n_kernels"] = n_kernels;
  doc["n_prompts"] = n_prompts;
  doc["strategy"] = a.strategy;
  doc["delta"] = a.delta;
  if (a.similarity.size() > 0) {
    std::vector<double> row_max(a.similarity.dim(0));
    for (std::size_t n = 0; n < a.similarity.dim(0); ++n) {
      double best = a.similarity(n, 0);
      for (std::size_t l = 1; l < a.similarity.dim(1); ++l)
        best = std::max(best, a.similarity(n, l));
      row_max[n] = best;
    }
    doc["row_max"] = row_max;
  } else {
    doc["row_max"] = nullptr;
  }
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  out << doc.dump(2) << "\n";
}

}  // namespace sp
