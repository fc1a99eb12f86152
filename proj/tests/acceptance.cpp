// End-to-end acceptance suite. Each numbered criterion runs standalone
// (`acceptance <n>`) or as part of the full sweep (`acceptance`), prints one
// [PASS]/[FAIL] line, and the binary exits nonzero if anything failed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "sp/head.hpp"
#include "sp/hungarian.hpp"
#include "sp/mask_ops.hpp"
#include "sp/pipeline.hpp"
#include "sp/prompt.hpp"
#include "sp/proposal.hpp"
#include "sp/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// Shared fixtures

sp::Tensor random_tensor(std::vector<std::size_t> shape, sp::SplitMix64& rng,
                         double lo = -1.0, double hi = 1.0) {
  sp::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.next_in(lo, hi);
  return t;
}

std::vector<sp::MaskProposal> random_masks(std::size_t count, std::size_t h,
                                           std::size_t w, sp::SplitMix64& rng) {
  std::vector<sp::MaskProposal> out;
  for (std::size_t i = 0; i < count; ++i) {
    sp::MaskProposal p;
    p.mask = sp::Tensor({h, w});
    std::size_t area = 0;
    while (area == 0) {
      for (auto& v : p.mask.values()) v = rng.next_below(3) == 0 ? 1.0 : 0.0;
      area = sp::mask_area(p.mask);
    }
    p.box = *sp::mask_to_box(p.mask);
    p.score = rng.next_double();
    p.seed_index = static_cast<int>(i);
    out.push_back(std::move(p));
  }
  return out;
}

// The desk-scale benchmark shared by criteria 6, 7 and 9.
sp::RunConfig benchmark_config(std::uint64_t seed) {
  sp::RunConfig cfg;
  cfg.n_kernels = 16;
  cfg.channels = 16;
  cfg.feat_channels = 9;
  cfg.stages = 2;
  cfg.lr = 0.2;
  cfg.momentum = 0.5;
  cfg.steps = 200;
  cfg.seed = seed;
  cfg.dataset.type = "synthetic";
  cfg.dataset.count = 20;
  cfg.dataset.seed = 7000 + 100 * seed;
  return cfg;
}

sp::DatasetSpec held_out_spec(const sp::RunConfig& cfg) {
  sp::DatasetSpec held = cfg.dataset;
  held.count = 10;
  held.seed = 90000 + cfg.seed;
  return held;
}

struct BenchmarkRun {
  double step0_loss = 0.0;
  double first_pass_mean = 0.0;
  double last_pass_mean = 0.0;
  double ap50_untrained = 0.0;
  double ap50_trained = 0.0;
  sp::PretrainResult result;
};

BenchmarkRun run_benchmark(const sp::RunConfig& cfg) {
  const auto train_set = sp::load_dataset(cfg.dataset);
  const auto held_set = sp::load_dataset(held_out_spec(cfg));

  BenchmarkRun run;
  const auto untrained = sp::init_train_state(cfg);
  run.ap50_untrained = sp::evaluate(untrained, cfg, held_set).ap.ap50.value_or(0.0);
  run.result = sp::pretrain(cfg, train_set);
  run.ap50_trained =
      sp::evaluate(run.result.state, cfg, held_set).ap.ap50.value_or(0.0);

  const int n = static_cast<int>(train_set.size());
  run.step0_loss = run.result.log.front().loss.total;
  for (int i = 0; i < n; ++i) run.first_pass_mean += run.result.log[i].loss.total;
  for (int i = cfg.steps - n; i < cfg.steps; ++i)
    run.last_pass_mean += run.result.log[i].loss.total;
  run.first_pass_mean /= n;
  run.last_pass_mean /= n;
  return run;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Outcome criterion_gradients() {
  const double h = 1e-5;
  double max_err = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    sp::SplitMix64 rng(seed * 7919);
    sp::HeadParams params = sp::init_head_params(4, 6, 5, rng.next());
    const sp::Tensor feat = random_tensor({6, 8, 8}, rng);
    const auto proposals = random_masks(3, 8, 8, rng);
    const sp::Tensor seed_feats = random_tensor({3, 5}, rng);
    const sp::LossWeights weights;  // cls 2, dice 4, ce 1, ker 1

    const auto trace = sp::forward(params, params.kernels0, feat, 2);
    const auto match = sp::match_for_loss(trace, proposals, weights);
    const auto grads = sp::backward_given_match(params, trace, proposals,
                                                seed_feats, weights, match);

    std::vector<double*> scalars;
    for (sp::Tensor* t :
         {&params.kernels0, &params.update_weight, &params.update_bias,
          &params.cls_weight, &params.seed_proj_weight, &params.seed_proj_bias})
      for (auto& v : t->values()) scalars.push_back(&v);
    scalars.push_back(&params.cls_bias);

    std::vector<double> analytic;
    for (const sp::Tensor* t :
         {&grads.kernels0, &grads.update_weight, &grads.update_bias,
          &grads.cls_weight, &grads.seed_proj_weight, &grads.seed_proj_bias})
      analytic.insert(analytic.end(), t->values().begin(), t->values().end());
    analytic.push_back(grads.cls_bias);

    const auto loss_at = [&]() {
      const auto t = sp::forward(params, params.kernels0, feat, 2);
      return sp::loss_given_match(params, t, proposals, seed_feats, weights, match)
          .total;
    };
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      const double saved = *scalars[i];
      *scalars[i] = saved + h;
      const double hi = loss_at();
      *scalars[i] = saved - h;
      const double lo = loss_at();
      *scalars[i] = saved;
      const double fd = (hi - lo) / (2.0 * h);
      const double err = std::abs(analytic[i] - fd) /
                         (std::max(std::abs(analytic[i]), std::abs(fd)) + 1e-4);
      max_err = std::max(max_err, err);
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max relative error %.3e (tol 1e-5), 20 seeds",
                max_err);
  return {max_err <= 1e-5, buf};
}

// ---------------------------------------------------------------------------
// 2. Hungarian optimality

double brute_force_assignment(const sp::Tensor& cost) {
  const int n = static_cast<int>(cost.dim(0));
  const int l = static_cast<int>(cost.dim(1));
  const bool rows_small = n <= l;
  const int small = rows_small ? n : l;
  const int large = rows_small ? l : n;
  double best = std::numeric_limits<double>::infinity();
  std::vector<char> used(large, 0);
  std::function<void(int, double)> rec = [&](int i, double acc) {
    if (i == small) {
      best = std::min(best, acc);
      return;
    }
    for (int j = 0; j < large; ++j) {
      if (used[j]) continue;
      used[j] = 1;
      rec(i + 1, acc + (rows_small ? cost(i, j) : cost(j, i)));
      used[j] = 0;
    }
  };
  rec(0, 0.0);
  return best;
}

Outcome criterion_hungarian() {
  sp::SplitMix64 rng(424242);
  int checked = 0;
  double worst_gap = 0.0;
  for (int n = 1; n <= 7; ++n)
    for (int l = 1; l <= 7; ++l)
      for (int trial = 0; trial < 3; ++trial) {
        sp::Tensor cost({static_cast<std::size_t>(n), static_cast<std::size_t>(l)});
        for (auto& v : cost.values()) v = rng.next_in(-10.0, 10.0);
        const auto result = sp::match_hungarian(cost);
        const double brute = brute_force_assignment(cost);
        worst_gap = std::max(worst_gap, std::abs(result.total_cost - brute));
        ++checked;
      }
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "%d matrices over all sizes <= 7, worst |gap| %.2e", checked,
                worst_gap);
  return {checked >= 100 && worst_gap <= 1e-9, buf};
}

// ---------------------------------------------------------------------------
// 3. Mask NMS oracle equivalence

Outcome criterion_nms() {
  sp::SplitMix64 rng(99);
  for (int set = 0; set < 100; ++set) {
    const std::size_t count = 4 + rng.next_below(10);
    std::vector<sp::MaskProposal> proposals;
    for (std::size_t i = 0; i < count; ++i) {
      const int x0 = static_cast<int>(rng.next_below(12));
      const int y0 = static_cast<int>(rng.next_below(12));
      const int x1 = std::min<int>(15, x0 + 2 + static_cast<int>(rng.next_below(6)));
      const int y1 = std::min<int>(15, y0 + 2 + static_cast<int>(rng.next_below(6)));
      sp::MaskProposal p;
      p.mask = sp::Tensor({16, 16});
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) p.mask(y, x) = 1.0;
      p.box = sp::Box{x0, y0, x1, y1};
      p.score = rng.next_double();
      p.seed_index = static_cast<int>(i);
      proposals.push_back(std::move(p));
    }

    // Reference: greedy over the explicit IoU table.
    std::vector<std::vector<double>> iou(count, std::vector<double>(count));
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < count; ++j)
        iou[i][j] = sp::mask_iou(proposals[i].mask, proposals[j].mask);
    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (proposals[a].score != proposals[b].score)
        return proposals[a].score > proposals[b].score;
      if (proposals[a].box.area() != proposals[b].box.area())
        return proposals[a].box.area() > proposals[b].box.area();
      return proposals[a].seed_index < proposals[b].seed_index;
    });
    std::vector<int> expected;
    for (int cand : order) {
      bool ok = true;
      for (int kept : expected)
        if (iou[cand][kept] >= 0.5) {
          ok = false;
          break;
        }
      if (ok) expected.push_back(cand);
    }

    const auto got = sp::mask_nms(proposals, 0.5);
    if (got.size() != expected.size()) return {false, "kept-set size mismatch"};
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (got[i].seed_index != expected[i]) return {false, "kept order differs"};
      if (got[i].mask.values() != proposals[expected[i]].mask.values())
        return {false, "kept mask differs"};
    }
  }
  return {true, "identical to the reference greedy on 100 random sets"};
}

// ---------------------------------------------------------------------------
// 4. Cosine matching permutation invariance

Outcome criterion_permutation() {
  sp::SplitMix64 rng(512);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 8, l = 5, c = 12;
    const sp::Tensor kernels = random_tensor({n, c}, rng);
    sp::PromptSet prompts;
    prompts.prompts = random_tensor({l, c}, rng);
    for (std::size_t i = 0; i < l; ++i) prompts.source.push_back(static_cast<int>(i));

    const auto base =
        sp::match_cosine(sp::similarity_matrix(kernels, prompts.prompts));
    const sp::Tensor injected = sp::inject(kernels, prompts, base.delta);

    std::vector<std::size_t> perm(l);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = l; i > 1; --i)
      std::swap(perm[i - 1], perm[rng.next_below(i)]);

    sp::PromptSet shuffled;
    shuffled.prompts = sp::Tensor({l, c});
    shuffled.source.resize(l);
    for (std::size_t i = 0; i < l; ++i) {
      const auto src = prompts.prompts.row(perm[i]);
      std::copy(src.begin(), src.end(), shuffled.prompts.row(i).begin());
      shuffled.source[i] = static_cast<int>(perm[i]);
    }
    const auto assign =
        sp::match_cosine(sp::similarity_matrix(kernels, shuffled.prompts));
    const sp::Tensor injected_perm = sp::inject(kernels, shuffled, assign.delta);
    if (std::memcmp(injected.data(), injected_perm.data(),
                    injected.size() * sizeof(double)) != 0)
      return {false, "cosine-matched injection changed under prompt permutation"};
  }

  // Constructed fixture where sequential assignment provably differs: two
  // distinct prompts swapped in place.
  const sp::Tensor kernels = sp::Tensor::from_data({2, 2}, {1, 0, 0, 1});
  sp::PromptSet prompts;
  prompts.prompts = sp::Tensor::from_data({2, 2}, {5, 0, 0, 7});
  prompts.source = {0, 1};
  sp::PromptSet swapped;
  swapped.prompts = sp::Tensor::from_data({2, 2}, {0, 7, 5, 0});
  swapped.source = {1, 0};
  const auto seq = sp::match_sequential(2, 2);
  const sp::Tensor a = sp::inject(kernels, prompts, seq.delta);
  const sp::Tensor b = sp::inject(kernels, swapped, seq.delta);
  if (a.values() == b.values())
    return {false, "sequential assignment unexpectedly permutation-invariant"};
  return {true, "bit-identical under cosine (20 trials); sequential differs"};
}

// ---------------------------------------------------------------------------
// 5. Proposal recovery

Outcome criterion_proposals() {
  const sp::SceneSpec spec;  // 48x48, depth 9, 2-4 blobs
  const sp::ProposalConfig pcfg;
  int blobs = 0, clean = 0;
  for (int s = 0; s < 50; ++s) {
    const auto scene = sp::make_synthetic_scene(spec, 1000 + s);
    const auto proposals = sp::propose_masks(scene.features, pcfg);
    for (const auto& gt : scene.gt_masks) {
      ++blobs;
      int hits = 0;
      for (const auto& p : proposals)
        if (sp::mask_iou(p.mask, gt) >= 0.7) ++hits;
      clean += hits == 1;
    }
  }
  const double rate = static_cast<double>(clean) / blobs;
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "%d/%d blobs recovered by exactly one proposal (%.1f%%, need 90%%)",
                clean, blobs, 100.0 * rate);
  return {rate >= 0.9, buf};
}

// ---------------------------------------------------------------------------
// 6. Training efficacy

Outcome criterion_training() {
  const auto run = run_benchmark(benchmark_config(42));
  const double reduction = 1.0 - run.last_pass_mean / run.step0_loss;
  const double ap_gain = run.ap50_trained - run.ap50_untrained;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "loss %.3f (step 0) -> %.3f (final pass mean): %.0f%% drop "
                "(vs first-pass mean %.3f: %.0f%%); AP50 %.3f -> %.3f (gain %.3f, "
                "need 0.3)",
                run.step0_loss, run.last_pass_mean, 100.0 * reduction,
                run.first_pass_mean,
                100.0 * (1.0 - run.last_pass_mean / run.first_pass_mean),
                run.ap50_untrained, run.ap50_trained, ap_gain);
  return {reduction >= 0.5 && ap_gain >= 0.3, buf};
}

// ---------------------------------------------------------------------------
// 7. Prompt ablation ordering

Outcome criterion_ablation() {
  const sp::AssignStrategy strategies[3] = {sp::AssignStrategy::cosine,
                                            sp::AssignStrategy::sequential,
                                            sp::AssignStrategy::random};
  double mean[3] = {0, 0, 0};
  for (int s = 0; s < 3; ++s) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      sp::RunConfig cfg = benchmark_config(seed);
      cfg.assignment = strategies[s];
      mean[s] += run_benchmark(cfg).ap50_trained;
    }
    mean[s] /= 5.0;
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "mean AP50 over 5 seeds: cosine %.3f, sequential %.3f, random %.3f",
                mean[0], mean[1], mean[2]);
  return {mean[0] >= mean[1] - 0.01 && mean[0] > mean[2], buf};
}

// ---------------------------------------------------------------------------
// 8. Kernel heatmap contract

Outcome criterion_heatmap() {
  sp::RunConfig cfg = benchmark_config(42);
  cfg.steps = 20;  // a short run gives non-trivial masks
  const auto train_set = sp::load_dataset(cfg.dataset);
  const auto result = sp::pretrain(cfg, train_set);

  sp::DatasetSpec two = held_out_spec(cfg);
  two.count = 2;
  const auto pair_set = sp::load_dataset(two);
  const sp::Tensor heat = sp::heatmap_over_dataset(result.state, cfg, pair_set);

  if (heat.shape() !=
      std::vector<std::size_t>{static_cast<std::size_t>(cfg.n_kernels), 200, 200})
    return {false, "heatmap shape is not N x 200 x 200"};
  for (double v : heat.values())
    if (v < 0.0 || v > 1.0) return {false, "heatmap value outside [0,1]"};

  const std::vector<sp::DatasetItem> first(pair_set.begin(), pair_set.begin() + 1);
  const std::vector<sp::DatasetItem> second(pair_set.begin() + 1, pair_set.end());
  const sp::Tensor ha = sp::heatmap_over_dataset(result.state, cfg, first);
  const sp::Tensor hb = sp::heatmap_over_dataset(result.state, cfg, second);
  double worst = 0.0;
  for (std::size_t i = 0; i < heat.size(); ++i)
    worst = std::max(worst, std::abs(heat.values()[i] -
                                     0.5 * (ha.values()[i] + hb.values()[i])));
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "shape 16x200x200, in [0,1], mean-oracle gap %.2e (tol 1e-10)",
                worst);
  return {worst <= 1e-10, buf};
}

// ---------------------------------------------------------------------------
// 9. Determinism

Outcome criterion_determinism() {
  const sp::RunConfig cfg = benchmark_config(42);
  const auto dataset = sp::load_dataset(cfg.dataset);
  const auto a = sp::pretrain(cfg, dataset);
  const auto b = sp::pretrain(cfg, dataset);

  if (sp::step_log_to_jsonl(a.log) != sp::step_log_to_jsonl(b.log))
    return {false, "loss logs differ between identical runs"};

  const auto dir = std::filesystem::temp_directory_path() / "sp_acceptance";
  std::filesystem::create_directories(dir);
  sp::save_train_state(dir / "a.spck", a.state, cfg);
  sp::save_train_state(dir / "b.spck", b.state, cfg);
  const auto slurp = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  };
  if (slurp(dir / "a.spck") != slurp(dir / "b.spck"))
    return {false, "checkpoint files differ between identical runs"};
  return {true, "loss logs and checkpoints bit-identical across reruns"};
}

// ---------------------------------------------------------------------------

struct Criterion {
  const char* name;
  double time_limit_s;  // 0 = unbounded
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {"gradient correctness vs central finite differences", 30.0, criterion_gradients},
    {"Hungarian optimality vs exhaustive enumeration", 10.0, criterion_hungarian},
    {"mask NMS equivalence to the reference greedy", 0.0, criterion_nms},
    {"cosine-matching permutation invariance", 0.0, criterion_permutation},
    {"saliency proposal recovery on synthetic scenes", 60.0, criterion_proposals},
    {"training efficacy (loss halves, AP50 gain >= 0.3)", 120.0, criterion_training},
    {"prompt ablation ordering (cosine vs baselines)", 0.0, criterion_ablation},
    {"kernel heatmap contract (N x 200 x 200 mean)", 0.0, criterion_heatmap},
    {"determinism of logs and checkpoints", 0.0, criterion_determinism},
};

bool run_criterion(int index) {
  const Criterion& c = kCriteria[index];
  const auto start = Clock::now();
  Outcome outcome;
  try {
    outcome = c.run();
  } catch (const std::exception& e) {
    outcome = {false, std::string("exception: ") + e.what()};
  }
  const double elapsed = seconds_since(start);
  bool pass = outcome.pass;
  std::string timing = "";
  if (c.time_limit_s > 0.0) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "; %.1fs < %.0fs", elapsed, c.time_limit_s);
    timing = buf;
    pass = pass && elapsed < c.time_limit_s;
  } else {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "; %.1fs", elapsed);
    timing = buf;
  }
  std::printf("[%s] criterion %d: %s (%s%s)\n", pass ? "PASS" : "FAIL", index + 1,
              c.name, outcome.detail.c_str(), timing.c_str());
  std::fflush(stdout);
  return pass;
}

}  // namespace

int main(int argc, char** argv) {
  bool all_pass = true;
  if (argc > 1) {
    const int index = std::atoi(argv[1]) - 1;
    if (index < 0 || index >= static_cast<int>(std::size(kCriteria))) {
      std::fprintf(stderr, "usage: %s [1..%zu]\n", argv[0], std::size(kCriteria));
      return 2;
    }
    all_pass = run_criterion(index);
  } else {
    for (int i = 0; i < static_cast<int>(std::size(kCriteria)); ++i)
      all_pass = run_criterion(i) && all_pass;
  }
  return all_pass ? 0 : 1;
}
