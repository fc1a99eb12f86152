#include "sp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "sp/checkpoint.hpp"
#include "sp/errors.hpp"
#include "sp/image_io.hpp"
#include "sp/manifest.hpp"
#include "sp/prompt.hpp"
#include "sp/rng.hpp"
#include "sp/tensor_io.hpp"

namespace sp {

using nlohmann::json;

namespace {

// Derived-seed salts. Per-step streams leave the parameter-init stream (the
// raw run seed) untouched, so label sources that consume no randomness
// produce bit-identical trajectories.
constexpr std::uint64_t kLiftSalt = 0;
std::uint64_t proposal_salt(long step) { return 1 + 2 * static_cast<std::uint64_t>(step); }
std::uint64_t assign_salt(long step) { return 2 + 2 * static_cast<std::uint64_t>(step); }

// Scene field: every pixel carries this bias in all channels; blobs add
// their amplitude on top of one channel. The bias keeps the background
// column norm usable (a mask head must be able to vote it down), while the
// noise stays small enough that blob signatures dominate seed similarities.
constexpr double kSceneBias = 0.25;
constexpr double kSceneNoise = 0.05;

Tensor rasterize_blob(const SceneBlob& blob, int h, int w) {
  Tensor mask({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (int y = std::max(0, blob.cy - blob.ry);
       y <= std::min(h - 1, blob.cy + blob.ry); ++y) {
    for (int x = std::max(0, blob.cx - blob.rx);
         x <= std::min(w - 1, blob.cx + blob.rx); ++x) {
      bool inside;
      if (blob.shape == 0) {
        inside = true;  // clipped rectangle
      } else {
        const double dx = static_cast<double>(x - blob.cx) / (blob.rx + 0.5);
        const double dy = static_cast<double>(y - blob.cy) / (blob.ry + 0.5);
        inside = dx * dx + dy * dy <= 1.0;
      }
      if (inside) mask(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1.0;
    }
  }
  return mask;
}

// True if the candidate mask comes within `gap` pixels of any occupied pixel.
bool too_close(const Tensor& candidate, const Tensor& occupied, int gap) {
  const int h = static_cast<int>(candidate.dim(0));
  const int w = static_cast<int>(candidate.dim(1));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (candidate(y, x) == 0.0) continue;
      for (int dy = -gap; dy <= gap; ++dy)
        for (int dx = -gap; dx <= gap; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (occupied(yy, xx) != 0.0) return true;
        }
    }
  return false;
}

// Luminance box stats over a (2r+1)² window with replicated borders.
void box_stats(const std::vector<double>& lum, int h, int w, int r,
               std::span<double> mean_out, std::span<double> var_out) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double sum = 0.0, sum2 = 0.0;
      const int count = (2 * r + 1) * (2 * r + 1);
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = std::clamp(y + dy, 0, h - 1);
          const int xx = std::clamp(x + dx, 0, w - 1);
          const double v = lum[static_cast<std::size_t>(yy) * w + xx];
          sum += v;
          sum2 += v * v;
        }
      const double mean = sum / count;
      mean_out[static_cast<std::size_t>(y) * w + x] = mean;
      var_out[static_cast<std::size_t>(y) * w + x] =
          std::max(0.0, sum2 / count - mean * mean);
    }
}

json proposal_config_to_json(const ProposalConfig& cfg) {
  return json{{"grid_h", cfg.grid_h},
              {"grid_w", cfg.grid_w},
              {"binarize_threshold", cfg.binarize_threshold},
              {"nms_iou_threshold", cfg.nms_iou_threshold},
              {"min_area_fraction", cfg.min_area_fraction}};
}

ProposalConfig proposal_config_from_json(const json& j) {
  ProposalConfig cfg;
  cfg.grid_h = j.value("grid_h", cfg.grid_h);
  cfg.grid_w = j.value("grid_w", cfg.grid_w);
  cfg.binarize_threshold = j.value("binarize_threshold", cfg.binarize_threshold);
  cfg.nms_iou_threshold = j.value("nms_iou_threshold", cfg.nms_iou_threshold);
  cfg.min_area_fraction = j.value("min_area_fraction", cfg.min_area_fraction);
  return cfg;
}

json loss_weights_to_json(const LossWeights& w) {
  return json{{"cls", w.cls},
              {"dice", w.dice},
              {"ce", w.ce},
              {"ker", w.ker},
              {"focal_gamma", w.focal_gamma},
              {"focal_alpha", w.focal_alpha},
              {"dice_eps", w.dice_eps},
              {"kernel_loss_include_stage0", w.kernel_loss_include_stage0}};
}

LossWeights loss_weights_from_json(const json& j) {
  LossWeights w;
  w.cls = j.value("cls", w.cls);
  w.dice = j.value("dice", w.dice);
  w.ce = j.value("ce", w.ce);
  w.ker = j.value("ker", w.ker);
  w.focal_gamma = j.value("focal_gamma", w.focal_gamma);
  w.focal_alpha = j.value("focal_alpha", w.focal_alpha);
  w.dice_eps = j.value("dice_eps", w.dice_eps);
  w.kernel_loss_include_stage0 =
      j.value("kernel_loss_include_stage0", w.kernel_loss_include_stage0);
  return w;
}

json dataset_spec_to_json(const DatasetSpec& d) {
  return json{{"type", d.type},   {"count", d.count},
              {"h", d.h},         {"w", d.w},
              {"depth", d.depth}, {"min_blobs", d.min_blobs},
              {"max_blobs", d.max_blobs}, {"seed", d.seed},
              {"paths", d.paths}};
}

DatasetSpec dataset_spec_from_json(const json& j) {
  DatasetSpec d;
  d.type = j.value("type", d.type);
  d.count = j.value("count", d.count);
  d.h = j.value("h", d.h);
  d.w = j.value("w", d.w);
  d.depth = j.value("depth", d.depth);
  d.min_blobs = j.value("min_blobs", d.min_blobs);
  d.max_blobs = j.value("max_blobs", d.max_blobs);
  d.seed = j.value("seed", d.seed);
  d.paths = j.value("paths", d.paths);
  return d;
}

json parse_json_or_config_error(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

// Per-image work that does not depend on the training step.
struct PreparedImage {
  Tensor lifted;  // C×H×W
  std::vector<MaskProposal> proposals;
  Tensor seed_feats;  // L×D
  PromptSet prompts;
};

Tensor seed_feats_for(const Tensor& features, const std::vector<MaskProposal>& proposals,
                      const ProposalConfig& grid_cfg, bool indices_are_grid_seeds) {
  const std::size_t depth = features.dim(0);
  Tensor out({std::max<std::size_t>(1, proposals.size()), depth});
  if (proposals.empty()) return Tensor({1, depth});

  SeedGrid grid;
  bool have_grid = false;
  for (std::size_t l = 0; l < proposals.size(); ++l) {
    const int idx = proposals[l].seed_index;
    std::vector<double> feat;
    if (indices_are_grid_seeds && idx >= 0) {
      if (!have_grid) {
        grid = sample_seeds(features, grid_cfg.grid_h, grid_cfg.grid_w);
        have_grid = true;
      }
      if (static_cast<std::size_t>(idx) < grid.boxes.size()) {
        const auto row = grid.features.row(static_cast<std::size_t>(idx));
        feat.assign(row.begin(), row.end());
      }
    }
    if (feat.empty()) feat = avg_pool_region(features, proposals[l].box);
    std::copy(feat.begin(), feat.end(), out.row(l).begin());
  }
  return out;
}

constexpr std::uint64_t kEvalAssignSaltBase = 1u << 20;

// Inference uses the same unsupervised path as pre-training: saliency
// proposals prompt the kernels under the configured strategy. Images where
// prompting is impossible (no proposals, or more proposals than kernels)
// fall back to the bare kernels.
ForwardTrace inference_forward(const TrainState& state, const RunConfig& cfg,
                               const DatasetItem& item, std::size_t image_index) {
  const Tensor lifted = apply_feature_lift(state.feature_lift, item.features);
  Tensor injected = state.params.kernels0;
  if (cfg.assignment != AssignStrategy::none) {
    const auto proposals = propose_masks(item.features, cfg.proposal);
    if (!proposals.empty() &&
        proposals.size() <= static_cast<std::size_t>(cfg.n_kernels)) {
      const PromptSet prompts = make_prompts(lifted, proposals);
      Assignment assign;
      switch (cfg.assignment) {
        case AssignStrategy::cosine:
          assign = match_cosine(
              similarity_matrix(state.params.kernels0, prompts.prompts));
          break;
        case AssignStrategy::sequential:
          assign = match_sequential(cfg.n_kernels,
                                    static_cast<int>(prompts.count()));
          break;
        case AssignStrategy::random:
          assign = match_random(
              cfg.n_kernels, static_cast<int>(prompts.count()),
              derive_seed(cfg.seed, kEvalAssignSaltBase + image_index));
          break;
        case AssignStrategy::none:
          break;
      }
      injected = inject(state.params.kernels0, prompts, assign.delta);
    }
  }
  return forward(state.params, injected, lifted, cfg.stages);
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenes

SyntheticScene make_synthetic_scene(const SceneSpec& spec, std::uint64_t seed) {
  if (spec.h < 8 || spec.w < 8) throw std::invalid_argument("scene: canvas too small");
  if (spec.depth < 1) throw std::invalid_argument("scene: depth must be positive");
  if (spec.blobs.empty() &&
      (spec.min_blobs < 0 || spec.max_blobs < spec.min_blobs ||
       spec.max_blobs > spec.depth))
    throw std::invalid_argument("scene: bad blob count range");

  SplitMix64 rng(seed);
  const int h = spec.h, w = spec.w;
  const std::size_t depth = static_cast<std::size_t>(spec.depth);

  // Draw order: blob count, channel shuffle, per-blob geometry + amplitude,
  // background noise field.
  std::vector<SceneBlob> blobs = spec.blobs;
  if (blobs.empty()) {
    const int want = spec.min_blobs +
                     static_cast<int>(rng.next_below(
                         static_cast<std::uint64_t>(spec.max_blobs - spec.min_blobs + 1)));
    std::vector<int> channels(depth);
    for (std::size_t i = 0; i < depth; ++i) channels[i] = static_cast<int>(i);
    for (std::size_t i = depth - 1; i > 0; --i) {
      const std::size_t j = rng.next_below(i + 1);
      std::swap(channels[i], channels[j]);
    }

    Tensor occupied({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    for (int k = 0; k < want; ++k) {
      for (int attempt = 0; attempt < 64; ++attempt) {
        SceneBlob blob;
        blob.shape = static_cast<int>(rng.next_below(2));
        blob.rx = 6 + static_cast<int>(rng.next_below(2));
        blob.ry = 6 + static_cast<int>(rng.next_below(2));
        if (2 * blob.rx + 3 >= w || 2 * blob.ry + 3 >= h) continue;
        blob.cx = blob.rx + 1 +
                  static_cast<int>(rng.next_below(
                      static_cast<std::uint64_t>(w - 2 * blob.rx - 2)));
        blob.cy = blob.ry + 1 +
                  static_cast<int>(rng.next_below(
                      static_cast<std::uint64_t>(h - 2 * blob.ry - 2)));
        blob.channel = channels[static_cast<std::size_t>(k)];
        blob.amplitude = rng.next_in(0.8, 1.2);
        const Tensor mask = rasterize_blob(blob, h, w);
        if (too_close(mask, occupied, 2)) continue;
        blobs.push_back(blob);
        for (std::size_t i = 0; i < mask.size(); ++i)
          if (mask.values()[i] != 0.0) occupied.values()[i] = 1.0;
        break;
      }
    }
  }
  for (const auto& blob : blobs)
    if (blob.channel < 0 || static_cast<std::size_t>(blob.channel) >= depth)
      throw std::invalid_argument("scene: blob channel out of range");

  SyntheticScene scene;
  scene.features =
      Tensor({depth, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  // Bias plus noise everywhere, row-major, channel-minor draw order.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (std::size_t c = 0; c < depth; ++c)
        scene.features(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            kSceneBias + kSceneNoise * (2.0 * rng.next_double() - 1.0);

  for (const auto& blob : blobs) {
    Tensor mask = rasterize_blob(blob, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (mask(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) != 0.0) {
          // Constant signature: bias everywhere, amplitude on the blob channel.
          for (std::size_t c = 0; c < depth; ++c)
            scene.features(c, static_cast<std::size_t>(y),
                           static_cast<std::size_t>(x)) = kSceneBias;
          scene.features(static_cast<std::size_t>(blob.channel),
                         static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
              kSceneBias + blob.amplitude;
        }
    const auto box = mask_to_box(mask);
    if (!box.has_value()) continue;
    scene.gt_boxes.push_back(*box);
    scene.gt_masks.push_back(std::move(mask));
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Features

Tensor toy_feature_extractor(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3)
    throw std::invalid_argument("toy_feature_extractor: expected 3×H×W");
  const int h = static_cast<int>(rgb.dim(1));
  const int w = static_cast<int>(rgb.dim(2));
  const std::size_t hw = static_cast<std::size_t>(h) * w;

  Tensor out({kFilterBankChannels, static_cast<std::size_t>(h),
              static_cast<std::size_t>(w)});
  // Channels 0..2: the color planes.
  std::copy(rgb.values().begin(), rgb.values().end(), out.values().begin());

  std::vector<double> lum(hw);
  for (std::size_t i = 0; i < hw; ++i)
    lum[i] = (rgb.values()[i] + rgb.values()[hw + i] + rgb.values()[2 * hw + i]) / 3.0;

  // Channels 3,4: central-difference gradients with replicated borders.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int xm = std::max(0, x - 1), xp = std::min(w - 1, x + 1);
      const int ym = std::max(0, y - 1), yp = std::min(h - 1, y + 1);
      out(3, y, x) = (lum[static_cast<std::size_t>(y) * w + xp] -
                      lum[static_cast<std::size_t>(y) * w + xm]) / 2.0;
      out(4, y, x) = (lum[static_cast<std::size_t>(yp) * w + x] -
                      lum[static_cast<std::size_t>(ym) * w + x]) / 2.0;
    }

  // Channels 5..8: local luminance contrast (box mean minus the image mean)
  // and variance, at two scales. Centering keeps flat regions near zero so
  // seed similarity is driven by what stands out, not shared brightness.
  double global_mean = 0.0;
  for (double v : lum) global_mean += v;
  global_mean /= static_cast<double>(hw);
  box_stats(lum, h, w, 1, out.plane(5), out.plane(6));
  box_stats(lum, h, w, 2, out.plane(7), out.plane(8));
  for (double& v : out.plane(5)) v -= global_mean;
  for (double& v : out.plane(7)) v -= global_mean;
  return out;
}

Tensor make_feature_lift(std::size_t channels, std::size_t feat_channels,
                         std::uint64_t seed) {
  Tensor lift({channels, feat_channels});
  SplitMix64 rng(seed);
  // The gain sets the head's logit scale: desk-scale runs are short, so the
  // lifted columns need enough magnitude for sigmoid logits to reach
  // saturation within a few hundred SGD steps.
  const double bound = 2.0 / std::sqrt(static_cast<double>(feat_channels));
  for (double& v : lift.values()) v = rng.next_in(-bound, bound);
  return lift;
}

Tensor apply_feature_lift(const Tensor& lift, const Tensor& feat_dhw) {
  if (lift.rank() != 2 || feat_dhw.rank() != 3 || lift.dim(1) != feat_dhw.dim(0))
    throw std::invalid_argument("apply_feature_lift: shape mismatch");
  const std::size_t channels = lift.dim(0);
  const std::size_t depth = lift.dim(1);
  const std::size_t hw = feat_dhw.dim(1) * feat_dhw.dim(2);

  Tensor out({channels, feat_dhw.dim(1), feat_dhw.dim(2)});
  for (std::size_t c = 0; c < channels; ++c) {
    auto plane = out.plane(c);
    for (std::size_t d = 0; d < depth; ++d) {
      const double wcd = lift(c, d);
      const double* src = feat_dhw.data() + d * hw;
      for (std::size_t i = 0; i < hw; ++i) plane[i] += wcd * src[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

std::vector<DatasetItem> load_dataset(const DatasetSpec& spec) {
  std::vector<DatasetItem> items;
  if (spec.type == "synthetic") {
    if (spec.count < 1) throw ConfigError("dataset: count must be >= 1");
    SceneSpec scene_spec;
    scene_spec.h = spec.h;
    scene_spec.w = spec.w;
    scene_spec.depth = spec.depth;
    scene_spec.min_blobs = spec.min_blobs;
    scene_spec.max_blobs = spec.max_blobs;
    for (int i = 0; i < spec.count; ++i) {
      SyntheticScene scene =
          make_synthetic_scene(scene_spec, spec.seed + static_cast<std::uint64_t>(i));
      DatasetItem item;
      item.id = "scene_" + std::to_string(i);
      item.features = std::move(scene.features);
      item.gt_masks = std::move(scene.gt_masks);
      item.gt_boxes = std::move(scene.gt_boxes);
      item.has_gt = true;
      items.push_back(std::move(item));
    }
  } else if (spec.type == "images") {
    for (const auto& p : spec.paths) {
      DatasetItem item;
      item.id = std::filesystem::path(p).stem().string();
      item.features = toy_feature_extractor(read_ppm(p));
      items.push_back(std::move(item));
    }
  } else if (spec.type == "tensors") {
    for (const auto& p : spec.paths) {
      DatasetItem item;
      item.id = std::filesystem::path(p).stem().string();
      item.features = read_tensor(p);
      if (item.features.rank() != 3)
        throw ConfigError("dataset: feature tensors must be D×H×W");
      items.push_back(std::move(item));
    }
  } else {
    throw ConfigError("dataset: unknown type '" + spec.type + "'");
  }
  if (items.empty()) throw ConfigError("dataset: empty");
  return items;
}

// ---------------------------------------------------------------------------
// Config

std::string to_string(LabelSource s) {
  switch (s) {
    case LabelSource::saliency: return "saliency";
    case LabelSource::random: return "random";
    case LabelSource::external_manifest: return "external-manifest";
  }
  return "saliency";
}

std::string to_string(AssignStrategy s) {
  switch (s) {
    case AssignStrategy::cosine: return "cosine";
    case AssignStrategy::sequential: return "sequential";
    case AssignStrategy::random: return "random";
    case AssignStrategy::none: return "none";
  }
  return "cosine";
}

LabelSource label_source_from_string(const std::string& s) {
  if (s == "saliency") return LabelSource::saliency;
  if (s == "random") return LabelSource::random;
  if (s == "external-manifest") return LabelSource::external_manifest;
  throw ConfigError("unknown label source '" + s + "'");
}

AssignStrategy assign_strategy_from_string(const std::string& s) {
  if (s == "cosine") return AssignStrategy::cosine;
  if (s == "sequential") return AssignStrategy::sequential;
  if (s == "random") return AssignStrategy::random;
  if (s == "none") return AssignStrategy::none;
  throw ConfigError("unknown assignment strategy '" + s + "'");
}

void validate_run_config(const RunConfig& cfg) {
  if (cfg.n_kernels < 1) throw ConfigError("config: n_kernels must be >= 1");
  if (cfg.channels < 1) throw ConfigError("config: channels must be >= 1");
  if (cfg.feat_channels < 1) throw ConfigError("config: feat_channels must be >= 1");
  if (cfg.stages < 1) throw ConfigError("config: stages must be >= 1");
  if (cfg.lr < 0.0 || cfg.momentum < 0.0 || cfg.momentum >= 1.0)
    throw ConfigError("config: bad optimizer settings");
  if (cfg.steps < 0) throw ConfigError("config: steps must be >= 0");
  if (cfg.loss.cls < 0 || cfg.loss.dice < 0 || cfg.loss.ce < 0 || cfg.loss.ker < 0)
    throw ConfigError("config: loss weights must be >= 0");
  if (cfg.proposal.grid_h < 1 || cfg.proposal.grid_w < 1 ||
      cfg.proposal.binarize_threshold <= 0 || cfg.proposal.binarize_threshold >= 1 ||
      cfg.proposal.nms_iou_threshold <= 0 || cfg.proposal.nms_iou_threshold >= 1 ||
      cfg.proposal.min_area_fraction < 0 || cfg.proposal.min_area_fraction >= 1)
    throw ConfigError("config: bad proposal settings");
  if (cfg.label_source == LabelSource::external_manifest && cfg.manifest_dir.empty())
    throw ConfigError("config: external-manifest source needs manifest_dir");
  if (cfg.label_source == LabelSource::random && cfg.random_proposal_count < 1)
    throw ConfigError("config: random_proposal_count must be >= 1");
  if (cfg.dataset.type == "synthetic" && cfg.feat_channels != cfg.dataset.depth)
    throw ConfigError("config: feat_channels must equal the synthetic scene depth");
  if (cfg.dataset.type == "images" &&
      cfg.feat_channels != static_cast<int>(kFilterBankChannels))
    throw ConfigError("config: feat_channels must equal the filter bank size (9)");
}

RunConfig parse_run_config(const std::string& json_text) {
  const json j = parse_json_or_config_error(json_text, "config");
  RunConfig cfg;
  try {
    cfg.n_kernels = j.value("n_kernels", cfg.n_kernels);
    cfg.channels = j.value("channels", cfg.channels);
    cfg.feat_channels = j.value("feat_channels", cfg.feat_channels);
    cfg.stages = j.value("stages", cfg.stages);
    if (j.contains("proposal")) cfg.proposal = proposal_config_from_json(j["proposal"]);
    if (j.contains("loss_weights")) cfg.loss = loss_weights_from_json(j["loss_weights"]);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("label_source"))
      cfg.label_source = label_source_from_string(j["label_source"].get<std::string>());
    if (j.contains("assignment"))
      cfg.assignment = assign_strategy_from_string(j["assignment"].get<std::string>());
    if (j.contains("dataset")) cfg.dataset = dataset_spec_from_json(j["dataset"]);
    cfg.manifest_dir = j.value("manifest_dir", cfg.manifest_dir);
    cfg.random_proposal_count = j.value("random_proposal_count", cfg.random_proposal_count);
    cfg.assignment_dump_dir = j.value("assignment_dump_dir", cfg.assignment_dump_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["n_kernels"] = cfg.n_kernels;
  j["channels"] = cfg.channels;
  j["feat_channels"] = cfg.feat_channels;
  j["stages"] = cfg.stages;
  j["proposal"] = proposal_config_to_json(cfg.proposal);
  j["loss_weights"] = loss_weights_to_json(cfg.loss);
  j["lr"] = cfg.lr;
  j["momentum"] = cfg.momentum;
  j["steps"] = cfg.steps;
  j["seed"] = cfg.seed;
  j["label_source"] = to_string(cfg.label_source);
  j["assignment"] = to_string(cfg.assignment);
  j["dataset"] = dataset_spec_to_json(cfg.dataset);
  j["manifest_dir"] = cfg.manifest_dir;
  j["random_proposal_count"] = cfg.random_proposal_count;
  j["assignment_dump_dir"] = cfg.assignment_dump_dir;
  return j.dump(2);
}

DatasetSpec parse_dataset_spec(const std::string& json_text) {
  return dataset_spec_from_json(parse_json_or_config_error(json_text, "dataset"));
}

DatasetSpec load_dataset_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_dataset_spec(ss.str());
}

SceneSpec load_scene_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
  SceneSpec spec;
  spec.h = j.value("h", spec.h);
  spec.w = j.value("w", spec.w);
  spec.depth = j.value("depth", spec.depth);
  spec.min_blobs = j.value("min_blobs", spec.min_blobs);
  spec.max_blobs = j.value("max_blobs", spec.max_blobs);
  if (j.contains("blobs")) {
    for (const auto& jb : j["blobs"]) {
      SceneBlob b;
      b.shape = jb.value("shape", 0);
      b.cx = jb.at("cx").get<int>();
      b.cy = jb.at("cy").get<int>();
      b.rx = jb.at("rx").get<int>();
      b.ry = jb.at("ry").get<int>();
      b.channel = jb.value("channel", 0);
      b.amplitude = jb.value("amplitude", 1.0);
      spec.blobs.push_back(b);
    }
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Training

TrainState init_train_state(const RunConfig& cfg) {
  validate_run_config(cfg);
  TrainState state;
  state.params = init_head_params(static_cast<std::size_t>(cfg.n_kernels),
                                  static_cast<std::size_t>(cfg.channels),
                                  static_cast<std::size_t>(cfg.feat_channels),
                                  cfg.seed);
  state.velocity = zero_grads(state.params);
  state.feature_lift = make_feature_lift(static_cast<std::size_t>(cfg.channels),
                                         static_cast<std::size_t>(cfg.feat_channels),
                                         derive_seed(cfg.seed, kLiftSalt));
  state.seed = cfg.seed;
  state.step = 0;
  return state;
}

PretrainResult pretrain(const RunConfig& cfg, const std::vector<DatasetItem>& dataset) {
  validate_run_config(cfg);
  if (dataset.empty()) throw ConfigError("pretrain: empty dataset");
  for (const auto& item : dataset)
    if (item.features.dim(0) != static_cast<std::size_t>(cfg.feat_channels))
      throw ConfigError("pretrain: dataset feature channels do not match config");

  PretrainResult result;
  result.state = init_train_state(cfg);
  TrainState& state = result.state;

  const bool per_step_labels = cfg.label_source == LabelSource::random;
  std::vector<PreparedImage> prepared(dataset.size());
  std::vector<char> ready(dataset.size(), 0);

  const auto prepare = [&](std::size_t idx, long step) {
    PreparedImage& img = prepared[idx];
    const DatasetItem& item = dataset[idx];
    const std::size_t h = item.features.dim(1), w = item.features.dim(2);
    if (!ready[idx]) img.lifted = apply_feature_lift(state.feature_lift, item.features);

    switch (cfg.label_source) {
      case LabelSource::saliency:
        img.proposals = propose_masks(item.features, cfg.proposal);
        img.seed_feats = seed_feats_for(item.features, img.proposals, cfg.proposal, true);
        break;
      case LabelSource::random:
        img.proposals = random_proposals(static_cast<int>(h), static_cast<int>(w),
                                         cfg.random_proposal_count,
                                         derive_seed(cfg.seed, proposal_salt(step)),
                                         cfg.proposal.min_area_fraction);
        img.seed_feats = seed_feats_for(item.features, img.proposals, cfg.proposal, false);
        break;
      case LabelSource::external_manifest: {
        const auto path =
            std::filesystem::path(cfg.manifest_dir) / (item.id + ".json");
        const ProposalManifest manifest = read_manifest(path);
        if (manifest.h != h || manifest.w != w)
          throw ConfigError("manifest extent does not match features: " + item.id);
        img.proposals = manifest.proposals;
        img.seed_feats =
            seed_feats_for(item.features, img.proposals, manifest.config, true);
        break;
      }
    }
    if (img.proposals.size() > static_cast<std::size_t>(cfg.n_kernels))
      throw ConfigError("image " + item.id +
                        " produced more proposals than kernels; raise n_kernels");
    img.prompts = make_prompts(img.lifted, img.proposals);
    ready[idx] = 1;
  };

  for (long step = 0; step < cfg.steps; ++step) {
    const std::size_t idx = static_cast<std::size_t>(step) % dataset.size();
    if (!ready[idx] || per_step_labels) prepare(idx, step);
    const PreparedImage& img = prepared[idx];
    const DatasetItem& item = dataset[idx];
    const std::size_t n_prompts = img.prompts.count();

    Tensor injected = state.params.kernels0;
    if (cfg.assignment != AssignStrategy::none && n_prompts > 0) {
      Assignment assign;
      switch (cfg.assignment) {
        case AssignStrategy::cosine:
          assign = match_cosine(
              similarity_matrix(state.params.kernels0, img.prompts.prompts));
          break;
        case AssignStrategy::sequential:
          assign = match_sequential(cfg.n_kernels, static_cast<int>(n_prompts));
          break;
        case AssignStrategy::random:
          assign = match_random(cfg.n_kernels, static_cast<int>(n_prompts),
                                derive_seed(cfg.seed, assign_salt(step)));
          break;
        case AssignStrategy::none:
          break;
      }
      injected = inject(state.params.kernels0, img.prompts, assign.delta);
      if (!cfg.assignment_dump_dir.empty()) {
        std::filesystem::create_directories(cfg.assignment_dump_dir);
        write_assignment_json(std::filesystem::path(cfg.assignment_dump_dir) /
                                  ("step_" + std::to_string(step) + ".json"),
                              assign, cfg.n_kernels, static_cast<int>(n_prompts));
      }
    }

    const ForwardTrace trace = forward(state.params, injected, img.lifted, cfg.stages);
    LossBreakdown breakdown;
    HeadGrads grads;
    if (img.proposals.empty()) {
      breakdown = loss_given_match(state.params, trace, img.proposals, img.seed_feats,
                                   cfg.loss, MatchResult{});
      grads = backward_given_match(state.params, trace, img.proposals, img.seed_feats,
                                   cfg.loss, MatchResult{});
    } else {
      const MatchResult match = match_for_loss(trace, img.proposals, cfg.loss);
      breakdown = loss_given_match(state.params, trace, img.proposals, img.seed_feats,
                                   cfg.loss, match);
      grads = backward_given_match(state.params, trace, img.proposals, img.seed_feats,
                                   cfg.loss, match);
    }
    if (!std::isfinite(breakdown.total))
      throw NumericError("non-finite loss at step " + std::to_string(step));

    sgd_step(state.params, state.velocity, grads, cfg.lr, cfg.momentum);
    state.step = step + 1;
    result.log.push_back({step, item.id, breakdown});
  }
  return result;
}

std::string step_log_to_jsonl(const std::vector<StepLog>& log) {
  std::string out;
  for (const auto& entry : log) {
    json j;
    j["step"] = entry.step;
    j["image"] = entry.image_id;
    j["cls"] = entry.loss.cls;
    j["dice"] = entry.loss.dice;
    j["ce"] = entry.loss.ce;
    j["ker"] = entry.loss.ker;
    j["total"] = entry.loss.total;
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation / export

EvalReport evaluate(const TrainState& state, const RunConfig& cfg,
                    const std::vector<DatasetItem>& dataset) {
  EvalReport report;
  std::vector<DetectionRecord> records;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const DatasetItem& item = dataset[i];
    if (!item.has_gt)
      throw ConfigError("evaluate: dataset item without ground truth: " + item.id);
    const ForwardTrace trace = inference_forward(state, cfg, item, i);
    DetectionRecord record;
    record.image_id = static_cast<std::int64_t>(i);
    record.gt_boxes = item.gt_boxes;
    const Tensor& masks = trace.final_masks();
    for (std::size_t kn = 0; kn < masks.dim(0); ++kn) {
      Tensor hard({masks.dim(1), masks.dim(2)});
      const auto soft = masks.plane(kn);
      for (std::size_t j = 0; j < soft.size(); ++j)
        hard.values()[j] = soft[j] >= 0.5 ? 1.0 : 0.0;
      const auto box = mask_to_box(hard);
      if (!box.has_value()) continue;
      record.detections.push_back({*box, trace.fg_prob[kn]});
    }
    report.n_gt += record.gt_boxes.size();
    report.n_predictions += record.detections.size();
    records.push_back(std::move(record));
  }
  report.n_images = records.size();
  report.ap = average_precision(records);
  return report;
}

std::string eval_report_to_json(const EvalReport& report) {
  json j;
  j["ap"] = report.ap.ap.has_value() ? json(*report.ap.ap) : json(nullptr);
  j["ap50"] = report.ap.ap50.has_value() ? json(*report.ap.ap50) : json(nullptr);
  j["ap75"] = report.ap.ap75.has_value() ? json(*report.ap.ap75) : json(nullptr);
  j["n_images"] = report.n_images;
  j["n_gt"] = report.n_gt;
  j["n_predictions"] = report.n_predictions;
  return j.dump(2);
}

Tensor heatmap_over_dataset(const TrainState& state, const RunConfig& cfg,
                            const std::vector<DatasetItem>& dataset,
                            double activation_threshold) {
  std::vector<Tensor> stacks;
  stacks.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    stacks.push_back(inference_forward(state, cfg, dataset[i], i).final_masks());
  return kernel_heatmap(stacks, activation_threshold);
}

void save_train_state(const std::filesystem::path& path, const TrainState& state,
                      const RunConfig& cfg) {
  NamedTensors records;
  records.emplace_back("kernels0", state.params.kernels0);
  records.emplace_back("update_weight", state.params.update_weight);
  records.emplace_back("update_bias", state.params.update_bias);
  records.emplace_back("cls_weight", state.params.cls_weight);
  records.emplace_back("cls_bias", Tensor::from_data({1}, {state.params.cls_bias}));
  records.emplace_back("seed_proj_weight", state.params.seed_proj_weight);
  records.emplace_back("seed_proj_bias", state.params.seed_proj_bias);
  records.emplace_back("m_kernels0", state.velocity.kernels0);
  records.emplace_back("m_update_weight", state.velocity.update_weight);
  records.emplace_back("m_update_bias", state.velocity.update_bias);
  records.emplace_back("m_cls_weight", state.velocity.cls_weight);
  records.emplace_back("m_cls_bias", Tensor::from_data({1}, {state.velocity.cls_bias}));
  records.emplace_back("m_seed_proj_weight", state.velocity.seed_proj_weight);
  records.emplace_back("m_seed_proj_bias", state.velocity.seed_proj_bias);
  records.emplace_back("feature_lift", state.feature_lift);
  records.emplace_back("step", Tensor::from_data({1}, {static_cast<double>(state.step)}));
  save_records(path, records);

  json sidecar;
  sidecar["config"] = json::parse(run_config_to_json(cfg));
  sidecar["step"] = state.step;
  std::ofstream out(path.string() + ".json");
  if (!out)
    throw IoError(IoErrorCode::open_failed, "cannot open " + path.string() + ".json");
  out << sidecar.dump(2) << "\n";
}

TrainState load_train_state(const std::filesystem::path& path, RunConfig& cfg_out) {
  const NamedTensors records = load_records(path);
  const auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : records)
      if (n == name) return t;
    throw IoError(IoErrorCode::bad_header, "checkpoint missing record " + name);
  };

  TrainState state;
  state.params.kernels0 = find("kernels0");
  state.params.update_weight = find("update_weight");
  state.params.update_bias = find("update_bias");
  state.params.cls_weight = find("cls_weight");
  state.params.cls_bias = find("cls_bias").values()[0];
  state.params.seed_proj_weight = find("seed_proj_weight");
  state.params.seed_proj_bias = find("seed_proj_bias");
  state.velocity.kernels0 = find("m_kernels0");
  state.velocity.update_weight = find("m_update_weight");
  state.velocity.update_bias = find("m_update_bias");
  state.velocity.cls_weight = find("m_cls_weight");
  state.velocity.cls_bias = find("m_cls_bias").values()[0];
  state.velocity.seed_proj_weight = find("m_seed_proj_weight");
  state.velocity.seed_proj_bias = find("m_seed_proj_bias");
  state.feature_lift = find("feature_lift");
  state.step = static_cast<long>(find("step").values()[0]);

  std::ifstream in(path.string() + ".json");
  if (!in)
    throw IoError(IoErrorCode::open_failed, "cannot open " + path.string() + ".json");
  json sidecar;
  try {
    in >> sidecar;
  } catch (const json::exception& e) {
    throw IoError(IoErrorCode::bad_header, std::string("sidecar: ") + e.what());
  }
  cfg_out = parse_run_config(sidecar.at("config").dump());
  state.seed = cfg_out.seed;
  return state;
}

}  // namespace sp
