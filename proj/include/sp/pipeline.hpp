#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sp/evaluation.hpp"
#include "sp/head.hpp"
#include "sp/proposal.hpp"
#include "sp/tensor.hpp"

namespace sp {

// ---------------------------------------------------------------------------
// Synthetic scenes

// A blob plants the constant feature vector bias + amplitude * e_channel
// over its pixels. Distinct channels make blob signatures orthogonal, the
// desk-scale analogue of objects that a trained backbone separates.
struct SceneBlob {
  int shape = 0;  // 0 = rectangle, 1 = ellipse
  int cx = 0, cy = 0;
  int rx = 0, ry = 0;  // half extents; a rect covers (2rx+1)×(2ry+1) pixels
  int channel = 0;
  double amplitude = 1.0;
};

struct SceneSpec {
  int h = 48;
  int w = 48;
  int depth = 9;  // feature channels
  int min_blobs = 2;
  int max_blobs = 4;
  // When non-empty the blobs are used verbatim and only the background noise
  // consumes randomness.
  std::vector<SceneBlob> blobs;
};

// Scenes are feature-space tensors: the stand-in for a frozen backbone's
// output on an unlabeled image.
struct SyntheticScene {
  Tensor features;  // depth×H×W
  std::vector<Tensor> gt_masks;
  std::vector<Box> gt_boxes;
};

// Disjoint constant-signature blobs (2px minimum gap) over a small uniform
// bias field with background noise. Fully determined by (spec, seed); see
// README for the exact draw order.
SyntheticScene make_synthetic_scene(const SceneSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Features

// Fixed filter bank over a 3×H×W image: R, G, B, luminance gradients gx/gy
// (central differences, replicated border), and local luminance contrast
// (box mean minus the image mean) plus variance over 3×3 and 5×5 boxes.
// 9 channels, same spatial extent as the input.
inline constexpr std::size_t kFilterBankChannels = 9;
Tensor toy_feature_extractor(const Tensor& rgb);

// Frozen per-pixel linear map from the D extractor channels to the C head
// channels (the stand-in for a frozen feature pyramid). Seeded uniform in
// (-1/sqrt(D), 1/sqrt(D)).
Tensor make_feature_lift(std::size_t channels, std::size_t feat_channels,
                         std::uint64_t seed);
Tensor apply_feature_lift(const Tensor& lift, const Tensor& feat_dhw);

// ---------------------------------------------------------------------------
// Datasets

struct DatasetSpec {
  std::string type = "synthetic";  // synthetic | images | tensors
  int count = 20;
  int h = 48, w = 48;
  int depth = 9;
  int min_blobs = 2, max_blobs = 4;
  std::uint64_t seed = 1;
  std::vector<std::string> paths;  // images/tensors types
};

struct DatasetItem {
  std::string id;
  Tensor features;  // D×H×W
  std::vector<Tensor> gt_masks;
  std::vector<Box> gt_boxes;
  bool has_gt = false;
};

std::vector<DatasetItem> load_dataset(const DatasetSpec& spec);

// ---------------------------------------------------------------------------
// Run configuration

enum class LabelSource { saliency, random, external_manifest };
enum class AssignStrategy { cosine, sequential, random, none };

std::string to_string(LabelSource s);
std::string to_string(AssignStrategy s);
LabelSource label_source_from_string(const std::string& s);
AssignStrategy assign_strategy_from_string(const std::string& s);

struct RunConfig {
  int n_kernels = 100;
  int channels = 16;
  int feat_channels = static_cast<int>(kFilterBankChannels);
  int stages = 2;
  ProposalConfig proposal;
  LossWeights loss;
  double lr = 0.05;
  double momentum = 0.9;
  int steps = 200;
  std::uint64_t seed = 1;
  LabelSource label_source = LabelSource::saliency;
  AssignStrategy assignment = AssignStrategy::cosine;
  DatasetSpec dataset;
  std::string manifest_dir;           // label_source = external-manifest
  int random_proposal_count = 4;      // label_source = random
  std::string assignment_dump_dir;    // optional per-step assignment dumps
};

// Throws ConfigError on inconsistent settings.
void validate_run_config(const RunConfig& cfg);

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);

DatasetSpec parse_dataset_spec(const std::string& json_text);
DatasetSpec load_dataset_spec(const std::filesystem::path& path);

SceneSpec load_scene_spec(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Training

struct TrainState {
  HeadParams params;
  HeadGrads velocity;
  Tensor feature_lift;  // C×D, frozen
  std::uint64_t seed = 0;
  long step = 0;
};

TrainState init_train_state(const RunConfig& cfg);

struct StepLog {
  long step = 0;
  std::string image_id;
  LossBreakdown loss;
};

struct PretrainResult {
  TrainState state;
  std::vector<StepLog> log;
};

// One optimizer step per image (round-robin): features → proposals → prompts
// → assignment → inject → forward → match → loss → backward → SGD.
// Deterministic given (cfg, dataset); throws NumericError on non-finite loss.
PretrainResult pretrain(const RunConfig& cfg, const std::vector<DatasetItem>& dataset);

// One .jsonl line per step, stable across identical runs.
std::string step_log_to_jsonl(const std::vector<StepLog>& log);

// ---------------------------------------------------------------------------
// Evaluation / export

struct EvalReport {
  ApResult ap;
  std::size_t n_images = 0;
  std::size_t n_gt = 0;
  std::size_t n_predictions = 0;
};

// Inference mirrors pre-training (saliency prompts injected under the
// configured strategy): final masks binarized at 0.5 become box predictions
// scored by the foreground probability, measured against scene ground truth.
EvalReport evaluate(const TrainState& state, const RunConfig& cfg,
                    const std::vector<DatasetItem>& dataset);
std::string eval_report_to_json(const EvalReport& report);

// Per-kernel average of final-stage masks over the dataset under the same
// inference path, for heatmap export.
Tensor heatmap_over_dataset(const TrainState& state, const RunConfig& cfg,
                            const std::vector<DatasetItem>& dataset,
                            double activation_threshold = 0.0);

// Binary records + "<path>.json" sidecar with the config echo and step.
void save_train_state(const std::filesystem::path& path, const TrainState& state,
                      const RunConfig& cfg);
TrainState load_train_state(const std::filesystem::path& path, RunConfig& cfg_out);

}  // namespace sp
