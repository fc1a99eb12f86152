// Command-line front end: feature extraction, mask proposal generation,
// pre-training, evaluation, and kernel heatmap export.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric
// failure (non-finite loss).

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sp/errors.hpp"
#include "sp/image_io.hpp"
#include "sp/manifest.hpp"
#include "sp/pipeline.hpp"
#include "sp/tensor_io.hpp"

namespace {

namespace fs = std::filesystem;

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

// PPM/PGM images run through the filter bank; scene specs already live in
// feature space.
sp::Tensor features_for_input(const std::string& input) {
  const std::string ext = fs::path(input).extension().string();
  if (ext == ".ppm") return sp::toy_feature_extractor(sp::read_ppm(input));
  if (ext == ".pgm") {
    const sp::Tensor gray = sp::read_pgm(input);
    sp::Tensor rgb({3, gray.dim(0), gray.dim(1)});
    for (std::size_t c = 0; c < 3; ++c)
      std::copy(gray.values().begin(), gray.values().end(), rgb.plane(c).begin());
    return sp::toy_feature_extractor(rgb);
  }
  if (ext == ".json") {
    const sp::SceneSpec spec = sp::load_scene_spec(input);
    std::ifstream in(input);
    nlohmann::json j;
    in >> j;
    const std::uint64_t seed = j.value("seed", std::uint64_t{0});
    return sp::make_synthetic_scene(spec, seed).features;
  }
  throw sp::ConfigError("unsupported input '" + input +
                        "' (expected .ppm, .pgm or scene .json)");
}

int run(int argc, char** argv) {
  CLI::App app{"saliency-prompt pre-training toolkit"};
  app.require_subcommand(1);

  // extract-features
  auto* extract = app.add_subcommand(
      "extract-features", "Produce the feature tensor for an image or scene spec");
  std::string ex_input, ex_output;
  extract->add_option("input", ex_input, "PPM/PGM image or scene-spec JSON")->required();
  extract->add_option("-o,--output", ex_output, "output tensor file")->required();
  extract->callback([&] { sp::write_tensor(ex_output, features_for_input(ex_input)); });

  // propose-masks
  auto* propose = app.add_subcommand("propose-masks",
                                     "Generate saliency mask proposals from features");
  std::string pr_input, pr_output, pr_image_id, pr_pgm_dir;
  sp::ProposalConfig pr_cfg;
  propose->add_option("features", pr_input, "feature tensor (D×H×W)")->required();
  propose->add_option("-o,--output", pr_output, "output manifest JSON")->required();
  propose->add_option("--image-id", pr_image_id, "image id recorded in the manifest");
  propose->add_option("--grid-h", pr_cfg.grid_h, "seed grid rows");
  propose->add_option("--grid-w", pr_cfg.grid_w, "seed grid cols");
  propose->add_option("--binarize-threshold", pr_cfg.binarize_threshold, "");
  propose->add_option("--nms-iou-threshold", pr_cfg.nms_iou_threshold, "");
  propose->add_option("--min-area-fraction", pr_cfg.min_area_fraction, "");
  propose->add_option("--pgm-dir", pr_pgm_dir, "also dump per-mask PGMs here");
  propose->callback([&] {
    const sp::Tensor features = sp::read_tensor(pr_input);
    if (features.rank() != 3)
      throw sp::ConfigError("features must be a rank-3 tensor");
    sp::ProposalManifest manifest;
    manifest.image_id =
        pr_image_id.empty() ? fs::path(pr_input).stem().string() : pr_image_id;
    manifest.h = features.dim(1);
    manifest.w = features.dim(2);
    manifest.config = pr_cfg;
    manifest.proposals = sp::propose_masks(features, pr_cfg);
    sp::write_manifest(pr_output, manifest);
    if (!pr_pgm_dir.empty()) sp::export_mask_pgms(pr_pgm_dir, manifest);
    std::cerr << manifest.proposals.size() << " proposals -> " << pr_output << "\n";
  });

  // pretrain
  auto* train = app.add_subcommand("pretrain", "Run the pre-training loop");
  std::string tr_config, tr_output, tr_log;
  train->add_option("-c,--config", tr_config, "run config JSON")->required();
  train->add_option("-o,--output", tr_output, "output checkpoint")->required();
  train->add_option("--log", tr_log, "loss log path (default <output>.log.jsonl)");
  train->callback([&] {
    const sp::RunConfig cfg = sp::load_run_config(tr_config);
    const auto dataset = sp::load_dataset(cfg.dataset);
    const sp::PretrainResult result = sp::pretrain(cfg, dataset);
    sp::save_train_state(tr_output, result.state, cfg);
    const std::string log_path = tr_log.empty() ? tr_output + ".log.jsonl" : tr_log;
    std::ofstream log(log_path);
    if (!log)
      throw sp::IoError(sp::IoErrorCode::open_failed, "cannot open " + log_path);
    log << sp::step_log_to_jsonl(result.log);
    if (!result.log.empty())
      std::cerr << "step 0 total " << result.log.front().loss.total << ", step "
                << result.log.back().step << " total "
                << result.log.back().loss.total << "\n";
    std::cerr << "checkpoint -> " << tr_output << "\n";
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Class-agnostic detection metrics");
  std::string ev_ckpt, ev_dataset, ev_output;
  eval_cmd->add_option("-k,--checkpoint", ev_ckpt, "")->required();
  eval_cmd->add_option("-d,--dataset", ev_dataset, "dataset spec JSON")->required();
  eval_cmd->add_option("-o,--output", ev_output, "report JSON")->required();
  eval_cmd->callback([&] {
    sp::RunConfig cfg;
    const sp::TrainState state = sp::load_train_state(ev_ckpt, cfg);
    const auto dataset = sp::load_dataset(sp::load_dataset_spec(ev_dataset));
    const sp::EvalReport report = sp::evaluate(state, cfg, dataset);
    std::ofstream out(ev_output);
    if (!out)
      throw sp::IoError(sp::IoErrorCode::open_failed, "cannot open " + ev_output);
    out << sp::eval_report_to_json(report) << "\n";
    std::cerr << "report -> " << ev_output << "\n";
  });

  // export-heatmap
  auto* heat = app.add_subcommand("export-heatmap",
                                  "Average kernel activations over a dataset");
  std::string hm_ckpt, hm_dataset, hm_dir;
  double hm_threshold = 0.0;
  heat->add_option("-k,--checkpoint", hm_ckpt, "")->required();
  heat->add_option("-d,--dataset", hm_dataset, "dataset spec JSON")->required();
  heat->add_option("-o,--output", hm_dir, "output directory")->required();
  heat->add_option("--threshold", hm_threshold,
                   "binarize activations at this value before averaging");
  heat->callback([&] {
    sp::RunConfig cfg;
    const sp::TrainState state = sp::load_train_state(hm_ckpt, cfg);
    const auto dataset = sp::load_dataset(sp::load_dataset_spec(hm_dataset));
    const sp::Tensor heatmap =
        sp::heatmap_over_dataset(state, cfg, dataset, hm_threshold);
    fs::create_directories(hm_dir);
    sp::write_tensor(fs::path(hm_dir) / "heatmap.spt", heatmap);
    for (std::size_t kn = 0; kn < heatmap.dim(0); ++kn) {
      sp::Tensor img({heatmap.dim(1), heatmap.dim(2)});
      const auto src = heatmap.plane(kn);
      std::copy(src.begin(), src.end(), img.values().begin());
      char name[32];
      std::snprintf(name, sizeof(name), "kernel_%03zu.pgm", kn);
      sp::write_pgm(fs::path(hm_dir) / name, img);
    }
    std::cerr << heatmap.dim(0) << " heatmaps -> " << hm_dir << "\n";
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const sp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sp::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const sp::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
