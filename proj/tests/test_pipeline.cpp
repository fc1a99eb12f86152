#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "sp/errors.hpp"
#include "sp/image_io.hpp"
#include "sp/manifest.hpp"
#include "sp/pipeline.hpp"
#include "sp/rng.hpp"
#include "sp/tensor_io.hpp"

using sp::RunConfig;
using sp::SceneSpec;
using sp::Tensor;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::create_directories(dir);
  return dir;
}

RunConfig small_config() {
  RunConfig cfg;
  cfg.n_kernels = 8;
  cfg.channels = 8;
  cfg.stages = 2;
  cfg.lr = 0.02;
  cfg.momentum = 0.9;
  cfg.steps = 8;
  cfg.seed = 5;
  cfg.dataset.type = "synthetic";
  cfg.dataset.count = 4;
  cfg.dataset.h = 32;
  cfg.dataset.w = 32;
  cfg.dataset.seed = 900;
  return cfg;
}

bool params_equal(const sp::HeadParams& a, const sp::HeadParams& b) {
  const auto eq = [](const Tensor& x, const Tensor& y) {
    return x.shape() == y.shape() &&
           std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
  };
  return eq(a.kernels0, b.kernels0) && eq(a.update_weight, b.update_weight) &&
         eq(a.update_bias, b.update_bias) && eq(a.cls_weight, b.cls_weight) &&
         a.cls_bias == b.cls_bias && eq(a.seed_proj_weight, b.seed_proj_weight) &&
         eq(a.seed_proj_bias, b.seed_proj_bias);
}

}  // namespace

TEST_CASE("toy_feature_extractor: constant image kills gradients and variance") {
  Tensor rgb({3, 8, 8});
  for (auto& v : rgb.values()) v = 0.4;
  const Tensor feat = sp::toy_feature_extractor(rgb);
  REQUIRE(feat.shape() == std::vector<std::size_t>{9, 8, 8});
  for (double v : feat.plane(3)) CHECK(v == 0.0);  // gx
  for (double v : feat.plane(4)) CHECK(v == 0.0);  // gy
  for (double v : feat.plane(6)) CHECK(v == doctest::Approx(0.0));  // var3
  for (double v : feat.plane(8)) CHECK(v == doctest::Approx(0.0));  // var5
  // Local contrast vanishes on a flat image.
  for (double v : feat.plane(5)) CHECK(v == doctest::Approx(0.0));
  for (double v : feat.plane(7)) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("toy_feature_extractor: vertical step edge confines gx to the edge band") {
  Tensor rgb({3, 6, 8});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 8; ++x) rgb(c, y, x) = x < 4 ? 0.1 : 0.9;
  const Tensor feat = sp::toy_feature_extractor(rgb);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      const double gx = feat(3, y, x);
      if (x == 3 || x == 4) {
        CHECK(gx == doctest::Approx(0.4));  // (0.9-0.1)/2
      } else {
        CHECK(gx == doctest::Approx(0.0));
      }
      CHECK(feat(4, y, x) == doctest::Approx(0.0));  // no vertical change
    }

  // Same image twice gives identical features.
  const Tensor again = sp::toy_feature_extractor(rgb);
  CHECK(again.values() == feat.values());
}

TEST_CASE("make_synthetic_scene: determinism, disjointness, explicit areas") {
  SceneSpec spec;
  const auto a = sp::make_synthetic_scene(spec, 44);
  const auto b = sp::make_synthetic_scene(spec, 44);
  CHECK(a.features.values() == b.features.values());
  REQUIRE(a.gt_masks.size() == b.gt_masks.size());
  CHECK(a.gt_masks.size() >= 2);
  CHECK(a.gt_masks.size() <= 4);
  REQUIRE(a.features.shape() == std::vector<std::size_t>{9, 48, 48});

  // Pairwise disjoint masks.
  for (std::size_t i = 0; i < a.gt_masks.size(); ++i)
    for (std::size_t j = i + 1; j < a.gt_masks.size(); ++j)
      for (std::size_t k = 0; k < a.gt_masks[i].size(); ++k)
        CHECK(a.gt_masks[i].values()[k] * a.gt_masks[j].values()[k] == 0.0);

  // Every blob carries one constant feature signature, and signatures differ
  // between blobs.
  std::vector<std::vector<double>> signatures;
  for (const auto& mask : a.gt_masks) {
    std::vector<double> sig;
    for (std::size_t y = 0; y < 48; ++y)
      for (std::size_t x = 0; x < 48; ++x)
        if (mask(y, x) != 0.0) {
          std::vector<double> v(9);
          for (std::size_t c = 0; c < 9; ++c) v[c] = a.features(c, y, x);
          if (sig.empty()) {
            sig = v;
          } else {
            CHECK(v == sig);
          }
        }
    REQUIRE(!sig.empty());
    for (const auto& other : signatures) CHECK(sig != other);
    signatures.push_back(std::move(sig));
  }

  // Explicit zero-blob spec: empty ground truth.
  SceneSpec none;
  none.min_blobs = 0;
  none.max_blobs = 0;
  CHECK(sp::make_synthetic_scene(none, 1).gt_masks.empty());

  // Explicit rectangle: area is exact.
  SceneSpec fixed;
  fixed.h = 30;
  fixed.w = 30;
  fixed.blobs = {{0, 10, 12, 4, 3, 2, 1.0}};
  const auto scene = sp::make_synthetic_scene(fixed, 2);
  REQUIRE(scene.gt_masks.size() == 1);
  CHECK(sp::mask_area(scene.gt_masks[0]) == (2 * 4 + 1) * (2 * 3 + 1));
}

TEST_CASE("feature lift: deterministic and channel-correct") {
  const Tensor lift = sp::make_feature_lift(6, 9, 77);
  const Tensor lift2 = sp::make_feature_lift(6, 9, 77);
  CHECK(lift.values() == lift2.values());
  REQUIRE(lift.shape() == std::vector<std::size_t>{6, 9});

  sp::SceneSpec spec;
  const Tensor x = sp::make_synthetic_scene(spec, 3).features;
  const Tensor f = sp::apply_feature_lift(lift, x);
  REQUIRE(f.shape() == std::vector<std::size_t>{6, x.dim(1), x.dim(2)});
  // Spot-check one output value.
  double expected = 0.0;
  for (std::size_t d = 0; d < 9; ++d) expected += lift(2, d) * x(d, 5, 7);
  CHECK(f(2, 5, 7) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("pgm/ppm round trip") {
  const auto dir = temp_dir("sp_img");
  Tensor gray({4, 5});
  for (std::size_t i = 0; i < gray.size(); ++i)
    gray.values()[i] = static_cast<double>(i) / 19.0;
  sp::write_pgm(dir / "g.pgm", gray);
  const Tensor back = sp::read_pgm(dir / "g.pgm");
  REQUIRE(back.shape() == gray.shape());
  for (std::size_t i = 0; i < gray.size(); ++i)
    CHECK(back.values()[i] == doctest::Approx(gray.values()[i]).epsilon(1.0 / 255.0));

  Tensor color({3, 6, 6});
  sp::SplitMix64 rng(91);
  for (auto& v : color.values()) v = rng.next_double();
  sp::write_ppm(dir / "s.ppm", color);
  const Tensor rgb = sp::read_ppm(dir / "s.ppm");
  REQUIRE(rgb.shape() == color.shape());
  for (std::size_t i = 0; i < rgb.size(); ++i)
    CHECK(rgb.values()[i] == doctest::Approx(color.values()[i]).epsilon(1.0 / 255.0));
}

TEST_CASE("manifest: write/read round trip preserves everything") {
  sp::SceneSpec spec;
  const Tensor x = sp::make_synthetic_scene(spec, 15).features;
  sp::ProposalManifest m;
  m.image_id = "fixture";
  m.h = x.dim(1);
  m.w = x.dim(2);
  m.proposals = sp::propose_masks(x, m.config);

  const auto dir = temp_dir("sp_manifest");
  sp::write_manifest(dir / "fixture.json", m);
  const auto back = sp::read_manifest(dir / "fixture.json");
  CHECK(back.image_id == m.image_id);
  CHECK(back.h == m.h);
  CHECK(back.w == m.w);
  REQUIRE(back.proposals.size() == m.proposals.size());
  for (std::size_t i = 0; i < m.proposals.size(); ++i) {
    CHECK(back.proposals[i].mask.values() == m.proposals[i].mask.values());
    CHECK(back.proposals[i].box == m.proposals[i].box);
    CHECK(back.proposals[i].score == m.proposals[i].score);  // bit-exact JSON
    CHECK(back.proposals[i].seed_index == m.proposals[i].seed_index);
  }
}

TEST_CASE("run config: JSON round trip and validation errors") {
  RunConfig cfg = small_config();
  cfg.label_source = sp::LabelSource::random;
  cfg.assignment = sp::AssignStrategy::sequential;
  const RunConfig back = sp::parse_run_config(sp::run_config_to_json(cfg));
  CHECK(back.n_kernels == cfg.n_kernels);
  CHECK(back.lr == cfg.lr);
  CHECK(back.label_source == cfg.label_source);
  CHECK(back.assignment == cfg.assignment);
  CHECK(back.dataset.count == cfg.dataset.count);

  CHECK_THROWS_AS(sp::parse_run_config("{not json"), sp::ConfigError);
  CHECK_THROWS_AS(sp::parse_run_config("{\"n_kernels\": 0}"), sp::ConfigError);
  CHECK_THROWS_AS(
      sp::parse_run_config("{\"label_source\": \"external-manifest\"}"),
      sp::ConfigError);
  CHECK_THROWS_AS(sp::parse_run_config("{\"feat_channels\": 5}"), sp::ConfigError);
}

TEST_CASE("pretrain: zero steps returns the seeded initialization") {
  RunConfig cfg = small_config();
  cfg.steps = 0;
  const auto dataset = sp::load_dataset(cfg.dataset);
  const auto result = sp::pretrain(cfg, dataset);
  CHECK(result.log.empty());
  CHECK(params_equal(result.state.params, sp::init_train_state(cfg).params));
}

TEST_CASE("pretrain: identical config and seed give bit-identical runs") {
  const RunConfig cfg = small_config();
  const auto dataset = sp::load_dataset(cfg.dataset);
  const auto a = sp::pretrain(cfg, dataset);
  const auto b = sp::pretrain(cfg, dataset);
  CHECK(sp::step_log_to_jsonl(a.log) == sp::step_log_to_jsonl(b.log));
  CHECK(params_equal(a.state.params, b.state.params));
}

TEST_CASE("pretrain: assignment strategy is inert on prompt-free images") {
  // All-zero feature tensors produce no proposals, so with the kernel term
  // silenced the strategy must not affect the trajectory.
  const auto dir = temp_dir("sp_zero_feats");
  for (int i = 0; i < 2; ++i)
    sp::write_tensor(dir / ("z" + std::to_string(i) + ".spt"), Tensor({9, 16, 16}));

  RunConfig cfg = small_config();
  cfg.dataset.type = "tensors";
  cfg.dataset.paths = {(dir / "z0.spt").string(), (dir / "z1.spt").string()};
  cfg.loss.ker = 0.0;
  cfg.steps = 4;

  cfg.assignment = sp::AssignStrategy::none;
  const auto none_run = sp::pretrain(cfg, sp::load_dataset(cfg.dataset));
  cfg.assignment = sp::AssignStrategy::cosine;
  const auto cos_run = sp::pretrain(cfg, sp::load_dataset(cfg.dataset));
  CHECK(sp::step_log_to_jsonl(none_run.log) == sp::step_log_to_jsonl(cos_run.log));
  CHECK(params_equal(none_run.state.params, cos_run.state.params));
}

TEST_CASE("pretrain: external manifests reproduce the in-process trajectory") {
  RunConfig cfg = small_config();
  cfg.steps = 6;
  const auto dataset = sp::load_dataset(cfg.dataset);

  const auto dir = temp_dir("sp_manifests");
  for (const auto& item : dataset) {
    sp::ProposalManifest m;
    m.image_id = item.id;
    m.h = item.features.dim(1);
    m.w = item.features.dim(2);
    m.config = cfg.proposal;
    m.proposals = sp::propose_masks(item.features, cfg.proposal);
    sp::write_manifest(dir / (item.id + ".json"), m);
  }

  cfg.label_source = sp::LabelSource::saliency;
  const auto in_process = sp::pretrain(cfg, dataset);

  cfg.label_source = sp::LabelSource::external_manifest;
  cfg.manifest_dir = dir.string();
  const auto external = sp::pretrain(cfg, dataset);

  CHECK(sp::step_log_to_jsonl(in_process.log) == sp::step_log_to_jsonl(external.log));
  CHECK(params_equal(in_process.state.params, external.state.params));
}

TEST_CASE("pretrain: more proposals than kernels is a config error") {
  RunConfig cfg = small_config();
  cfg.n_kernels = 1;
  cfg.steps = 1;
  cfg.dataset.h = 48;  // room for several blobs, so proposals outnumber kernels
  cfg.dataset.w = 48;
  cfg.dataset.min_blobs = 3;
  const auto dataset = sp::load_dataset(cfg.dataset);
  CHECK_THROWS_AS(sp::pretrain(cfg, dataset), sp::ConfigError);
}

TEST_CASE("pretrain: assignment dumps are written when requested") {
  RunConfig cfg = small_config();
  cfg.steps = 2;
  cfg.assignment_dump_dir = (temp_dir("sp_dumps") / "run").string();
  const auto dataset = sp::load_dataset(cfg.dataset);
  sp::pretrain(cfg, dataset);
  CHECK(fs::exists(fs::path(cfg.assignment_dump_dir) / "step_0.json"));
  CHECK(fs::exists(fs::path(cfg.assignment_dump_dir) / "step_1.json"));
}

TEST_CASE("train state: save/load round trip is bit-exact") {
  RunConfig cfg = small_config();
  const auto dataset = sp::load_dataset(cfg.dataset);
  const auto result = sp::pretrain(cfg, dataset);

  const auto dir = temp_dir("sp_ckpt");
  const auto path = dir / "model.spck";
  sp::save_train_state(path, result.state, cfg);

  RunConfig loaded_cfg;
  const sp::TrainState loaded = sp::load_train_state(path, loaded_cfg);
  CHECK(params_equal(loaded.params, result.state.params));
  CHECK(loaded.step == result.state.step);
  CHECK(loaded.feature_lift.values() == result.state.feature_lift.values());
  CHECK(loaded_cfg.seed == cfg.seed);
  CHECK(loaded_cfg.steps == cfg.steps);

  // Saving the loaded state reproduces the original file byte for byte.
  const auto path2 = dir / "model2.spck";
  sp::save_train_state(path2, loaded, loaded_cfg);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string bytes1((std::istreambuf_iterator<char>(f1)),
                           std::istreambuf_iterator<char>());
  const std::string bytes2((std::istreambuf_iterator<char>(f2)),
                           std::istreambuf_iterator<char>());
  CHECK(bytes1 == bytes2);
}

TEST_CASE("evaluate: reports AP and counts on ground-truth scenes") {
  RunConfig cfg = small_config();
  cfg.steps = 4;
  const auto dataset = sp::load_dataset(cfg.dataset);
  const auto result = sp::pretrain(cfg, dataset);
  const auto report = sp::evaluate(result.state, cfg, dataset);
  CHECK(report.n_images == dataset.size());
  CHECK(report.n_gt > 0);
  REQUIRE(report.ap.ap50.has_value());
  CHECK(*report.ap.ap50 >= 0.0);
  CHECK(*report.ap.ap50 <= 1.0);

  const std::string json_text = sp::eval_report_to_json(report);
  CHECK(json_text.find("ap50") != std::string::npos);

  // Datasets without ground truth are rejected.
  std::vector<sp::DatasetItem> no_gt = dataset;
  for (auto& item : no_gt) item.has_gt = false;
  CHECK_THROWS_AS(sp::evaluate(result.state, cfg, no_gt), sp::ConfigError);
}

TEST_CASE("heatmap_over_dataset: contract shape and range") {
  RunConfig cfg = small_config();
  cfg.steps = 2;
  const auto dataset = sp::load_dataset(cfg.dataset);
  const auto result = sp::pretrain(cfg, dataset);
  const Tensor heat = sp::heatmap_over_dataset(result.state, cfg, dataset);
  CHECK(heat.shape() ==
        std::vector<std::size_t>{static_cast<std::size_t>(cfg.n_kernels), 200, 200});
  for (double v : heat.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}
