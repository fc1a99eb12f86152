#include "sp/manifest.hpp"

#include <fstream>

#include <json.hpp>

#include "sp/errors.hpp"
#include "sp/image_io.hpp"
#include "sp/mask_ops.hpp"

namespace sp {

using nlohmann::json;

namespace {

json config_to_json(const ProposalConfig& cfg) {
  return json{{"grid_h", cfg.grid_h},
              {"grid_w", cfg.grid_w},
              {"binarize_threshold", cfg.binarize_threshold},
              {"nms_iou_threshold", cfg.nms_iou_threshold},
              {"min_area_fraction", cfg.min_area_fraction}};
}

ProposalConfig config_from_json(const json& j) {
  ProposalConfig cfg;
  cfg.grid_h = j.at("grid_h").get<int>();
  cfg.grid_w = j.at("grid_w").get<int>();
  cfg.binarize_threshold = j.at("binarize_threshold").get<double>();
  cfg.nms_iou_threshold = j.at("nms_iou_threshold").get<double>();
  cfg.min_area_fraction = j.at("min_area_fraction").get<double>();
  return cfg;
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const ProposalManifest& m) {
  json doc;
  doc["image_id"] = m.image_id;
  doc["h"] = m.h;
  doc["w"] = m.w;
  doc["config"] = config_to_json(m.config);
  doc["proposals"] = json::array();
  for (const auto& p : m.proposals) {
    doc["proposals"].push_back(
        {{"seed_index", p.seed_index},
         {"score", p.score},
         {"box", {p.box.x0, p.box.y0, p.box.x1, p.box.y1}},
         {"mask_rle", rle_encode(p.mask)}});
  }
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  out << doc.dump(2) << "\n";
  if (!out) throw IoError(IoErrorCode::write_failed, "manifest write failed");
}

ProposalManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorCode::open_failed, "cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw IoError(IoErrorCode::bad_header, "manifest parse error: " + std::string(e.what()));
  }
  try {
    ProposalManifest m;
    m.image_id = doc.at("image_id").get<std::string>();
    m.h = doc.at("h").get<std::size_t>();
    m.w = doc.at("w").get<std::size_t>();
    m.config = config_from_json(doc.at("config"));
    for (const auto& jp : doc.at("proposals")) {
      MaskProposal p;
      p.seed_index = jp.at("seed_index").get<int>();
      p.score = jp.at("score").get<double>();
      const auto& b = jp.at("box");
      p.box = Box{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                  b.at(3).get<int>()};
      p.mask = rle_decode(jp.at("mask_rle").get<std::vector<std::uint32_t>>(), m.h, m.w);
      m.proposals.push_back(std::move(p));
    }
    return m;
  } catch (const json::exception& e) {
    throw IoError(IoErrorCode::bad_header, "manifest schema error: " + std::string(e.what()));
  }
}

void export_mask_pgms(const std::filesystem::path& dir, const ProposalManifest& m) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < m.proposals.size(); ++k) {
    const auto name = m.image_id + "_mask_" + std::to_string(k) + ".pgm";
    write_pgm(dir / name, m.proposals[k].mask);
  }
}

}  // namespace sp
