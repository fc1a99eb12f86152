#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sp/proposal.hpp"

namespace sp {

// One proposal manifest per image: id, extent, the generating config, and the
// proposals with masks as run-length counts (see rle_encode).
struct ProposalManifest {
  std::string image_id;
  std::size_t h = 0;
  std::size_t w = 0;
  ProposalConfig config;
  std::vector<MaskProposal> proposals;
};

void write_manifest(const std::filesystem::path& path, const ProposalManifest& m);
ProposalManifest read_manifest(const std::filesystem::path& path);

// Optional per-mask PGM dump for eyeballing: <dir>/<image_id>_mask_<k>.pgm.
void export_mask_pgms(const std::filesystem::path& dir, const ProposalManifest& m);

}  // namespace sp
