#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "hvx/fusion.hpp"
#include "hvx/scenegen.hpp"
#include "hvx/voxgrid.hpp"

namespace hvx::io {

// generic JSON file plumbing
nlohmann::json load_json(const std::string& path);
void save_json(const std::string& path, const nlohmann::json& j, int indent = 2);

// --- sparse grids ---------------------------------------------------------
// JSON: {stride, voxel_size, origin, coords: [[i,j,k],...], features: [[...],...]}
nlohmann::json grid_to_json(const vox::SparseVoxelGrid& g);
vox::SparseVoxelGrid grid_from_json(const nlohmann::json& j);
void save_grid_json(const std::string& path, const vox::SparseVoxelGrid& g);
vox::SparseVoxelGrid load_grid_json(const std::string& path);

// Binary sibling format ("HVGX", u32 version=1, u32 count, u32 dim, then
// count x 3 little-endian i32 coords and count x dim little-endian f64
// features). Carries bulk data only; stride/voxel_size/origin keep their
// defaults on load.
void save_grid_binary(const std::string& path, const vox::SparseVoxelGrid& g);
vox::SparseVoxelGrid load_grid_binary(const std::string& path);

// ASCII point cloud of voxel centers with a per-voxel scalar score.
void save_ply(const std::string& path, const vox::SparseVoxelGrid& g,
              const Eigen::VectorXd& scores);

// --- MLPs ------------------------------------------------------------------
nlohmann::json mlp_to_json(const fusion::Mlp& mlp);
fusion::Mlp mlp_from_json(const nlohmann::json& j);

// --- scenes ----------------------------------------------------------------
nlohmann::json scene_to_json(const scenegen::SyntheticScene& scene);
scenegen::SyntheticScene scene_from_json(const nlohmann::json& j);
void save_scene(const std::string& path, const scenegen::SyntheticScene& scene);
scenegen::SyntheticScene load_scene(const std::string& path);

// --- helpers (exposed for tests) -------------------------------------------
std::string base64_encode(const std::uint8_t* data, std::size_t len);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// Per-row run lengths, alternating values starting with a zero run (a row
// that begins with foreground starts with a zero-length run). Runs in each
// row sum to the mask width.
std::vector<std::vector<int>> rle_encode_rows(const vox::ForegroundMask& mask);
vox::ForegroundMask rle_decode_rows(int width, int height,
                                    const std::vector<std::vector<int>>& rows);

}  // namespace hvx::io
