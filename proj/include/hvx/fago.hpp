#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "hvx/voxgrid.hpp"

namespace hvx::fago {

// Oriented box: full extents, rotation about +z by yaw.
struct Box3D {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    Eigen::Vector3d size = Eigen::Vector3d::Ones();
    double yaw = 0.0;

    void validate() const;
    double volume() const { return size.x() * size.y() * size.z(); }
    bool contains(const Eigen::Vector3d& p) const;
    // corners in a fixed order (z-minor, y-mid, x-major bit pattern)
    std::array<Eigen::Vector3d, 8> corners() const;
};

struct LabelResult {
    std::vector<std::uint8_t> labels;  // 1 if the voxel center lies in any box
    std::vector<int> box_index;        // smallest-volume containing box, -1 if none
};

LabelResult label_foreground(const vox::SparseVoxelGrid& grid, std::span<const Box3D> boxes);

struct FocalResult {
    double loss = 0.0;
    Eigen::VectorXd grad;  // d loss / d score, zero where the clamp saturates
};

// Binary focal objective over per-voxel scores in (0, 1):
//   s_i = score_i when the label is 1, else 1 - score_i
//   loss = -(1 / (batch * M)) * sum_i alpha * (1 - s_i)^gamma * log(s_i)
// Scores are clamped to [1e-7, 1 - 1e-7] before the log.
FocalResult focal_importance_loss(const Eigen::VectorXd& scores,
                                  const std::vector<std::uint8_t>& labels, double alpha,
                                  int batch_size, double gamma = 1.0);

struct TopkResult {
    vox::SparseVoxelGrid grid;            // kept voxels, highest score first
    std::vector<std::size_t> indices;     // row in the input grid for each kept voxel
    Eigen::VectorXd scores;               // kept scores, descending
};

// Keep the k best-scoring voxels (all of them if the grid has fewer).
// Ordering is by score descending with lexicographic coordinate tie-break.
TopkResult topk_filter(const vox::SparseVoxelGrid& grid, const Eigen::VectorXd& scores, int k);

struct VoteResult {
    double loss = 0.0;
    Eigen::MatrixXd grad_offsets;  // N x 3, zero rows for unassigned voxels
};

// Sum of squared distances between voted centers (voxel center + offset) and
// the center of each voxel's assigned box; voxels with box_index -1 are skipped.
VoteResult center_vote_loss(const Eigen::MatrixXd& centers, const Eigen::MatrixXd& offsets,
                            const std::vector<int>& box_index, std::span<const Box3D> boxes);

struct TripletResult {
    double loss = 0.0;
    Eigen::MatrixXd grad_features;  // same shape as the grid's feature matrix
};

// For each anchor voxel, the positive is the voxel whose center is nearest and
// the negative the one farthest (ties broken toward the lexicographically
// smaller coordinate); pairs are fixed before differentiation. Each term is
//   max(||f_a - f_p||^2 - ||f_a - f_n||^2 + margin, 0).
// Fewer than 3 voxels yields zero loss and gradient.
TripletResult triplet_cluster_loss(const vox::SparseVoxelGrid& filtered, double margin);

// Adds the refined features back onto the matching rows of the original grid
// (a residual update); every refined coordinate must exist in the original.
vox::SparseVoxelGrid residual_merge(const vox::SparseVoxelGrid& refined,
                                    const vox::SparseVoxelGrid& original);

}  // namespace hvx::fago
