#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace hvx::vox {

// Integer lattice coordinate. Hash keys pack each component into 21 bits,
// collision-free for coords in [-2^20, 2^20)^3; anything outside is rejected.
struct Coord {
    std::int32_t x = 0;
    std::int32_t y = 0;
    std::int32_t z = 0;

    friend bool operator==(const Coord&, const Coord&) = default;
    friend auto operator<=>(const Coord&, const Coord&) = default;

    std::uint64_t key() const;
};

// Stride-tagged sparse voxel set. Row i of features belongs to coords[i];
// feature dimension is uniform (features.cols()). Operations in this module
// emit coords in sorted lexicographic order.
struct SparseVoxelGrid {
    int stride = 1;
    double voxel_size = 1.0;
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    std::vector<Coord> coords;
    Eigen::MatrixXd features;  // |coords| x D

    std::size_t size() const { return coords.size(); }
    int dim() const { return static_cast<int>(features.cols()); }

    // origin + (c + 0.5) * voxel_size * stride, in meters
    Eigen::Vector3d center(const Coord& c) const;
    Eigen::MatrixXd centers() const;  // |coords| x 3

    void validate() const;  // distinct coords, row count, finite features
};

// Reorders voxels into sorted lexicographic coordinate order.
void sort_lex(SparseVoxelGrid& grid);

struct CameraModel {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    int width = 0, height = 0;

    void validate() const;  // rotation orthonormal within 1e-9, fx/fy > 0
};

struct ForegroundMask {
    int width = 0, height = 0;
    std::vector<std::uint8_t> bits;  // row-major, 1 = foreground

    static ForegroundMask zeros(int w, int h);
    bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v) {
        bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
    }
    std::size_t count() const;
};

// Points sharing a cell collapse to one voxel whose feature is the mean of
// the member point features; with no point features the feature is the
// member count broadcast to occupancy_dim entries.
SparseVoxelGrid voxelize(std::span<const Eigen::Vector3d> points,
                         std::span<const Eigen::VectorXd> point_features, double voxel_size,
                         const Eigen::Vector3d& origin, int stride, int occupancy_dim = 1);

struct Projection {
    Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
    bool valid = false;
};

// Pinhole projection of one world point. The pixel is filled whenever the
// point is in front of the camera (depth > 1e-6); valid additionally requires
// it inside [0,width) x [0,height).
Projection project_point(const Eigen::Vector3d& p, const CameraModel& cam);

// Pinhole projection of every voxel center under the same rules.
std::vector<Projection> project_to_image(const SparseVoxelGrid& grid, const CameraModel& cam);

// A voxel is foreground iff its projection is valid and the mask bit at the
// floored pixel is set; everything else (invalid projections included) is
// background. fg and bg partition the input exactly.
std::pair<SparseVoxelGrid, SparseVoxelGrid> partition_fg_bg(const SparseVoxelGrid& grid,
                                                            const ForegroundMask& mask,
                                                            const CameraModel& cam);

// 27-neighborhood dilation. Pre-existing voxels keep their feature; a new
// cell takes the mean feature of every source voxel whose neighborhood
// covers it.
SparseVoxelGrid densify_foreground(const SparseVoxelGrid& grid);

// Strided 3D max-pool: voxels grouped by floor(c/s) per axis collapse to one
// voxel at the group coordinate on the s-times coarser lattice (stride
// becomes stride*s) with the elementwise-max feature.
SparseVoxelGrid sparsify_background(const SparseVoxelGrid& grid, int s);

// Superimposes bg onto fg after re-expressing bg coords on fg's lattice
// (coordinate * stride ratio). On collision the foreground feature wins.
SparseVoxelGrid merge(const SparseVoxelGrid& fg, const SparseVoxelGrid& bg);

}  // namespace hvx::vox
