#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "hvx/fago.hpp"
#include "hvx/fusion.hpp"
#include "hvx/rng.hpp"
#include "hvx/voxgrid.hpp"

namespace hvx::scenegen {

struct SceneSpec {
    int n_boxes = 3;
    int points_per_box = 512;
    int clutter_points = 512;
    int image_width = 160;
    int image_height = 120;
    int feature_width = 0;   // 0 means image_width
    int feature_height = 0;  // 0 means image_height
    int d_img = 8;
    Eigen::Vector3d extent_min{0.4, 0.4, 0.4};
    Eigen::Vector3d extent_max{1.2, 1.2, 1.2};
    Eigen::Vector3d workspace_min{-4.0, -4.0, 0.0};
    Eigen::Vector3d workspace_max{4.0, 4.0, 2.0};
    double mask_flip_prob = 0.0;  // per-bit flip probability after rendering

    void validate() const;
};

// Smooth scalar field per channel: a small sum of 3D sinusoids. Point
// features are this field sampled at the point, so nearby points get nearby
// features without any per-point randomness.
struct Harmonic3D {
    Eigen::Vector3d k = Eigen::Vector3d::Zero();
    double phase = 0.0;
    double amp = 0.0;
};

struct SmoothField3D {
    std::vector<std::vector<Harmonic3D>> channels;  // [dim][harmonic]

    int dim() const { return static_cast<int>(channels.size()); }
    Eigen::VectorXd eval(const Eigen::Vector3d& p) const;
};

SmoothField3D make_field3d(int dim, int harmonics, double max_freq, Rng& rng);

struct SyntheticScene {
    std::vector<fago::Box3D> boxes;
    std::vector<Eigen::Vector3d> points;
    std::vector<Eigen::VectorXd> point_features;  // d_img entries each
    vox::CameraModel camera;
    vox::ForegroundMask mask;
    fusion::FeatureMap2D feature_map;
    std::uint64_t seed = 0;
};

// Deterministic synthetic scene: yawed boxes in the workspace, area-weighted
// surface samples plus uniform clutter, an orbiting camera aimed at the
// workspace center, the rendered union of projected box silhouettes as the
// mask, and a low-frequency sinusoid feature map.
SyntheticScene generate_scene(const SceneSpec& spec, std::uint64_t seed);

// Union of the convex hulls of each box's 8 projected corners, filled at
// pixel centers. Boxes with fewer than 3 corners in front of the camera are
// skipped.
vox::ForegroundMask render_box_mask(std::span<const fago::Box3D> boxes,
                                    const vox::CameraModel& cam);

// Area-weighted uniform samples on the box surface.
std::vector<Eigen::Vector3d> sample_box_surface(const fago::Box3D& box, int n, Rng& rng);

// Orbit camera: eye at the given azimuth/elevation/distance from `target`,
// looking at `target`, image plane x right / y down.
vox::CameraModel make_orbit_camera(const Eigen::Vector3d& target, double azimuth,
                                   double elevation, double distance, int width, int height);

fusion::FeatureMap2D make_feature_map(int width, int height, int dim, int harmonics, Rng& rng);

}  // namespace hvx::scenegen
