#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hvx/fago.hpp"
#include "hvx/fusion.hpp"
#include "hvx/hyperball.hpp"
#include "hvx/objective.hpp"
#include "hvx/rng.hpp"
#include "hvx/scenegen.hpp"
#include "hvx/voxgrid.hpp"

namespace hvx::pipeline {

struct MlpSpec {
    int depth = 2;   // affine layers
    int hidden = 0;  // hidden width; 0 means d_img
};

struct Config {
    std::array<double, 4> eta = objective::kTrainingSettingEta;
    double alpha = 0.25;
    double gamma = 1.0;
    double margin = 1.0;
    double k_abs = 1.0;  // |curvature|
    double eps = 1e-5;   // ball clipping epsilon
    int sigma_s = 2;     // background sparsify factor
    int top_k = 512;
    MlpSpec mlp;
    std::uint64_t seed = 0;
    std::vector<int> strides{1};
    double voxel_size = 0.25;
    bool detach_teacher = true;  // block distill gradients into the fused branch
    bool prune_stream = false;   // restrict the output grid to the kept voxels
    double l_cls = 0.0, l_het = 0.0, l_reg = 0.0;  // externally supplied terms

    void validate() const;
};

// Strict parser: unknown keys are rejected; "eta" accepts either a 4-element
// array or one of the preset names "training-setting" / "fig5-optimum".
Config config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const Config& cfg);

// The four trainable heads.
struct Params {
    fusion::Mlp fuse;        // (d_img + d_vox) -> d_img
    fusion::Mlp gate;        // d_img -> d_img (pre-sigmoid)
    fusion::Mlp importance;  // d_vox -> 1, sigmoid output
    fusion::Mlp offset;      // d_vox -> 3

    Eigen::Index num_params() const;
    Eigen::VectorXd pack() const;
    void unpack(const Eigen::VectorXd& theta);
};

Params init_params(const Config& cfg, int d_img, Rng& rng);

struct StageCounts {
    std::size_t input = 0;
    std::size_t foreground = 0;
    std::size_t background = 0;
    std::size_t densified = 0;
    std::size_t sparsified = 0;
    std::size_t merged = 0;
    std::size_t valid_projections = 0;
    std::size_t filtered = 0;
};

// Fixed (parameter-independent) per-stride tensors for one scene.
struct StrideState {
    int stride = 1;
    vox::SparseVoxelGrid merged;      // redistributed voxel set
    Eigen::MatrixXd f2d;              // gathered image features per voxel
    std::vector<std::uint8_t> valid;  // gather validity per voxel
    std::vector<std::uint8_t> labels;
    std::vector<int> box_index;
    StageCounts counts;
};

struct PreparedScene {
    std::vector<StrideState> strides;
    std::vector<fago::Box3D> boxes;
    int d_img = 0;
};

struct StageTimings {
    std::vector<std::pair<std::string, double>> ms;
    void add(std::string name, double v) { ms.emplace_back(std::move(name), v); }
};

// voxelize -> partition -> densify / sparsify -> merge -> gather -> label,
// once per configured stride. Point and image feature widths must match.
PreparedScene prepare_scene(const scenegen::SyntheticScene& scene, const Config& cfg,
                            StageTimings* timings = nullptr);

struct StrideEval {
    int stride = 1;
    double l_h = 0.0;              // this stride's distillation contribution
    Eigen::VectorXd scores;        // importance score per merged voxel
    fago::TopkResult filtered;
    vox::SparseVoxelGrid output;   // residual-updated grid (pruned if configured)
};

struct Evaluation {
    objective::LossParts parts;
    objective::LossBundle bundle;
    std::vector<StrideEval> strides;
    // gradient of eta0*l_h + eta1*l_s + eta2*l_ctr + eta3*l_cluster with
    // respect to the packed params; empty unless with_grad
    Eigen::VectorXd param_grad;
};

Evaluation evaluate(const PreparedScene& ps, const Params& params, const Config& cfg,
                    bool with_grad, StageTimings* timings = nullptr);

// Full run artifact for the CLI and for determinism comparisons; everything
// except "timings_ms" is a pure function of (scene, config).
nlohmann::json run_report(const scenegen::SyntheticScene& scene, const Config& cfg);

}  // namespace hvx::pipeline
