#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "hvx/rng.hpp"
#include "hvx/voxgrid.hpp"

namespace hvx::fusion {

enum class Activation { None, Relu, Sigmoid };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct MlpLayer {
    Eigen::MatrixXd w;  // out x in
    Eigen::VectorXd b;  // out
    Activation act = Activation::None;
};

struct Mlp {
    std::vector<MlpLayer> layers;

    int in_dim() const;
    int out_dim() const;
    Eigen::Index num_params() const;
    void validate() const;  // chained layer dims, finite entries

    // rows of x are independent samples
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

    Eigen::VectorXd pack() const;
    void unpack(const Eigen::VectorXd& theta);
};

// hidden_layers relu-activated, final layer final_act; weights and biases
// uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
Mlp make_mlp(int in_dim, const std::vector<int>& hidden, int out_dim, Activation final_act,
             Rng& rng);

struct MlpTrace {
    std::vector<Eigen::MatrixXd> inputs;   // input to each layer
    std::vector<Eigen::MatrixXd> outputs;  // post-activation output of each layer
};

MlpTrace mlp_forward(const Mlp& mlp, const Eigen::MatrixXd& x);

struct MlpGrads {
    std::vector<Eigen::MatrixXd> dw;
    std::vector<Eigen::VectorXd> db;
    Eigen::MatrixXd dx;

    Eigen::VectorXd pack() const;  // same layout as Mlp::pack
    void add_scaled(const MlpGrads& other, double scale);
};

MlpGrads mlp_backward(const Mlp& mlp, const MlpTrace& trace, const Eigen::MatrixXd& dout);

// Dense image feature raster; data layout is ((y * width) + x) * dim + c.
// Values are stored as f32 to match the on-disk format; arithmetic that
// consumes them runs in double.
struct FeatureMap2D {
    int width = 0, height = 0, dim = 0;
    std::vector<float> data;

    static FeatureMap2D zeros(int w, int h, int d);
    double at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * dim + c];
    }
    float& ref(int x, int y, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * dim + c];
    }
    void validate() const;
};

struct GatherResult {
    Eigen::MatrixXd features;          // |grid| x dim; zero rows where invalid
    std::vector<std::uint8_t> valid;   // projection validity per voxel
};

// Bilinear lookup of the feature map at each voxel's projected sub-pixel
// location. Pixel coordinates are scaled by fmap.width/cam.width (and the
// height ratio) first, so a downscaled raster works; samples sit on integer
// coordinates, i.e. a projection exactly on (i, j) returns data[j][i].
GatherResult gather_image_features(const vox::SparseVoxelGrid& grid, const FeatureMap2D& fmap,
                                   const vox::CameraModel& cam);

struct FuseTrace {
    MlpTrace fuse_trace;   // input: concat(f2d, fvox)
    MlpTrace gate_trace;   // input: f_fuse
    Eigen::MatrixXd gate;  // sigmoid(gate mlp output)
    Eigen::MatrixXd f_fuse;
    Eigen::MatrixXd f_2d3d;
};

// Gated residual fusion:
//   f_fuse = fuse_mlp(concat(f2d, fvox))
//   f_2d3d = f2d + sigmoid(gate_mlp(f_fuse)) .* f_fuse
// fuse_mlp must map d_img+d_vox -> d_img and gate_mlp d_img -> d_img.
FuseTrace fuse_forward(const Eigen::MatrixXd& f2d, const Eigen::MatrixXd& fvox,
                       const Mlp& fuse_mlp, const Mlp& gate_mlp);

struct FuseGrads {
    MlpGrads fuse_mlp;
    MlpGrads gate_mlp;
    Eigen::MatrixXd d_f2d;
    Eigen::MatrixXd d_fvox;
};

// Reverse pass through residual, Hadamard, sigmoid and both MLPs.
// d_f_fuse_ext optionally injects an upstream gradient on f_fuse itself.
FuseGrads fuse_backward(const Mlp& fuse_mlp, const Mlp& gate_mlp, const FuseTrace& trace,
                        const Eigen::MatrixXd& d_f2d3d,
                        const Eigen::MatrixXd* d_f_fuse_ext = nullptr);

}  // namespace hvx::fusion
