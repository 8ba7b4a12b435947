#include "hvx/fusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hvx::fusion {

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::None: return "none";
        case Activation::Relu: return "relu";
        case Activation::Sigmoid: return "sigmoid";
    }
    throw std::logic_error("activation_name: unknown activation");
}

Activation activation_from_name(const std::string& name) {
    if (name == "none") return Activation::None;
    if (name == "relu") return Activation::Relu;
    if (name == "sigmoid") return Activation::Sigmoid;
    throw std::runtime_error("unknown activation name: " + name);
}

namespace {

Eigen::MatrixXd apply_activation(Activation act, const Eigen::MatrixXd& z) {
    switch (act) {
        case Activation::None: return z;
        case Activation::Relu: return z.cwiseMax(0.0);
        case Activation::Sigmoid:
            return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    }
    throw std::logic_error("apply_activation: unknown activation");
}

// derivative of the activation expressed through its output value
Eigen::MatrixXd activation_grad_from_output(Activation act, const Eigen::MatrixXd& out) {
    switch (act) {
        case Activation::None: return Eigen::MatrixXd::Ones(out.rows(), out.cols());
        case Activation::Relu:
            return out.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
        case Activation::Sigmoid: return out.array() * (1.0 - out.array());
    }
    throw std::logic_error("activation_grad_from_output: unknown activation");
}

}  // namespace

int Mlp::in_dim() const {
    if (layers.empty()) throw std::runtime_error("mlp has no layers");
    return static_cast<int>(layers.front().w.cols());
}

int Mlp::out_dim() const {
    if (layers.empty()) throw std::runtime_error("mlp has no layers");
    return static_cast<int>(layers.back().w.rows());
}

Eigen::Index Mlp::num_params() const {
    Eigen::Index n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
}

void Mlp::validate() const {
    if (layers.empty()) throw std::runtime_error("mlp has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.w.rows() == 0 || l.w.cols() == 0)
            throw std::runtime_error("mlp layer " + std::to_string(i) + " has an empty weight");
        if (l.b.size() != l.w.rows())
            throw std::runtime_error("mlp layer " + std::to_string(i) +
                                     " bias size does not match weight rows");
        if (i > 0 && l.w.cols() != layers[i - 1].w.rows())
            throw std::runtime_error("mlp layer " + std::to_string(i) +
                                     " input dim does not match previous layer output");
        if (!l.w.allFinite() || !l.b.allFinite())
            throw std::runtime_error("mlp layer " + std::to_string(i) +
                                     " has non-finite parameters");
    }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
    return mlp_forward(*this, x).outputs.back();
}

Eigen::VectorXd Mlp::pack() const {
    Eigen::VectorXd theta(num_params());
    Eigen::Index at = 0;
    for (const auto& l : layers) {
        for (Eigen::Index r = 0; r < l.w.rows(); ++r)
            for (Eigen::Index c = 0; c < l.w.cols(); ++c) theta[at++] = l.w(r, c);
        for (Eigen::Index r = 0; r < l.b.size(); ++r) theta[at++] = l.b[r];
    }
    return theta;
}

void Mlp::unpack(const Eigen::VectorXd& theta) {
    if (theta.size() != num_params())
        throw std::runtime_error("mlp unpack: parameter vector has wrong length");
    Eigen::Index at = 0;
    for (auto& l : layers) {
        for (Eigen::Index r = 0; r < l.w.rows(); ++r)
            for (Eigen::Index c = 0; c < l.w.cols(); ++c) l.w(r, c) = theta[at++];
        for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b[r] = theta[at++];
    }
}

Mlp make_mlp(int in_dim, const std::vector<int>& hidden, int out_dim, Activation final_act,
             Rng& rng) {
    if (in_dim < 1 || out_dim < 1) throw std::runtime_error("make_mlp: dims must be positive");
    for (int h : hidden)
        if (h < 1) throw std::runtime_error("make_mlp: hidden widths must be positive");

    std::vector<int> dims;
    dims.push_back(in_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out_dim);

    Mlp mlp;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        MlpLayer layer;
        const int fan_in = dims[i];
        const int fan_out = dims[i + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        layer.w.resize(fan_out, fan_in);
        layer.b.resize(fan_out);
        for (Eigen::Index r = 0; r < layer.w.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.w.cols(); ++c)
                layer.w(r, c) = rng.uniform(-bound, bound);
        for (Eigen::Index r = 0; r < layer.b.size(); ++r) layer.b[r] = rng.uniform(-bound, bound);
        const bool last = (i + 2 == dims.size());
        layer.act = last ? final_act : Activation::Relu;
        mlp.layers.push_back(std::move(layer));
    }
    return mlp;
}

MlpTrace mlp_forward(const Mlp& mlp, const Eigen::MatrixXd& x) {
    mlp.validate();
    if (x.cols() != mlp.in_dim())
        throw std::runtime_error("mlp forward: input has " + std::to_string(x.cols()) +
                                 " columns, expected " + std::to_string(mlp.in_dim()));
    MlpTrace trace;
    Eigen::MatrixXd cur = x;
    for (const auto& l : mlp.layers) {
        trace.inputs.push_back(cur);
        Eigen::MatrixXd z(cur.rows(), l.w.rows());
        // row-at-a-time so a batch is bitwise identical to fusing rows singly
        for (Eigen::Index r = 0; r < cur.rows(); ++r)
            z.row(r) = (l.w * cur.row(r).transpose() + l.b).transpose();
        cur = apply_activation(l.act, z);
        trace.outputs.push_back(cur);
    }
    return trace;
}

Eigen::VectorXd MlpGrads::pack() const {
    Eigen::Index n = 0;
    for (std::size_t i = 0; i < dw.size(); ++i) n += dw[i].size() + db[i].size();
    Eigen::VectorXd g(n);
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < dw.size(); ++i) {
        for (Eigen::Index r = 0; r < dw[i].rows(); ++r)
            for (Eigen::Index c = 0; c < dw[i].cols(); ++c) g[at++] = dw[i](r, c);
        for (Eigen::Index r = 0; r < db[i].size(); ++r) g[at++] = db[i][r];
    }
    return g;
}

void MlpGrads::add_scaled(const MlpGrads& other, double scale) {
    if (other.dw.size() != dw.size())
        throw std::runtime_error("mlp grad accumulate: layer count mismatch");
    for (std::size_t i = 0; i < dw.size(); ++i) {
        dw[i] += scale * other.dw[i];
        db[i] += scale * other.db[i];
    }
}

MlpGrads mlp_backward(const Mlp& mlp, const MlpTrace& trace, const Eigen::MatrixXd& dout) {
    const std::size_t n_layers = mlp.layers.size();
    if (trace.inputs.size() != n_layers || trace.outputs.size() != n_layers)
        throw std::runtime_error("mlp backward: trace does not match network");
    if (dout.rows() != trace.outputs.back().rows() || dout.cols() != mlp.out_dim())
        throw std::runtime_error("mlp backward: upstream gradient has wrong shape");

    MlpGrads grads;
    grads.dw.resize(n_layers);
    grads.db.resize(n_layers);

    Eigen::MatrixXd d = dout;
    for (std::size_t li = n_layers; li-- > 0;) {
        const auto& layer = mlp.layers[li];
        const Eigen::MatrixXd& out = trace.outputs[li];
        const Eigen::MatrixXd& in = trace.inputs[li];
        Eigen::MatrixXd dz = d.cwiseProduct(activation_grad_from_output(layer.act, out));

        grads.dw[li] = Eigen::MatrixXd::Zero(layer.w.rows(), layer.w.cols());
        grads.db[li] = Eigen::VectorXd::Zero(layer.b.size());
        Eigen::MatrixXd din(in.rows(), layer.w.cols());
        for (Eigen::Index r = 0; r < in.rows(); ++r) {
            grads.dw[li].noalias() += dz.row(r).transpose() * in.row(r);
            grads.db[li] += dz.row(r).transpose();
            din.row(r) = dz.row(r) * layer.w;
        }
        d = std::move(din);
    }
    grads.dx = std::move(d);
    return grads;
}

FeatureMap2D FeatureMap2D::zeros(int w, int h, int d) {
    if (w < 1 || h < 1 || d < 1) throw std::runtime_error("feature map dims must be positive");
    FeatureMap2D f;
    f.width = w;
    f.height = h;
    f.dim = d;
    f.data.assign(static_cast<std::size_t>(w) * h * d, 0.0f);
    return f;
}

void FeatureMap2D::validate() const {
    if (width < 1 || height < 1 || dim < 1)
        throw std::runtime_error("feature map dims must be positive");
    if (data.size() != static_cast<std::size_t>(width) * height * dim)
        throw std::runtime_error("feature map data size does not match dims");
}

GatherResult gather_image_features(const vox::SparseVoxelGrid& grid, const FeatureMap2D& fmap,
                                   const vox::CameraModel& cam) {
    fmap.validate();
    cam.validate();
    const std::size_t n = grid.size();
    GatherResult res;
    res.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), fmap.dim);
    res.valid.assign(n, 0);

    const double sx = static_cast<double>(fmap.width) / cam.width;
    const double sy = static_cast<double>(fmap.height) / cam.height;

    for (std::size_t i = 0; i < n; ++i) {
        const vox::Projection pr = vox::project_point(grid.center(grid.coords[i]), cam);
        if (!pr.valid) continue;
        res.valid[i] = 1;
        const double u = pr.pixel.x() * sx;
        const double v = pr.pixel.y() * sy;
        const int x0 = std::min(std::max(static_cast<int>(std::floor(u)), 0), fmap.width - 1);
        const int y0 = std::min(std::max(static_cast<int>(std::floor(v)), 0), fmap.height - 1);
        const int x1 = std::min(x0 + 1, fmap.width - 1);
        const int y1 = std::min(y0 + 1, fmap.height - 1);
        const double fx = std::min(std::max(u - x0, 0.0), 1.0);
        const double fy = std::min(std::max(v - y0, 0.0), 1.0);
        for (int c = 0; c < fmap.dim; ++c) {
            const double top = fmap.at(x0, y0, c) * (1.0 - fx) + fmap.at(x1, y0, c) * fx;
            const double bot = fmap.at(x0, y1, c) * (1.0 - fx) + fmap.at(x1, y1, c) * fx;
            res.features(static_cast<Eigen::Index>(i), c) = top * (1.0 - fy) + bot * fy;
        }
    }
    return res;
}

FuseTrace fuse_forward(const Eigen::MatrixXd& f2d, const Eigen::MatrixXd& fvox,
                       const Mlp& fuse_mlp, const Mlp& gate_mlp) {
    if (f2d.rows() != fvox.rows())
        throw std::runtime_error("fuse: image and voxel features disagree on row count");
    const Eigen::Index d_img = f2d.cols();
    const Eigen::Index d_vox = fvox.cols();
    if (fuse_mlp.in_dim() != d_img + d_vox)
        throw std::runtime_error("fuse: fuse mlp input dim must be d_img + d_vox");
    if (fuse_mlp.out_dim() != d_img)
        throw std::runtime_error("fuse: fuse mlp output dim must be d_img");
    if (gate_mlp.in_dim() != d_img || gate_mlp.out_dim() != d_img)
        throw std::runtime_error("fuse: gate mlp must map d_img to d_img");

    Eigen::MatrixXd cat(f2d.rows(), d_img + d_vox);
    cat << f2d, fvox;

    FuseTrace tr;
    tr.fuse_trace = mlp_forward(fuse_mlp, cat);
    tr.f_fuse = tr.fuse_trace.outputs.back();
    tr.gate_trace = mlp_forward(gate_mlp, tr.f_fuse);
    const Eigen::MatrixXd& pre = tr.gate_trace.outputs.back();
    tr.gate = pre.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    tr.f_2d3d = f2d + tr.gate.cwiseProduct(tr.f_fuse);
    return tr;
}

FuseGrads fuse_backward(const Mlp& fuse_mlp, const Mlp& gate_mlp, const FuseTrace& trace,
                        const Eigen::MatrixXd& d_f2d3d, const Eigen::MatrixXd* d_f_fuse_ext) {
    const Eigen::Index d_img = trace.f_fuse.cols();
    if (d_f2d3d.rows() != trace.f_fuse.rows() || d_f2d3d.cols() != d_img)
        throw std::runtime_error("fuse backward: upstream gradient has wrong shape");

    FuseGrads g;
    g.d_f2d = d_f2d3d;

    // f_2d3d = f2d + gate .* f_fuse, gate = sigmoid(p)
    const Eigen::MatrixXd d_gate = d_f2d3d.cwiseProduct(trace.f_fuse);
    const Eigen::MatrixXd d_pre =
        d_gate.cwiseProduct(trace.gate.cwiseProduct((1.0 - trace.gate.array()).matrix()));
    Eigen::MatrixXd d_f_fuse = d_f2d3d.cwiseProduct(trace.gate);
    if (d_f_fuse_ext != nullptr) {
        if (d_f_fuse_ext->rows() != d_f_fuse.rows() || d_f_fuse_ext->cols() != d_f_fuse.cols())
            throw std::runtime_error("fuse backward: f_fuse gradient has wrong shape");
        d_f_fuse += *d_f_fuse_ext;
    }

    g.gate_mlp = mlp_backward(gate_mlp, trace.gate_trace, d_pre);
    d_f_fuse += g.gate_mlp.dx;

    g.fuse_mlp = mlp_backward(fuse_mlp, trace.fuse_trace, d_f_fuse);
    const Eigen::MatrixXd& dcat = g.fuse_mlp.dx;
    g.d_f2d += dcat.leftCols(d_img);
    g.d_fvox = dcat.rightCols(dcat.cols() - d_img);
    return g;
}

}  // namespace hvx::fusion
