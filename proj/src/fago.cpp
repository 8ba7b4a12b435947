#include "hvx/fago.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace hvx::fago {

void Box3D::validate() const {
    if (!(size.x() > 0.0 && size.y() > 0.0 && size.z() > 0.0))
        throw std::runtime_error("box extents must be positive");
    if (!center.allFinite() || !std::isfinite(yaw))
        throw std::runtime_error("box has non-finite parameters");
}

bool Box3D::contains(const Eigen::Vector3d& p) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    const Eigen::Vector3d d = p - center;
    // rotate into the box frame (inverse of the yaw rotation)
    const double lx = c * d.x() + s * d.y();
    const double ly = -s * d.x() + c * d.y();
    const double lz = d.z();
    return std::abs(lx) <= 0.5 * size.x() && std::abs(ly) <= 0.5 * size.y() &&
           std::abs(lz) <= 0.5 * size.z();
}

std::array<Eigen::Vector3d, 8> Box3D::corners() const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    std::array<Eigen::Vector3d, 8> out;
    for (int i = 0; i < 8; ++i) {
        const double lx = ((i & 4) ? 0.5 : -0.5) * size.x();
        const double ly = ((i & 2) ? 0.5 : -0.5) * size.y();
        const double lz = ((i & 1) ? 0.5 : -0.5) * size.z();
        out[i] = center + Eigen::Vector3d(c * lx - s * ly, s * lx + c * ly, lz);
    }
    return out;
}

LabelResult label_foreground(const vox::SparseVoxelGrid& grid, std::span<const Box3D> boxes) {
    for (const auto& b : boxes) b.validate();
    LabelResult res;
    res.labels.assign(grid.size(), 0);
    res.box_index.assign(grid.size(), -1);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Eigen::Vector3d p = grid.center(grid.coords[i]);
        double best_vol = std::numeric_limits<double>::infinity();
        int best = -1;
        for (std::size_t bi = 0; bi < boxes.size(); ++bi) {
            if (!boxes[bi].contains(p)) continue;
            const double vol = boxes[bi].volume();
            // strict < keeps the lowest index on equal volumes
            if (vol < best_vol) {
                best_vol = vol;
                best = static_cast<int>(bi);
            }
        }
        res.box_index[i] = best;
        res.labels[i] = best >= 0 ? 1 : 0;
    }
    return res;
}

FocalResult focal_importance_loss(const Eigen::VectorXd& scores,
                                  const std::vector<std::uint8_t>& labels, double alpha,
                                  int batch_size, double gamma) {
    if (static_cast<std::size_t>(scores.size()) != labels.size())
        throw std::runtime_error("focal loss: scores and labels disagree on length");
    if (batch_size < 1) throw std::runtime_error("focal loss: batch size must be positive");
    if (!(alpha > 0.0) || !(gamma >= 0.0))
        throw std::runtime_error("focal loss: alpha must be > 0 and gamma >= 0");

    FocalResult res;
    res.grad = Eigen::VectorXd::Zero(scores.size());
    const Eigen::Index m = scores.size();
    if (m == 0) return res;

    constexpr double kLo = 1e-7;
    constexpr double kHi = 1.0 - 1e-7;
    const double norm = 1.0 / (static_cast<double>(batch_size) * static_cast<double>(m));

    double acc = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double raw = labels[i] ? scores[i] : 1.0 - scores[i];
        const double s = std::min(std::max(raw, kLo), kHi);
        acc += alpha * std::pow(1.0 - s, gamma) * std::log(s);
        if (raw <= kLo || raw >= kHi) continue;  // clamp saturated: zero gradient
        // d/ds [ (1-s)^gamma log s ] = -gamma (1-s)^(gamma-1) log s + (1-s)^gamma / s
        const double dpow =
            gamma > 0.0 ? gamma * std::pow(1.0 - s, gamma - 1.0) * std::log(s) : 0.0;
        const double dterm = -dpow + std::pow(1.0 - s, gamma) / s;
        const double sign = labels[i] ? 1.0 : -1.0;
        res.grad[i] = -norm * alpha * dterm * sign;
    }
    res.loss = -norm * acc;
    return res;
}

TopkResult topk_filter(const vox::SparseVoxelGrid& grid, const Eigen::VectorXd& scores, int k) {
    if (k < 1) throw std::runtime_error("topk: k must be positive");
    if (static_cast<std::size_t>(scores.size()) != grid.size())
        throw std::runtime_error("topk: scores and grid disagree on length");

    std::vector<std::size_t> order(grid.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[static_cast<Eigen::Index>(a)] != scores[static_cast<Eigen::Index>(b)])
            return scores[static_cast<Eigen::Index>(a)] > scores[static_cast<Eigen::Index>(b)];
        const auto& ca = grid.coords[a];
        const auto& cb = grid.coords[b];
        return std::tie(ca.x, ca.y, ca.z) < std::tie(cb.x, cb.y, cb.z);
    });
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    order.resize(keep);

    TopkResult res;
    res.grid.stride = grid.stride;
    res.grid.voxel_size = grid.voxel_size;
    res.grid.origin = grid.origin;
    res.grid.coords.reserve(keep);
    res.grid.features.resize(static_cast<Eigen::Index>(keep), grid.features.cols());
    res.scores.resize(static_cast<Eigen::Index>(keep));
    res.indices = order;
    for (std::size_t i = 0; i < keep; ++i) {
        res.grid.coords.push_back(grid.coords[order[i]]);
        res.grid.features.row(static_cast<Eigen::Index>(i)) =
            grid.features.row(static_cast<Eigen::Index>(order[i]));
        res.scores[static_cast<Eigen::Index>(i)] = scores[static_cast<Eigen::Index>(order[i])];
    }
    return res;
}

VoteResult center_vote_loss(const Eigen::MatrixXd& centers, const Eigen::MatrixXd& offsets,
                            const std::vector<int>& box_index, std::span<const Box3D> boxes) {
    if (centers.rows() != offsets.rows() || centers.cols() != 3 || offsets.cols() != 3)
        throw std::runtime_error("center vote: centers and offsets must be N x 3");
    if (static_cast<std::size_t>(centers.rows()) != box_index.size())
        throw std::runtime_error("center vote: assignment list has wrong length");

    VoteResult res;
    res.grad_offsets = Eigen::MatrixXd::Zero(offsets.rows(), 3);
    for (Eigen::Index i = 0; i < centers.rows(); ++i) {
        const int bi = box_index[static_cast<std::size_t>(i)];
        if (bi < 0) continue;
        if (static_cast<std::size_t>(bi) >= boxes.size())
            throw std::runtime_error("center vote: assignment references a missing box");
        const Eigen::Vector3d voted = centers.row(i).transpose() + offsets.row(i).transpose();
        const Eigen::Vector3d diff = voted - boxes[static_cast<std::size_t>(bi)].center;
        res.loss += diff.squaredNorm();
        res.grad_offsets.row(i) = 2.0 * diff.transpose();
    }
    return res;
}

namespace {

bool coord_less(const vox::Coord& a, const vox::Coord& b) {
    return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
}

}  // namespace

TripletResult triplet_cluster_loss(const vox::SparseVoxelGrid& filtered, double margin) {
    if (!(margin >= 0.0)) throw std::runtime_error("triplet loss: margin must be >= 0");
    const std::size_t n = filtered.size();
    TripletResult res;
    res.grad_features = Eigen::MatrixXd::Zero(filtered.features.rows(), filtered.features.cols());
    if (n < 3) return res;

    std::vector<Eigen::Vector3d> centers(n);
    for (std::size_t i = 0; i < n; ++i) centers[i] = filtered.center(filtered.coords[i]);

    for (std::size_t i = 0; i < n; ++i) {
        std::size_t pos = n, neg = n;
        double pos_d = std::numeric_limits<double>::infinity();
        double neg_d = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d2 = (centers[j] - centers[i]).squaredNorm();
            if (pos == n || d2 < pos_d ||
                (d2 == pos_d && coord_less(filtered.coords[j], filtered.coords[pos]))) {
                pos_d = d2;
                pos = j;
            }
            if (neg == n || d2 > neg_d ||
                (d2 == neg_d && coord_less(filtered.coords[j], filtered.coords[neg]))) {
                neg_d = d2;
                neg = j;
            }
        }
        const Eigen::RowVectorXd fa = filtered.features.row(static_cast<Eigen::Index>(i));
        const Eigen::RowVectorXd fp = filtered.features.row(static_cast<Eigen::Index>(pos));
        const Eigen::RowVectorXd fn = filtered.features.row(static_cast<Eigen::Index>(neg));
        const double hinge = (fa - fp).squaredNorm() - (fa - fn).squaredNorm() + margin;
        if (hinge <= 0.0) continue;
        res.loss += hinge;
        const Eigen::RowVectorXd d_fa = 2.0 * (fn - fp);
        res.grad_features.row(static_cast<Eigen::Index>(i)) += d_fa;
        res.grad_features.row(static_cast<Eigen::Index>(pos)) += 2.0 * (fp - fa);
        res.grad_features.row(static_cast<Eigen::Index>(neg)) += 2.0 * (fa - fn);
    }
    return res;
}

vox::SparseVoxelGrid residual_merge(const vox::SparseVoxelGrid& refined,
                                    const vox::SparseVoxelGrid& original) {
    if (refined.features.cols() != original.features.cols())
        throw std::runtime_error("residual merge: feature dims differ");
    if (refined.stride != original.stride)
        throw std::runtime_error("residual merge: strides differ");

    std::unordered_map<std::uint64_t, std::size_t> rows;
    rows.reserve(original.size());
    for (std::size_t i = 0; i < original.size(); ++i) rows.emplace(original.coords[i].key(), i);

    vox::SparseVoxelGrid out = original;
    for (std::size_t i = 0; i < refined.size(); ++i) {
        const auto it = rows.find(refined.coords[i].key());
        if (it == rows.end())
            throw std::runtime_error("residual merge: refined voxel not present in original grid");
        out.features.row(static_cast<Eigen::Index>(it->second)) +=
            refined.features.row(static_cast<Eigen::Index>(i));
    }
    return out;
}

}  // namespace hvx::fago
