#include "hvx/voxgrid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace hvx::vox {

namespace {

constexpr std::int32_t kCoordLimit = 1 << 20;

std::int32_t floor_div(std::int32_t a, std::int32_t s) {
    std::int32_t q = a / s;
    if (a % s != 0 && a < 0) --q;
    return q;
}

std::int32_t cell_index(double v, double cell) {
    const double f = std::floor(v / cell);
    if (!(f >= -static_cast<double>(kCoordLimit) && f < static_cast<double>(kCoordLimit))) {
        throw std::runtime_error("voxelize: coordinate outside supported lattice range");
    }
    return static_cast<std::int32_t>(f);
}

void reorder_rows(SparseVoxelGrid& grid, const std::vector<std::size_t>& order) {
    std::vector<Coord> coords(order.size());
    Eigen::MatrixXd feats(static_cast<Eigen::Index>(order.size()), grid.features.cols());
    for (std::size_t i = 0; i < order.size(); ++i) {
        coords[i] = grid.coords[order[i]];
        feats.row(static_cast<Eigen::Index>(i)) = grid.features.row(static_cast<Eigen::Index>(order[i]));
    }
    grid.coords = std::move(coords);
    grid.features = std::move(feats);
}

}  // namespace

std::uint64_t Coord::key() const {
    if (x < -kCoordLimit || x >= kCoordLimit || y < -kCoordLimit || y >= kCoordLimit ||
        z < -kCoordLimit || z >= kCoordLimit) {
        throw std::runtime_error("Coord::key: coordinate outside [-2^20, 2^20)");
    }
    const auto bx = static_cast<std::uint64_t>(x + kCoordLimit);
    const auto by = static_cast<std::uint64_t>(y + kCoordLimit);
    const auto bz = static_cast<std::uint64_t>(z + kCoordLimit);
    return (bx << 42) | (by << 21) | bz;
}

Eigen::Vector3d SparseVoxelGrid::center(const Coord& c) const {
    const double cell = voxel_size * stride;
    return origin + Eigen::Vector3d((c.x + 0.5) * cell, (c.y + 0.5) * cell, (c.z + 0.5) * cell);
}

Eigen::MatrixXd SparseVoxelGrid::centers() const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(coords.size()), 3);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = center(coords[i]).transpose();
    }
    return out;
}

void SparseVoxelGrid::validate() const {
    if (stride < 1) throw std::runtime_error("SparseVoxelGrid: stride must be >= 1");
    if (!(voxel_size > 0.0)) throw std::runtime_error("SparseVoxelGrid: voxel_size must be > 0");
    if (static_cast<std::size_t>(features.rows()) != coords.size()) {
        throw std::runtime_error("SparseVoxelGrid: feature rows != coord count");
    }
    if (!features.allFinite()) throw std::runtime_error("SparseVoxelGrid: non-finite feature");
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(coords.size());
    for (const Coord& c : coords) {
        if (!seen.insert(c.key()).second) {
            throw std::runtime_error("SparseVoxelGrid: duplicate coordinate");
        }
    }
}

void sort_lex(SparseVoxelGrid& grid) {
    std::vector<std::size_t> order(grid.coords.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return grid.coords[a] < grid.coords[b]; });
    reorder_rows(grid, order);
}

void CameraModel::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::runtime_error("CameraModel: fx, fy must be > 0");
    if (width <= 0 || height <= 0) throw std::runtime_error("CameraModel: empty image plane");
    const Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    if (err.cwiseAbs().maxCoeff() > 1e-9) {
        throw std::runtime_error("CameraModel: rotation is not orthonormal");
    }
}

ForegroundMask ForegroundMask::zeros(int w, int h) {
    ForegroundMask m;
    m.width = w;
    m.height = h;
    m.bits.assign(static_cast<std::size_t>(w) * h, 0);
    return m;
}

std::size_t ForegroundMask::count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b != 0;
    return n;
}

SparseVoxelGrid voxelize(std::span<const Eigen::Vector3d> points,
                         std::span<const Eigen::VectorXd> point_features, double voxel_size,
                         const Eigen::Vector3d& origin, int stride, int occupancy_dim) {
    if (!(voxel_size > 0.0)) throw std::invalid_argument("voxelize: voxel_size must be > 0");
    if (stride < 1) throw std::invalid_argument("voxelize: stride must be >= 1");
    const bool with_features = !point_features.empty();
    if (with_features && point_features.size() != points.size()) {
        throw std::invalid_argument("voxelize: point/feature count mismatch");
    }

    SparseVoxelGrid grid;
    grid.stride = stride;
    grid.voxel_size = voxel_size;
    grid.origin = origin;

    const int dim = with_features ? static_cast<int>(point_features[0].size()) : occupancy_dim;
    const double cell = voxel_size * stride;

    struct Acc {
        Eigen::VectorXd sum;
        std::size_t count = 0;
    };
    std::unordered_map<std::uint64_t, Acc> cells;
    std::unordered_map<std::uint64_t, Coord> cell_coord;
    cells.reserve(points.size());

    for (std::size_t i = 0; i < points.size(); ++i) {
        const Eigen::Vector3d& p = points[i];
        Coord c{cell_index(p.x() - origin.x(), cell), cell_index(p.y() - origin.y(), cell),
                cell_index(p.z() - origin.z(), cell)};
        const std::uint64_t k = c.key();
        auto [it, fresh] = cells.try_emplace(k);
        if (fresh) {
            it->second.sum = Eigen::VectorXd::Zero(dim);
            cell_coord.emplace(k, c);
        }
        if (with_features) {
            if (point_features[i].size() != dim) {
                throw std::invalid_argument("voxelize: inconsistent feature dimension");
            }
            it->second.sum += point_features[i];
        }
        ++it->second.count;
    }

    grid.coords.reserve(cells.size());
    for (const auto& [k, c] : cell_coord) grid.coords.push_back(c);
    std::sort(grid.coords.begin(), grid.coords.end());

    grid.features.resize(static_cast<Eigen::Index>(grid.coords.size()), dim);
    for (std::size_t i = 0; i < grid.coords.size(); ++i) {
        const Acc& acc = cells.at(grid.coords[i].key());
        if (with_features) {
            grid.features.row(static_cast<Eigen::Index>(i)) =
                (acc.sum / static_cast<double>(acc.count)).transpose();
        } else {
            grid.features.row(static_cast<Eigen::Index>(i))
                .setConstant(static_cast<double>(acc.count));
        }
    }
    return grid;
}

Projection project_point(const Eigen::Vector3d& p, const CameraModel& cam) {
    Projection pr;
    const Eigen::Vector3d pc = cam.rotation * p + cam.translation;
    if (pc.z() > 1e-6) {
        const double u = cam.fx * pc.x() / pc.z() + cam.cx;
        const double v = cam.fy * pc.y() / pc.z() + cam.cy;
        pr.pixel = Eigen::Vector2d(u, v);
        pr.valid = u >= 0.0 && u < cam.width && v >= 0.0 && v < cam.height;
    }
    return pr;
}

std::vector<Projection> project_to_image(const SparseVoxelGrid& grid, const CameraModel& cam) {
    cam.validate();
    std::vector<Projection> out(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        out[i] = project_point(grid.center(grid.coords[i]), cam);
    return out;
}

std::pair<SparseVoxelGrid, SparseVoxelGrid> partition_fg_bg(const SparseVoxelGrid& grid,
                                                            const ForegroundMask& mask,
                                                            const CameraModel& cam) {
    if (mask.width != cam.width || mask.height != cam.height) {
        throw std::invalid_argument("partition_fg_bg: mask/camera dimensions disagree");
    }
    const std::vector<Projection> proj = project_to_image(grid, cam);

    std::vector<std::size_t> fg_idx, bg_idx;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        bool fg = false;
        if (proj[i].valid) {
            const int u = static_cast<int>(std::floor(proj[i].pixel.x()));
            const int v = static_cast<int>(std::floor(proj[i].pixel.y()));
            fg = mask.at(u, v);
        }
        (fg ? fg_idx : bg_idx).push_back(i);
    }

    auto subset = [&](const std::vector<std::size_t>& idx) {
        SparseVoxelGrid g;
        g.stride = grid.stride;
        g.voxel_size = grid.voxel_size;
        g.origin = grid.origin;
        g.coords.reserve(idx.size());
        g.features.resize(static_cast<Eigen::Index>(idx.size()), grid.features.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            g.coords.push_back(grid.coords[idx[i]]);
            g.features.row(static_cast<Eigen::Index>(i)) =
                grid.features.row(static_cast<Eigen::Index>(idx[i]));
        }
        sort_lex(g);
        return g;
    };
    return {subset(fg_idx), subset(bg_idx)};
}

SparseVoxelGrid densify_foreground(const SparseVoxelGrid& grid) {
    SparseVoxelGrid out;
    out.stride = grid.stride;
    out.voxel_size = grid.voxel_size;
    out.origin = grid.origin;
    if (grid.size() == 0) {
        out.features.resize(0, grid.features.cols());
        return out;
    }

    std::unordered_map<std::uint64_t, std::size_t> existing;
    existing.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) existing.emplace(grid.coords[i].key(), i);

    struct Acc {
        Coord coord;
        Eigen::VectorXd sum;
        std::size_t count = 0;
    };
    std::unordered_map<std::uint64_t, Acc> fresh;
    fresh.reserve(grid.size() * 8);

    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Coord& c = grid.coords[i];
        for (int dx = -1; dx <= 1; ++dx) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dz = -1; dz <= 1; ++dz) {
                    const Coord n{c.x + dx, c.y + dy, c.z + dz};
                    const std::uint64_t k = n.key();
                    if (existing.contains(k)) continue;
                    auto [it, inserted] = fresh.try_emplace(k);
                    if (inserted) {
                        it->second.coord = n;
                        it->second.sum = Eigen::VectorXd::Zero(grid.features.cols());
                    }
                    it->second.sum += grid.features.row(static_cast<Eigen::Index>(i)).transpose();
                    ++it->second.count;
                }
            }
        }
    }

    out.coords = grid.coords;
    for (const auto& [k, acc] : fresh) out.coords.push_back(acc.coord);
    std::sort(out.coords.begin(), out.coords.end());

    out.features.resize(static_cast<Eigen::Index>(out.coords.size()), grid.features.cols());
    for (std::size_t i = 0; i < out.coords.size(); ++i) {
        const std::uint64_t k = out.coords[i].key();
        if (auto it = existing.find(k); it != existing.end()) {
            out.features.row(static_cast<Eigen::Index>(i)) =
                grid.features.row(static_cast<Eigen::Index>(it->second));
        } else {
            const Acc& acc = fresh.at(k);
            out.features.row(static_cast<Eigen::Index>(i)) =
                (acc.sum / static_cast<double>(acc.count)).transpose();
        }
    }
    return out;
}

SparseVoxelGrid sparsify_background(const SparseVoxelGrid& grid, int s) {
    if (s < 1) throw std::invalid_argument("sparsify_background: s must be >= 1");
    SparseVoxelGrid out;
    out.stride = grid.stride * s;
    out.voxel_size = grid.voxel_size;
    out.origin = grid.origin;

    struct Acc {
        Coord coord;
        Eigen::VectorXd max;
    };
    std::unordered_map<std::uint64_t, Acc> groups;
    groups.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Coord& c = grid.coords[i];
        const Coord g{floor_div(c.x, s), floor_div(c.y, s), floor_div(c.z, s)};
        auto [it, fresh] = groups.try_emplace(g.key());
        if (fresh) {
            it->second.coord = g;
            it->second.max = grid.features.row(static_cast<Eigen::Index>(i)).transpose();
        } else {
            it->second.max =
                it->second.max.cwiseMax(grid.features.row(static_cast<Eigen::Index>(i)).transpose());
        }
    }

    out.coords.reserve(groups.size());
    for (const auto& [k, acc] : groups) out.coords.push_back(acc.coord);
    std::sort(out.coords.begin(), out.coords.end());

    out.features.resize(static_cast<Eigen::Index>(out.coords.size()), grid.features.cols());
    for (std::size_t i = 0; i < out.coords.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) = groups.at(out.coords[i].key()).max.transpose();
    }
    return out;
}

SparseVoxelGrid merge(const SparseVoxelGrid& fg, const SparseVoxelGrid& bg) {
    if (fg.voxel_size != bg.voxel_size || fg.origin != bg.origin) {
        throw std::invalid_argument("merge: voxel_size/origin mismatch");
    }
    if (bg.stride % fg.stride != 0) {
        throw std::invalid_argument("merge: bg stride is not a multiple of fg stride");
    }
    if (fg.size() > 0 && bg.size() > 0 && fg.features.cols() != bg.features.cols()) {
        throw std::invalid_argument("merge: feature dimension mismatch");
    }
    const std::int32_t ratio = bg.stride / fg.stride;

    SparseVoxelGrid out;
    out.stride = fg.stride;
    out.voxel_size = fg.voxel_size;
    out.origin = fg.origin;

    const Eigen::Index dim = fg.size() > 0 ? fg.features.cols() : bg.features.cols();
    std::unordered_map<std::uint64_t, std::size_t> taken;
    taken.reserve(fg.size());

    std::vector<Coord> coords;
    std::vector<Eigen::Index> src_row;  // fg rows positive offset, bg rows after fg block
    coords.reserve(fg.size() + bg.size());
    for (std::size_t i = 0; i < fg.size(); ++i) {
        taken.emplace(fg.coords[i].key(), i);
        coords.push_back(fg.coords[i]);
        src_row.push_back(static_cast<Eigen::Index>(i));
    }
    for (std::size_t i = 0; i < bg.size(); ++i) {
        const Coord scaled{bg.coords[i].x * ratio, bg.coords[i].y * ratio, bg.coords[i].z * ratio};
        if (taken.contains(scaled.key())) continue;  // foreground wins collisions
        coords.push_back(scaled);
        src_row.push_back(static_cast<Eigen::Index>(fg.size() + i));
    }

    std::vector<std::size_t> order(coords.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return coords[a] < coords[b]; });

    out.coords.resize(coords.size());
    out.features.resize(static_cast<Eigen::Index>(coords.size()), dim);
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::size_t src = order[i];
        out.coords[i] = coords[src];
        const Eigen::Index row = src_row[src];
        out.features.row(static_cast<Eigen::Index>(i)) =
            row < static_cast<Eigen::Index>(fg.size())
                ? fg.features.row(row)
                : bg.features.row(row - static_cast<Eigen::Index>(fg.size()));
    }
    return out;
}

}  // namespace hvx::vox
