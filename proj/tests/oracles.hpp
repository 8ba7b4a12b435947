#pragma once

// Brute-force reference implementations of the discrete voxel-set operations,
// written as directly as possible (ordered maps, linear scans, no shared
// helpers beyond the public point projector). The optimized library versions
// are required to agree with these exactly: copy/compare-style ops must match
// bitwise, and averaged features must match because both sides accumulate
// per-cell sums in the same canonical order (point/row index order), which is
// part of the library's determinism contract.

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "hvx/fago.hpp"
#include "hvx/rng.hpp"
#include "hvx/voxgrid.hpp"

namespace oracle {

using CoordKey = std::array<std::int32_t, 3>;

inline CoordKey key_of(const hvx::vox::Coord& c) { return {c.x, c.y, c.z}; }

inline hvx::vox::Coord coord_of(const CoordKey& k) { return {k[0], k[1], k[2]}; }

// ---------------------------------------------------------------------------
// voxelize: mean of member point features per cell (sum in point order), or
// the member count broadcast when no features are given.
inline hvx::vox::SparseVoxelGrid voxelize(std::span<const Eigen::Vector3d> points,
                                          std::span<const Eigen::VectorXd> point_features,
                                          double voxel_size, const Eigen::Vector3d& origin,
                                          int stride, int occupancy_dim = 1) {
    const bool with_features = !point_features.empty();
    const double cell = voxel_size * stride;
    const int dim =
        with_features ? static_cast<int>(point_features[0].size()) : occupancy_dim;

    std::map<CoordKey, std::pair<Eigen::VectorXd, std::size_t>> cells;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const CoordKey k{
            static_cast<std::int32_t>(std::floor((points[i].x() - origin.x()) / cell)),
            static_cast<std::int32_t>(std::floor((points[i].y() - origin.y()) / cell)),
            static_cast<std::int32_t>(std::floor((points[i].z() - origin.z()) / cell))};
        auto [it, fresh] = cells.try_emplace(k, Eigen::VectorXd::Zero(dim), std::size_t{0});
        if (with_features) it->second.first += point_features[i];
        ++it->second.second;
    }

    hvx::vox::SparseVoxelGrid g;
    g.stride = stride;
    g.voxel_size = voxel_size;
    g.origin = origin;
    g.features.resize(static_cast<Eigen::Index>(cells.size()), dim);
    Eigen::Index row = 0;
    for (const auto& [k, acc] : cells) {  // std::map iterates in lex order
        g.coords.push_back(coord_of(k));
        if (with_features) {
            g.features.row(row) = (acc.first / static_cast<double>(acc.second)).transpose();
        } else {
            g.features.row(row).setConstant(static_cast<double>(acc.second));
        }
        ++row;
    }
    return g;
}

// ---------------------------------------------------------------------------
// partition: foreground iff the projected center is valid and the mask bit at
// the floored pixel is set. Projection reuses the public point projector; the
// split, ordering, and mask lookup are re-derived here.
inline std::pair<hvx::vox::SparseVoxelGrid, hvx::vox::SparseVoxelGrid> partition_fg_bg(
    const hvx::vox::SparseVoxelGrid& grid, const hvx::vox::ForegroundMask& mask,
    const hvx::vox::CameraModel& cam) {
    std::vector<std::size_t> fg_rows, bg_rows;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const hvx::vox::Projection pr = hvx::vox::project_point(grid.center(grid.coords[i]), cam);
        bool fg = false;
        if (pr.valid) {
            const int u = static_cast<int>(std::floor(pr.pixel.x()));
            const int v = static_cast<int>(std::floor(pr.pixel.y()));
            fg = mask.at(u, v);
        }
        (fg ? fg_rows : bg_rows).push_back(i);
    }
    const auto build = [&](const std::vector<std::size_t>& rows) {
        std::vector<std::size_t> order = rows;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return key_of(grid.coords[a]) < key_of(grid.coords[b]);
        });
        hvx::vox::SparseVoxelGrid g;
        g.stride = grid.stride;
        g.voxel_size = grid.voxel_size;
        g.origin = grid.origin;
        g.features.resize(static_cast<Eigen::Index>(order.size()), grid.features.cols());
        for (std::size_t i = 0; i < order.size(); ++i) {
            g.coords.push_back(grid.coords[order[i]]);
            g.features.row(static_cast<Eigen::Index>(i)) =
                grid.features.row(static_cast<Eigen::Index>(order[i]));
        }
        return g;
    };
    return {build(fg_rows), build(bg_rows)};
}

// ---------------------------------------------------------------------------
// densify: 27-neighborhood dilation; existing cells keep their feature, fresh
// cells average the covering source rows (accumulated in source-row order).
inline hvx::vox::SparseVoxelGrid densify_foreground(const hvx::vox::SparseVoxelGrid& grid) {
    hvx::vox::SparseVoxelGrid out;
    out.stride = grid.stride;
    out.voxel_size = grid.voxel_size;
    out.origin = grid.origin;
    if (grid.size() == 0) {
        out.features.resize(0, grid.features.cols());
        return out;
    }

    std::map<CoordKey, std::size_t> existing;
    for (std::size_t i = 0; i < grid.size(); ++i) existing.emplace(key_of(grid.coords[i]), i);

    std::map<CoordKey, std::pair<Eigen::VectorXd, std::size_t>> fresh;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    const CoordKey k{grid.coords[i].x + dx, grid.coords[i].y + dy,
                                     grid.coords[i].z + dz};
                    if (existing.count(k)) continue;
                    auto [it, inserted] = fresh.try_emplace(
                        k, Eigen::VectorXd::Zero(grid.features.cols()), std::size_t{0});
                    it->second.first += grid.features.row(static_cast<Eigen::Index>(i)).transpose();
                    ++it->second.second;
                }
    }

    std::vector<CoordKey> keys;
    for (const auto& [k, row] : existing) keys.push_back(k);
    for (const auto& [k, acc] : fresh) keys.push_back(k);
    std::sort(keys.begin(), keys.end());

    out.features.resize(static_cast<Eigen::Index>(keys.size()), grid.features.cols());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        out.coords.push_back(coord_of(keys[i]));
        const auto it = existing.find(keys[i]);
        if (it != existing.end()) {
            out.features.row(static_cast<Eigen::Index>(i)) =
                grid.features.row(static_cast<Eigen::Index>(it->second));
        } else {
            const auto& [sum, count] = fresh.at(keys[i]);
            out.features.row(static_cast<Eigen::Index>(i)) =
                (sum / static_cast<double>(count)).transpose();
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// sparsify: strided max-pool onto the coarser lattice (floor division).
inline hvx::vox::SparseVoxelGrid sparsify_background(const hvx::vox::SparseVoxelGrid& grid,
                                                     int s) {
    const auto fdiv = [](std::int32_t a, std::int32_t s_) {
        std::int32_t q = a / s_;
        if (a % s_ != 0 && a < 0) --q;
        return q;
    };
    hvx::vox::SparseVoxelGrid out;
    out.stride = grid.stride * s;
    out.voxel_size = grid.voxel_size;
    out.origin = grid.origin;

    std::map<CoordKey, Eigen::VectorXd> groups;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const CoordKey k{fdiv(grid.coords[i].x, s), fdiv(grid.coords[i].y, s),
                         fdiv(grid.coords[i].z, s)};
        const Eigen::VectorXd row = grid.features.row(static_cast<Eigen::Index>(i)).transpose();
        auto [it, fresh] = groups.try_emplace(k, row);
        if (!fresh) it->second = it->second.cwiseMax(row);
    }

    out.features.resize(static_cast<Eigen::Index>(groups.size()), grid.features.cols());
    Eigen::Index row = 0;
    for (const auto& [k, mx] : groups) {
        out.coords.push_back(coord_of(k));
        out.features.row(row++) = mx.transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------
// merge: re-express bg on fg's lattice and superimpose, foreground winning.
inline hvx::vox::SparseVoxelGrid merge(const hvx::vox::SparseVoxelGrid& fg,
                                       const hvx::vox::SparseVoxelGrid& bg) {
    const std::int32_t ratio = static_cast<std::int32_t>(bg.stride / fg.stride);
    std::map<CoordKey, Eigen::VectorXd> cells;
    for (std::size_t i = 0; i < fg.size(); ++i)
        cells.emplace(key_of(fg.coords[i]),
                      fg.features.row(static_cast<Eigen::Index>(i)).transpose());
    for (std::size_t i = 0; i < bg.size(); ++i) {
        const CoordKey k{bg.coords[i].x * ratio, bg.coords[i].y * ratio, bg.coords[i].z * ratio};
        cells.try_emplace(k, bg.features.row(static_cast<Eigen::Index>(i)).transpose());
    }

    hvx::vox::SparseVoxelGrid out;
    out.stride = fg.stride;
    out.voxel_size = fg.voxel_size;
    out.origin = fg.origin;
    const Eigen::Index dim = fg.size() > 0 ? fg.features.cols() : bg.features.cols();
    out.features.resize(static_cast<Eigen::Index>(cells.size()), dim);
    Eigen::Index row = 0;
    for (const auto& [k, f] : cells) {
        out.coords.push_back(coord_of(k));
        out.features.row(row++) = f.transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------
// label: a voxel is labeled iff its center lies in some box; the assigned box
// is the smallest-volume container, lowest index on volume ties.
inline hvx::fago::LabelResult label_foreground(const hvx::vox::SparseVoxelGrid& grid,
                                               std::span<const hvx::fago::Box3D> boxes) {
    hvx::fago::LabelResult res;
    res.labels.assign(grid.size(), 0);
    res.box_index.assign(grid.size(), -1);
    const double cell = grid.voxel_size * grid.stride;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Eigen::Vector3d p =
            grid.origin + Eigen::Vector3d((grid.coords[i].x + 0.5) * cell,
                                          (grid.coords[i].y + 0.5) * cell,
                                          (grid.coords[i].z + 0.5) * cell);
        int best = -1;
        double best_vol = 0.0;
        for (std::size_t bi = 0; bi < boxes.size(); ++bi) {
            const hvx::fago::Box3D& b = boxes[bi];
            const double c = std::cos(b.yaw), s = std::sin(b.yaw);
            const Eigen::Vector3d d = p - b.center;
            const double lx = c * d.x() + s * d.y();
            const double ly = -s * d.x() + c * d.y();
            const bool inside = std::abs(lx) <= 0.5 * b.size.x() &&
                                std::abs(ly) <= 0.5 * b.size.y() &&
                                std::abs(d.z()) <= 0.5 * b.size.z();
            if (!inside) continue;
            const double vol = b.size.x() * b.size.y() * b.size.z();
            if (best < 0 || vol < best_vol) {
                best_vol = vol;
                best = static_cast<int>(bi);
            }
        }
        res.box_index[i] = best;
        res.labels[i] = best >= 0 ? 1 : 0;
    }
    return res;
}

// ---------------------------------------------------------------------------
// top-k: keep the k best rows ordered by score descending, lexicographic
// coordinate ascending on score ties.
inline hvx::fago::TopkResult topk_filter(const hvx::vox::SparseVoxelGrid& grid,
                                         const Eigen::VectorXd& scores, int k) {
    std::vector<std::size_t> order(grid.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double sa = scores[static_cast<Eigen::Index>(a)];
        const double sb = scores[static_cast<Eigen::Index>(b)];
        if (sa != sb) return sa > sb;
        return key_of(grid.coords[a]) < key_of(grid.coords[b]);
    });
    order.resize(std::min<std::size_t>(static_cast<std::size_t>(k), order.size()));

    hvx::fago::TopkResult res;
    res.grid.stride = grid.stride;
    res.grid.voxel_size = grid.voxel_size;
    res.grid.origin = grid.origin;
    res.grid.features.resize(static_cast<Eigen::Index>(order.size()), grid.features.cols());
    res.scores.resize(static_cast<Eigen::Index>(order.size()));
    res.indices = order;
    for (std::size_t i = 0; i < order.size(); ++i) {
        res.grid.coords.push_back(grid.coords[order[i]]);
        res.grid.features.row(static_cast<Eigen::Index>(i)) =
            grid.features.row(static_cast<Eigen::Index>(order[i]));
        res.scores[static_cast<Eigen::Index>(i)] = scores[static_cast<Eigen::Index>(order[i])];
    }
    return res;
}

// ---------------------------------------------------------------------------
// exact comparisons and random instance builders shared by the tests

inline bool features_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (a.size() == 0) return true;
    return (a.array() == b.array()).all();
}

inline bool grids_equal(const hvx::vox::SparseVoxelGrid& a, const hvx::vox::SparseVoxelGrid& b) {
    return a.stride == b.stride && a.voxel_size == b.voxel_size && a.origin == b.origin &&
           a.coords == b.coords && features_equal(a.features, b.features);
}

inline hvx::vox::SparseVoxelGrid random_grid(hvx::Rng& rng, std::size_t max_voxels, int dim,
                                             int stride, int coord_range) {
    hvx::vox::SparseVoxelGrid g;
    g.stride = stride;
    g.voxel_size = 0.25;
    g.origin = Eigen::Vector3d(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                               rng.uniform(-1.0, 1.0));
    const std::size_t n = rng.uniform_index(max_voxels + 1);
    std::set<CoordKey> seen;
    while (seen.size() < n) {
        seen.insert(CoordKey{static_cast<std::int32_t>(rng.uniform_int(-coord_range, coord_range)),
                             static_cast<std::int32_t>(rng.uniform_int(-coord_range, coord_range)),
                             static_cast<std::int32_t>(rng.uniform_int(-coord_range, coord_range))});
    }
    // shuffle out of the set's sorted order so ops must sort for themselves
    std::vector<CoordKey> keys(seen.begin(), seen.end());
    for (std::size_t i = keys.size(); i > 1; --i)
        std::swap(keys[i - 1], keys[rng.uniform_index(i)]);
    for (const CoordKey& k : keys) g.coords.push_back(coord_of(k));
    g.features.resize(static_cast<Eigen::Index>(n), dim);
    for (Eigen::Index r = 0; r < g.features.rows(); ++r)
        for (Eigen::Index c = 0; c < g.features.cols(); ++c)
            g.features(r, c) = rng.uniform(-2.0, 2.0);
    return g;
}

inline std::vector<hvx::fago::Box3D> random_boxes(hvx::Rng& rng, std::size_t max_boxes) {
    std::vector<hvx::fago::Box3D> boxes(rng.uniform_index(max_boxes + 1));
    for (auto& b : boxes) {
        b.center = Eigen::Vector3d(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0),
                                   rng.uniform(-3.0, 3.0));
        b.size = Eigen::Vector3d(rng.uniform(0.3, 2.5), rng.uniform(0.3, 2.5),
                                 rng.uniform(0.3, 2.5));
        b.yaw = rng.uniform(0.0, 6.283185307179586);
    }
    return boxes;
}

}  // namespace oracle
