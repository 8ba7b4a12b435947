#include "hvx/gradsuite.hpp"

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

#include "hvx/fago.hpp"
#include "hvx/fusion.hpp"
#include "hvx/hyperball.hpp"
#include "hvx/objective.hpp"
#include "hvx/rng.hpp"
#include "hvx/voxgrid.hpp"

namespace hvx::gradsuite {

namespace {

constexpr double kKinkMargin = 1e-3;

// Central differences at step h carry round-off noise of roughly
// |loss| * 1e-16 / h (~1e-10 for unit-scale losses at h = 1e-6), so an
// analytic entry much smaller than that cannot be confirmed at a relative
// tolerance of 1e-5 no matter how correct it is. Instances whose smallest
// nonzero gradient entry sits near that floor are resampled rather than
// tested. Exact zeros stay: they mark inputs the loss never reads, where
// the difference quotient is bitwise zero as well.
constexpr double kCondFloor = 1e-4;

bool well_conditioned(const Eigen::MatrixXd& g, double floor = kCondFloor) {
    for (Eigen::Index r = 0; r < g.rows(); ++r)
        for (Eigen::Index c = 0; c < g.cols(); ++c) {
            const double a = std::abs(g(r, c));
            if (a != 0.0 && a < floor) return false;
        }
    return true;
}

std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t op, std::uint64_t trial) {
    return seed ^ (op * 0x9e3779b97f4a7c15ULL + trial * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL);
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi,
                              Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
    return m;
}

void merge_report(OpReport& rep, const objective::GradCheckReport& chk) {
    ++rep.trials;
    rep.max_rel_err = std::max(rep.max_rel_err, chk.max_rel_err);
    if (!chk.pass) rep.pass = false;
}

// ---- hyperbolic distillation ------------------------------------------------

OpReport check_distill(int trials, std::uint64_t seed, double h, double tol, double k_abs,
                       double eps) {
    OpReport rep{"hyperbolic_distill", 0, 0.0, true};
    const hyper::PoincareBall ball(-k_abs, eps);
    // entry bound keeps every row norm at or below 0.7x the clip threshold
    // for any curvature; the conditioning floor tracks the loss scale, which
    // grows with the ball radius
    const double entry_bound = 0.35 * ball.clip_norm();
    const double floor = kCondFloor * std::max(1.0, ball.radius());
    for (int t = 0; t < trials; ++t) {
        const std::array<Eigen::Index, 2> rows{3, 4};
        const Eigen::Index dim = 4;

        // rows stay well below the clip threshold: past it the rescale
        // projects out the radial direction exactly, and a difference
        // quotient cannot tell that exact zero from its own round-off
        // noise; the rescale branch is covered by a closed-form Jacobian
        // unit test instead
        std::vector<Eigen::MatrixXd> teacher, student;
        hyper::DistillResult dr;
        bool found = false;
        for (int attempt = 0; attempt < 200 && !found; ++attempt) {
            Rng rng(trial_seed(seed, 1, static_cast<std::uint64_t>(t) * 211 +
                                            static_cast<std::uint64_t>(attempt)));
            teacher.clear();
            student.clear();
            for (const Eigen::Index n : rows) {
                teacher.push_back(random_matrix(n, dim, -entry_bound, entry_bound, rng));
                student.push_back(random_matrix(n, dim, -entry_bound, entry_bound, rng));
            }
            dr = hyper::hyperbolic_distill_loss(teacher, student, ball);
            found = true;
            for (const auto* side : {&dr.grad_teacher, &dr.grad_student})
                for (const auto& m : *side) found = found && well_conditioned(m, floor);
        }
        if (!found)
            throw std::runtime_error("distill grad check: no well-conditioned instance found");

        Eigen::Index total = 0;
        for (const auto& m : teacher) total += m.size();
        Eigen::VectorXd x(2 * total);
        Eigen::Index at = 0;
        for (const auto* side : {&teacher, &student})
            for (const auto& m : *side)
                for (Eigen::Index r = 0; r < m.rows(); ++r)
                    for (Eigen::Index c = 0; c < m.cols(); ++c) x[at++] = m(r, c);

        auto rebuild = [&](const Eigen::VectorXd& v) {
            auto tt = teacher;
            auto ss = student;
            Eigen::Index p = 0;
            for (auto* side : {&tt, &ss})
                for (auto& m : *side)
                    for (Eigen::Index r = 0; r < m.rows(); ++r)
                        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = v[p++];
            return std::pair{tt, ss};
        };

        const auto f = [&](const Eigen::VectorXd& v) {
            const auto [tt, ss] = rebuild(v);
            return hyper::hyperbolic_distill_loss(tt, ss, ball).loss;
        };

        Eigen::VectorXd analytic(x.size());
        at = 0;
        for (const auto* side : {&dr.grad_teacher, &dr.grad_student})
            for (const auto& m : *side)
                for (Eigen::Index r = 0; r < m.rows(); ++r)
                    for (Eigen::Index c = 0; c < m.cols(); ++c) analytic[at++] = m(r, c);

        merge_report(rep, objective::grad_check(f, x, analytic, h, tol));
    }
    return rep;
}

// ---- gated fusion -----------------------------------------------------------

// smallest |pre-activation| over every relu layer, recomputed from the trace
double min_relu_margin(const fusion::Mlp& mlp, const fusion::MlpTrace& trace) {
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t li = 0; li < mlp.layers.size(); ++li) {
        if (mlp.layers[li].act != fusion::Activation::Relu) continue;
        const auto& in = trace.inputs[li];
        for (Eigen::Index r = 0; r < in.rows(); ++r) {
            const Eigen::VectorXd z =
                mlp.layers[li].w * in.row(r).transpose() + mlp.layers[li].b;
            margin = std::min(margin, z.cwiseAbs().minCoeff());
        }
    }
    return margin;
}

OpReport check_fusion(int trials, std::uint64_t seed, double h, double tol) {
    OpReport rep{"gated_fusion", 0, 0.0, true};
    const Eigen::Index d = 3, rows = 4;
    for (int t = 0; t < trials; ++t) {
        fusion::Mlp fuse, gate;
        Eigen::MatrixXd f2d, fvox, probe;
        Eigen::VectorXd analytic;
        bool found = false;
        for (int attempt = 0; attempt < 200 && !found; ++attempt) {
            Rng rng(trial_seed(seed, 2, static_cast<std::uint64_t>(t) * 211 +
                                            static_cast<std::uint64_t>(attempt)));
            fuse = fusion::make_mlp(2 * static_cast<int>(d), {static_cast<int>(d)},
                                    static_cast<int>(d), fusion::Activation::None, rng);
            gate = fusion::make_mlp(static_cast<int>(d), {static_cast<int>(d)},
                                    static_cast<int>(d), fusion::Activation::None, rng);
            f2d = random_matrix(rows, d, -1.0, 1.0, rng);
            fvox = random_matrix(rows, d, -1.0, 1.0, rng);
            probe = random_matrix(rows, d, -1.0, 1.0, rng);
            const fusion::FuseTrace tr = fusion::fuse_forward(f2d, fvox, fuse, gate);
            if (std::min(min_relu_margin(fuse, tr.fuse_trace),
                         min_relu_margin(gate, tr.gate_trace)) <= kKinkMargin)
                continue;
            const fusion::FuseGrads fg = fusion::fuse_backward(fuse, gate, tr, probe);
            analytic.resize(fuse.num_params() + gate.num_params() + 2 * rows * d);
            analytic << fg.fuse_mlp.pack(), fg.gate_mlp.pack(),
                Eigen::Map<const Eigen::VectorXd>(fg.d_f2d.data(), fg.d_f2d.size()),
                Eigen::Map<const Eigen::VectorXd>(fg.d_fvox.data(), fg.d_fvox.size());
            found = well_conditioned(analytic);
        }
        if (!found)
            throw std::runtime_error("fusion grad check: no well-conditioned instance found");

        const Eigen::Index np_fuse = fuse.num_params();
        const Eigen::Index np_gate = gate.num_params();
        Eigen::VectorXd x(np_fuse + np_gate + 2 * rows * d);
        x << fuse.pack(), gate.pack(),
            Eigen::Map<const Eigen::VectorXd>(f2d.data(), f2d.size()),
            Eigen::Map<const Eigen::VectorXd>(fvox.data(), fvox.size());

        auto split = [&](const Eigen::VectorXd& v) {
            fusion::Mlp fu = fuse, ga = gate;
            fu.unpack(v.segment(0, np_fuse));
            ga.unpack(v.segment(np_fuse, np_gate));
            Eigen::MatrixXd a = f2d, b = fvox;
            Eigen::Map<Eigen::VectorXd>(a.data(), a.size()) =
                v.segment(np_fuse + np_gate, rows * d);
            Eigen::Map<Eigen::VectorXd>(b.data(), b.size()) =
                v.segment(np_fuse + np_gate + rows * d, rows * d);
            return std::tuple{fu, ga, a, b};
        };

        const auto f = [&](const Eigen::VectorXd& v) {
            const auto [fu, ga, a, b] = split(v);
            return fusion::fuse_forward(a, b, fu, ga).f_2d3d.cwiseProduct(probe).sum();
        };

        merge_report(rep, objective::grad_check(f, x, analytic, h, tol));
    }
    return rep;
}

// ---- focal importance -------------------------------------------------------

OpReport check_focal(int trials, std::uint64_t seed, double h, double tol) {
    OpReport rep{"focal_importance", 0, 0.0, true};
    const std::array<double, 3> gammas{1.0, 2.0, 0.5};
    for (int t = 0; t < trials; ++t) {
        Rng rng(trial_seed(seed, 3, static_cast<std::uint64_t>(t)));
        const Eigen::Index m = 8;
        Eigen::VectorXd scores(m);
        std::vector<std::uint8_t> labels(static_cast<std::size_t>(m));
        for (Eigen::Index i = 0; i < m; ++i) {
            scores[i] = rng.uniform(0.05, 0.95);
            labels[static_cast<std::size_t>(i)] = rng.uniform() < 0.5 ? 0 : 1;
        }
        const double gamma = gammas[static_cast<std::size_t>(t) % gammas.size()];

        const auto f = [&](const Eigen::VectorXd& v) {
            return fago::focal_importance_loss(v, labels, 0.25, 1, gamma).loss;
        };
        const fago::FocalResult fr = fago::focal_importance_loss(scores, labels, 0.25, 1, gamma);
        merge_report(rep, objective::grad_check(f, scores, fr.grad, h, tol));
    }
    return rep;
}

// ---- center vote ------------------------------------------------------------

OpReport check_vote(int trials, std::uint64_t seed, double h, double tol) {
    OpReport rep{"center_vote", 0, 0.0, true};
    for (int t = 0; t < trials; ++t) {
        Rng rng(trial_seed(seed, 4, static_cast<std::uint64_t>(t)));
        const Eigen::Index n = 6;
        const Eigen::MatrixXd centers = random_matrix(n, 3, -2.0, 2.0, rng);
        const Eigen::MatrixXd offsets = random_matrix(n, 3, -1.0, 1.0, rng);
        std::vector<fago::Box3D> boxes(2);
        for (auto& b : boxes) {
            b.center = Eigen::Vector3d(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                                       rng.uniform(-2.0, 2.0));
            b.size = Eigen::Vector3d::Ones();
        }
        std::vector<int> assign(static_cast<std::size_t>(n));
        for (auto& a : assign) a = rng.uniform_int(-1, 1);

        const auto f = [&](const Eigen::VectorXd& v) {
            Eigen::MatrixXd off = offsets;
            Eigen::Map<Eigen::VectorXd>(off.data(), off.size()) = v;
            return fago::center_vote_loss(centers, off, assign, boxes).loss;
        };
        const fago::VoteResult vr = fago::center_vote_loss(centers, offsets, assign, boxes);
        const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(offsets.data(), offsets.size());
        const Eigen::VectorXd analytic =
            Eigen::Map<const Eigen::VectorXd>(vr.grad_offsets.data(), vr.grad_offsets.size());
        merge_report(rep, objective::grad_check(f, x, analytic, h, tol));
    }
    return rep;
}

// ---- triplet clustering -----------------------------------------------------

OpReport check_triplet(int trials, std::uint64_t seed, double h, double tol) {
    OpReport rep{"triplet_cluster", 0, 0.0, true};
    const std::size_t n = 6;
    const Eigen::Index dim = 3;
    const double margin = 1.0;
    for (int t = 0; t < trials; ++t) {
        vox::SparseVoxelGrid grid;
        bool found = false;
        for (int attempt = 0; attempt < 200 && !found; ++attempt) {
            Rng rng(trial_seed(seed, 5, static_cast<std::uint64_t>(t) * 211 +
                                            static_cast<std::uint64_t>(attempt)));
            grid = vox::SparseVoxelGrid{};
            grid.voxel_size = 0.5;
            while (grid.coords.size() < n) {
                const vox::Coord c{static_cast<std::int32_t>(rng.uniform_int(0, 5)),
                                   static_cast<std::int32_t>(rng.uniform_int(0, 5)),
                                   static_cast<std::int32_t>(rng.uniform_int(0, 5))};
                bool dup = false;
                for (const auto& e : grid.coords) dup = dup || e == c;
                if (!dup) grid.coords.push_back(c);
            }
            grid.features = random_matrix(static_cast<Eigen::Index>(n), dim, -1.0, 1.0, rng);

            // keep every hinge pre-activation away from its kink: perturbing
            // one feature entry by h moves a squared distance by O(h)
            found = true;
            std::vector<Eigen::Vector3d> centers(n);
            for (std::size_t i = 0; i < n; ++i) centers[i] = grid.center(grid.coords[i]);
            const auto coord_less = [&](std::size_t a, std::size_t b) {
                const auto& ca = grid.coords[a];
                const auto& cb = grid.coords[b];
                return std::tie(ca.x, ca.y, ca.z) < std::tie(cb.x, cb.y, cb.z);
            };
            for (std::size_t i = 0; i < n && found; ++i) {
                std::size_t pos = n, neg = n;
                double pd = 0.0, nd = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) continue;
                    const double d2 = (centers[j] - centers[i]).squaredNorm();
                    if (pos == n || d2 < pd || (d2 == pd && coord_less(j, pos))) {
                        pd = d2;
                        pos = j;
                    }
                    if (neg == n || d2 > nd || (d2 == nd && coord_less(j, neg))) {
                        nd = d2;
                        neg = j;
                    }
                }
                const double hinge =
                    (grid.features.row(static_cast<Eigen::Index>(i)) -
                     grid.features.row(static_cast<Eigen::Index>(pos)))
                        .squaredNorm() -
                    (grid.features.row(static_cast<Eigen::Index>(i)) -
                     grid.features.row(static_cast<Eigen::Index>(neg)))
                        .squaredNorm() +
                    margin;
                found = std::abs(hinge) > kKinkMargin;
            }
        }
        if (!found) throw std::runtime_error("triplet grad check: no kink-free instance found");

        const auto f = [&](const Eigen::VectorXd& v) {
            vox::SparseVoxelGrid g = grid;
            Eigen::Map<Eigen::VectorXd>(g.features.data(), g.features.size()) = v;
            return fago::triplet_cluster_loss(g, margin).loss;
        };
        const fago::TripletResult tr = fago::triplet_cluster_loss(grid, margin);
        const Eigen::VectorXd x =
            Eigen::Map<const Eigen::VectorXd>(grid.features.data(), grid.features.size());
        const Eigen::VectorXd analytic =
            Eigen::Map<const Eigen::VectorXd>(tr.grad_features.data(), tr.grad_features.size());
        merge_report(rep, objective::grad_check(f, x, analytic, h, tol));
    }
    return rep;
}

}  // namespace

std::vector<OpReport> run_all(int trials, std::uint64_t seed, double h, double tol, double k_abs,
                              double eps) {
    if (trials < 1) throw std::runtime_error("grad suite: trials must be >= 1");
    if (!(k_abs > 0.0) || !std::isfinite(k_abs))
        throw std::runtime_error("grad suite: k_abs must be a positive finite number");
    if (!(eps > 0.0) || eps >= 1.0)
        throw std::runtime_error("grad suite: eps must lie in (0, 1)");
    return {check_distill(trials, seed, h, tol, k_abs, eps), check_fusion(trials, seed, h, tol),
            check_focal(trials, seed, h, tol), check_vote(trials, seed, h, tol),
            check_triplet(trials, seed, h, tol)};
}

bool all_pass(const std::vector<OpReport>& reports) {
    for (const auto& r : reports)
        if (!r.pass) return false;
    return true;
}

}  // namespace hvx::gradsuite
