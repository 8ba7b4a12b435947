#include "hvx/hyperball.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "hvx/threading.hpp"

namespace hvx::hyper {

namespace {

constexpr double kZeroNorm = 1e-15;
constexpr std::size_t kRowBlock = 1024;
// Rescaled points land this far inside the clip threshold (relative). The
// margin keeps the recomputed norm below the threshold in floating point, so
// re-clipping passes straight through (bitwise idempotence), and it is applied
// unconditionally so the rescale branch stays a smooth function.
constexpr double kClipSlack = 1e-12;

void require_finite(const Eigen::VectorXd& x, const char* what) {
    if (!x.allFinite()) {
        throw std::invalid_argument(std::string(what) + ": non-finite input vector");
    }
}

}  // namespace

PoincareBall::PoincareBall(double curvature, double clip_eps) : k(curvature), eps(clip_eps) {
    if (!(std::abs(k) > 0.0) || !std::isfinite(k)) {
        throw std::invalid_argument("PoincareBall: |k| must be positive and finite");
    }
    if (!(eps > 0.0 && eps < 1.0)) {
        throw std::invalid_argument("PoincareBall: eps must lie in (0, 1)");
    }
}

double PoincareBall::abs_k() const { return std::abs(k); }
double PoincareBall::radius() const { return 1.0 / std::sqrt(std::abs(k)); }
double PoincareBall::clip_norm() const { return (1.0 - eps) * radius(); }

Eigen::VectorXd clip_to_ball(const Eigen::VectorXd& x, const PoincareBall& ball) {
    require_finite(x, "clip_to_ball");
    const double n = x.norm();
    const double thr = ball.clip_norm();
    if (n <= thr) return x;
    return (thr * (1.0 - kClipSlack) / n) * x;
}

Eigen::VectorXd mobius_add(const Eigen::VectorXd& z, const Eigen::VectorXd& x,
                           const PoincareBall& ball) {
    require_finite(z, "mobius_add");
    require_finite(x, "mobius_add");
    if (z.size() != x.size()) {
        throw std::invalid_argument("mobius_add: dimension mismatch");
    }
    const double ak = ball.abs_k();
    const double zx = z.dot(x);
    const double z2 = z.squaredNorm();
    const double x2 = x.squaredNorm();
    const double den = 1.0 + 2.0 * ak * zx + ak * ak * z2 * x2;
    if (std::abs(den) < 1e-15) {
        throw std::invalid_argument("mobius_add: degenerate input, denominator ~ 0");
    }
    const Eigen::VectorXd out = ((1.0 + 2.0 * ak * zx + ak * x2) * z + (1.0 - ak * z2) * x) / den;
    return clip_to_ball(out, ball);
}

Eigen::VectorXd log_map_zero(const Eigen::VectorXd& x, const PoincareBall& ball) {
    require_finite(x, "log_map_zero");
    const double n = x.norm();
    if (n < kZeroNorm) return Eigen::VectorXd::Zero(x.size());
    const double s = std::sqrt(ball.abs_k());
    return (std::atanh(s * n) / (s * n)) * x;
}

Eigen::VectorXd log_clip_chain_vjp(const Eigen::VectorXd& v, const Eigen::VectorXd& g,
                                   const PoincareBall& ball) {
    const double thr = ball.clip_norm();
    const double nv = v.norm();
    const bool rescaled = nv > thr;
    const double scale = thr * (1.0 - kClipSlack) / nv;  // rescale factor when clipping
    const Eigen::VectorXd y = rescaled ? Eigen::VectorXd(scale * v) : v;

    // d log_map_zero / dy = (f(n)/n) I + ((f'(n) n - f(n)) / n^3) y y^T,
    // f(n) = atanh(s n)/s with s = sqrt(|k|), f'(n) = 1/(1 - |k| n^2)
    const double n = y.norm();
    Eigen::VectorXd h;
    if (n < kZeroNorm) {
        h = g;  // Jacobian tends to identity at the origin
    } else {
        const double ak = ball.abs_k();
        const double s = std::sqrt(ak);
        const double f = std::atanh(s * n) / s;
        const double fp = 1.0 / (1.0 - ak * n * n);
        const double gn = f / n;
        const double beta = (fp * n - f) / (n * n * n);
        h = gn * g + beta * y.dot(g) * y;
    }

    if (!rescaled) return h;
    // d clip / dv = scale * (I - vhat vhat^T) on the rescaling branch
    const Eigen::VectorXd vhat = v / nv;
    return scale * (h - vhat.dot(h) * vhat);
}

DistillResult hyperbolic_distill_loss(const std::vector<Eigen::MatrixXd>& teacher,
                                      const std::vector<Eigen::MatrixXd>& student,
                                      const PoincareBall& ball) {
    if (teacher.size() != student.size()) {
        throw std::invalid_argument("hyperbolic_distill_loss: stride count mismatch");
    }
    DistillResult res;
    res.grad_teacher.reserve(teacher.size());
    res.grad_student.reserve(teacher.size());

    for (std::size_t t = 0; t < teacher.size(); ++t) {
        const Eigen::MatrixXd& ft = teacher[t];
        const Eigen::MatrixXd& fs = student[t];
        if (ft.rows() != fs.rows() || ft.cols() != fs.cols()) {
            throw std::invalid_argument("hyperbolic_distill_loss: stride " + std::to_string(t) +
                                        " teacher/student shape mismatch");
        }
        const Eigen::Index rows = ft.rows();
        Eigen::MatrixXd diff(rows, ft.cols());
        parallel_blocks(static_cast<std::size_t>(rows), kRowBlock,
                        [&](std::size_t, std::size_t lo, std::size_t hi) {
                            for (std::size_t i = lo; i < hi; ++i) {
                                const auto idx = static_cast<Eigen::Index>(i);
                                diff.row(idx) =
                                    (log_map_zero(clip_to_ball(ft.row(idx).transpose(), ball), ball) -
                                     log_map_zero(clip_to_ball(fs.row(idx).transpose(), ball), ball))
                                        .transpose();
                            }
                        });

        const double sq = block_sum(static_cast<std::size_t>(rows), kRowBlock,
                                    [&](std::size_t lo, std::size_t hi) {
                                        double acc = 0.0;
                                        for (std::size_t i = lo; i < hi; ++i) {
                                            acc += diff.row(static_cast<Eigen::Index>(i)).squaredNorm();
                                        }
                                        return acc;
                                    });
        const double loss_t = std::sqrt(sq);
        res.loss += loss_t;

        Eigen::MatrixXd gt = Eigen::MatrixXd::Zero(rows, ft.cols());
        Eigen::MatrixXd gs = Eigen::MatrixXd::Zero(rows, ft.cols());
        if (loss_t > 0.0) {
            parallel_blocks(static_cast<std::size_t>(rows), kRowBlock,
                            [&](std::size_t, std::size_t lo, std::size_t hi) {
                                for (std::size_t i = lo; i < hi; ++i) {
                                    const auto idx = static_cast<Eigen::Index>(i);
                                    const Eigen::VectorXd gd = diff.row(idx).transpose() / loss_t;
                                    gt.row(idx) =
                                        log_clip_chain_vjp(ft.row(idx).transpose(), gd, ball)
                                            .transpose();
                                    gs.row(idx) =
                                        -log_clip_chain_vjp(fs.row(idx).transpose(), gd, ball)
                                             .transpose();
                                }
                            });
        }
        res.grad_teacher.push_back(std::move(gt));
        res.grad_student.push_back(std::move(gs));
    }
    return res;
}

}  // namespace hvx::hyper
