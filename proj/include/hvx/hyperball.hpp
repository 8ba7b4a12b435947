#pragma once

#include <Eigen/Core>
#include <vector>

namespace hvx::hyper {

// Poincare ball of radius 1/sqrt(|k|). Operations use |k|; eps is the
// relative margin kept between clipped points and the boundary.
struct PoincareBall {
    double k = -1.0;
    double eps = 1e-5;

    PoincareBall() = default;
    PoincareBall(double curvature, double clip_eps);

    double abs_k() const;
    double radius() const;        // 1/sqrt(|k|)
    double clip_norm() const;     // (1 - eps) * radius
};

// Scales x onto the sphere of radius (1-eps)/sqrt(|k|) when it lies outside;
// points at or below that norm pass through unchanged.
Eigen::VectorXd clip_to_ball(const Eigen::VectorXd& x, const PoincareBall& ball);

// Mobius addition z (+) x on the ball; the result is re-clipped to guard
// against rounding pushing it onto the boundary.
Eigen::VectorXd mobius_add(const Eigen::VectorXd& z, const Eigen::VectorXd& x,
                           const PoincareBall& ball);

// Log map at the origin: (1/sqrt|k|) atanh(sqrt|k| ||x||) x/||x||.
// ||x|| < 1e-15 maps to the zero vector.
Eigen::VectorXd log_map_zero(const Eigen::VectorXd& x, const PoincareBall& ball);

// Vector-Jacobian product of log_map_zero(clip_to_ball(v)) at v.
// Both Jacobians are symmetric, so this is also the J*g product.
Eigen::VectorXd log_clip_chain_vjp(const Eigen::VectorXd& v, const Eigen::VectorXd& g,
                                   const PoincareBall& ball);

struct DistillResult {
    double loss = 0.0;
    std::vector<Eigen::MatrixXd> grad_teacher;
    std::vector<Eigen::MatrixXd> grad_student;
};

// Per-stride feature distillation in the tangent space at the origin.
// Each row of teacher[t]/student[t] is one voxel's feature vector; both are
// passed through clip_to_ball then log_map_zero, and the stride's loss is the
// Frobenius norm of the stacked row differences. Losses are summed over
// strides, and analytic gradients of the full chain are returned for every
// input entry (zero at the norm's kink when teacher == student).
DistillResult hyperbolic_distill_loss(const std::vector<Eigen::MatrixXd>& teacher,
                                      const std::vector<Eigen::MatrixXd>& student,
                                      const PoincareBall& ball);

}  // namespace hvx::hyper
