#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>
#include <vector>

namespace hvx::objective {

// eta order: (distill, importance, center-vote, cluster)
inline constexpr std::array<double, 4> kTrainingSettingEta{2.0, 0.4, 0.8, 0.8};
inline constexpr std::array<double, 4> kFig5OptimumEta{1.0, 0.4, 0.8, 0.8};

struct LossParts {
    double l_cls = 0.0;      // detection classification (external)
    double l_het = 0.0;      // heatmap (external)
    double l_reg = 0.0;      // box regression (external)
    double l_h = 0.0;        // hyperbolic distillation
    double l_s = 0.0;        // importance / focal
    double l_ctr = 0.0;      // center vote
    double l_cluster = 0.0;  // triplet clustering
};

struct LossBundle {
    LossParts parts;
    std::array<double, 4> eta{};
    // multipliers actually applied, in part order:
    // (cls, het, reg, distill, importance, center, cluster)
    std::array<double, 7> coefficients{};
    double total = 0.0;
};

// total = l_cls + l_het + 2*l_reg + eta0*l_h + eta1*l_s + eta2*l_ctr + eta3*l_cluster
// Throws (naming the offending term) if any part or weight is non-finite.
LossBundle combine_losses(const LossParts& parts, const std::array<double, 4>& eta);

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<Eigen::Index> failing;  // coordinates whose error exceeded tol
    bool pass = true;
};

// Central-difference check of an analytic gradient:
//   numeric_i = (f(x + h e_i) - f(x - h e_i)) / (2h)
//   rel_i = |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-8)
// Throws if f returns a non-finite value at any probe point.
GradCheckReport grad_check(const std::function<double(const Eigen::VectorXd&)>& f,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& analytic,
                           double h = 1e-6, double tol = 1e-5);

}  // namespace hvx::objective
