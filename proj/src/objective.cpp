#include "hvx/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hvx::objective {

namespace {

void require_finite(double v, const char* name) {
    if (!std::isfinite(v))
        throw std::runtime_error(std::string("combine_losses: non-finite term ") + name);
}

}  // namespace

LossBundle combine_losses(const LossParts& parts, const std::array<double, 4>& eta) {
    require_finite(parts.l_cls, "l_cls");
    require_finite(parts.l_het, "l_het");
    require_finite(parts.l_reg, "l_reg");
    require_finite(parts.l_h, "l_h");
    require_finite(parts.l_s, "l_s");
    require_finite(parts.l_ctr, "l_ctr");
    require_finite(parts.l_cluster, "l_cluster");
    for (std::size_t i = 0; i < eta.size(); ++i)
        if (!std::isfinite(eta[i]))
            throw std::runtime_error("combine_losses: non-finite term eta" + std::to_string(i));

    LossBundle b;
    b.parts = parts;
    b.eta = eta;
    b.coefficients = {1.0, 1.0, 2.0, eta[0], eta[1], eta[2], eta[3]};
    b.total = parts.l_cls + parts.l_het + 2.0 * parts.l_reg + eta[0] * parts.l_h +
              eta[1] * parts.l_s + eta[2] * parts.l_ctr + eta[3] * parts.l_cluster;
    return b;
}

GradCheckReport grad_check(const std::function<double(const Eigen::VectorXd&)>& f,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& analytic, double h,
                           double tol) {
    if (analytic.size() != x.size())
        throw std::runtime_error("grad_check: analytic gradient length differs from x");
    if (!(h > 0.0) || !(tol > 0.0)) throw std::runtime_error("grad_check: h and tol must be > 0");

    GradCheckReport rep;
    Eigen::VectorXd probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("grad_check: objective returned a non-finite value near "
                                     "coordinate " +
                                     std::to_string(i));
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic[i] - numeric) / denom;
        if (rel > rep.max_rel_err) rep.max_rel_err = rel;
        if (rel > tol) rep.failing.push_back(i);
    }
    rep.pass = rep.failing.empty();
    return rep;
}

}  // namespace hvx::objective
