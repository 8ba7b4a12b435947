#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hvx::gradsuite {

struct OpReport {
    std::string op;
    int trials = 0;
    double max_rel_err = 0.0;
    bool pass = true;
};

// Central-difference verification of every analytic gradient in the library:
// hyperbolic distillation, gated fusion (parameters and feature inputs),
// focal importance, center vote, and triplet clustering. Each op runs
// `trials` independently seeded random instances; instances are resampled
// away from non-differentiable kinks (ball-clip threshold, relu zeros,
// triplet hinge) before checking. `k_abs` and `eps` select the ball the
// distillation check runs on; the other ops are curvature-free.
std::vector<OpReport> run_all(int trials, std::uint64_t seed, double h = 1e-6,
                              double tol = 1e-5, double k_abs = 1.0, double eps = 1e-5);

bool all_pass(const std::vector<OpReport>& reports);

}  // namespace hvx::gradsuite
