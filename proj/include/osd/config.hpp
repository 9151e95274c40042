#pragma once

namespace osd {

/// Numeric tolerances shared by every module. A single mutable instance is
/// reachable through `numeric_config()`; tests may tweak it, library code only
/// reads it.
struct NumericConfig {
    // Jacobi eigensolver: stop when off-diagonal Frobenius <= eigen_tol * ||M||_F.
    double eigen_tol = 1e-12;
    int eigen_max_sweeps = 100;
    // spd_inverse rejects min eigenvalue <= spd_tol * ||M||_F.
    double spd_tol = 1e-12;
    // psd_factor / PSD checks accept min eigenvalue >= -psd_tol * ||M||_F.
    double psd_tol = 1e-9;
    // E-optimality: relative eigen-gap below which the criterion is not differentiable.
    double eigen_gap_error = 1e-8;
    // Relative eigen-gap below which derivative checks are considered unreliable.
    double eigen_gap_warn = 1e-3;
    // Scheme budget: |sum(mu) - n| <= budget_tol * n.
    double budget_tol = 1e-9;
    // Coefficients with c_i <= zero_coef_rel_tol * max_j c_j count as zero.
    double zero_coef_rel_tol = 1e-20;
};

inline NumericConfig& numeric_config() {
    static NumericConfig cfg;
    return cfg;
}

}  // namespace osd
