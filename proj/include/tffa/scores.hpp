#pragma once

#include "tffa/grid.hpp"
#include "tffa/tensor_io.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace tffa {

// Truncated temporal basis: evaluations E (P x J) on the even time grid
// and the second-derivative penalty D with (D)_{p,q} = <e_p'', e_q''>.
struct TemporalBasis {
    int p = 0;
    Eigen::MatrixXd e;  // P x J
    Eigen::MatrixXd d;  // P x P, symmetric PSD
};

// Cubic B-splines on [0,1] with equally spaced interior knots (clamped
// ends). E by evaluation at the time grid; D by exact Gauss-Legendre
// integration of the piecewise-quadratic second-derivative products.
TemporalBasis build_basis(int p, std::int64_t n_time, int degree = 3);

// All P basis values (or derivatives of order `deriv`) at x in [0,1].
Eigen::VectorXd bspline_values(int p, int degree, double x, int deriv = 0);

struct FactorScores {
    enum class Method { Fosr, Pwls };
    Method method = Method::Fosr;
    Eigen::MatrixXd a;      // K x P basis coefficients (empty for PWLS)
    Eigen::MatrixXd f_hat;  // K x J evaluated factor curves
    Eigen::VectorXd gamma;  // per-component penalty actually used
};

// Penalized function-on-scalar regression,
//   vec(A) = (E E^T kron L^T L + D kron diag(gamma))^{-1} vec(L^T X E^T),
// solved through an SPD factorization of the Kronecker-structured normal
// equations. Requires gamma > 0 or full-column-rank loadings.
FactorScores fosr_scores(const Eigen::MatrixXd& scan_values, const Eigen::MatrixXd& loadings,
                         const TemporalBasis& basis, const Eigen::VectorXd& gamma);
FactorScores fosr_scores(const Eigen::MatrixXd& scan_values, const Eigen::MatrixXd& loadings,
                         const TemporalBasis& basis, double gamma);

// Pointwise least squares baseline: F(:, j) = (L^T L)^{-1} L^T X(:, j).
FactorScores pwls_scores(const Eigen::MatrixXd& scan_values, const Eigen::MatrixXd& loadings);

// Stationarity residual of the penalized objective at A; near zero at the
// optimum. Used by gradient checks.
Eigen::MatrixXd fosr_normal_residual(const Eigen::MatrixXd& scan_values,
                                     const Eigen::MatrixXd& loadings, const TemporalBasis& basis,
                                     const Eigen::VectorXd& gamma, const Eigen::MatrixXd& a);

// Spatially contiguous folds: quadrants split by the first two dimensions
// at 1/2 (V = 4) for D >= 2, halves for D = 1 (V = 2).
std::vector<int> spatial_fold_ids(const SpatialGrid& grid, int v_folds);

struct SpatialCvResult {
    double gamma = 0.0;
    std::vector<std::pair<double, double>> curve;        // (gamma, e_j)
    std::vector<std::vector<double>> fold_errors;        // per gamma, per fold
};

// Spatial V-fold cross-validation for gamma over all subjects jointly:
// fit on out-of-fold voxels, score reconstruction on the held-out fold,
// e_jv = M_v^{-1} ||X^(v) - L^(v) F^(j,-v)||_F^2 averaged over subjects
// and folds. Ties prefer the larger (smoother) gamma.
SpatialCvResult spatial_cv_gamma(const std::vector<ScanTensor>& scans,
                                 const Eigen::MatrixXd& loadings, const SpatialGrid& grid,
                                 const TemporalBasis& basis, const std::vector<double>& gamma_grid,
                                 int v_folds = 4);

struct DiagnosticReport {
    Eigen::MatrixXd h_hat;   // (1/nJ) sum_i F_i F_i^T
    Eigen::MatrixXd t_stat;  // subject-level one-sample t statistics
    Eigen::MatrixXd p_raw;   // two-sided p-values
    Eigen::MatrixXd p_bonf;  // Bonferroni over K(K+1)/2 comparisons
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> flag;  // adjusted p < 0.05
    int n_subjects = 0;
    std::int64_t n_time = 0;
};

// Tests H_hat against the identity: per entry, subject-level statistics
// h_i(k,k') = J^{-1}(F_i F_i^T)_{kk'} enter a two-sided one-sample t-test
// against 0 off the diagonal and 1 on it.
DiagnosticReport factor_cov_diagnostic(const std::vector<Eigen::MatrixXd>& factor_scores);

}  // namespace tffa
