#pragma once

#include "tffa/completion.hpp"
#include "tffa/covassembly.hpp"
#include "tffa/loading_set.hpp"
#include "tffa/rotation.hpp"
#include "tffa/tensor_io.hpp"

#include <Eigen/Core>

#include <vector>

namespace tffa {

// Separable Gaussian filter: one-dimensional convolutions along each
// spatial dimension, kernel truncated at 4 sigma (sigma in voxel units).
// Dense grids use reflect padding; masked grids renormalize the kernel
// over in-mask voxels (normalized convolution). sigma = 0 is the identity.
Eigen::VectorXd gaussian_smooth(const SpatialGrid& grid, const Eigen::VectorXd& field,
                                double sigma);
Eigen::MatrixXd gaussian_smooth_columns(const SpatialGrid& grid, const Eigen::MatrixXd& fields,
                                        const Eigen::VectorXd& sigma_per_column);

// Adaptive soft threshold with weight w(x) = |x|^{-2} (w(0) treated as
// +inf so zeros stay zero): sgn(x) * max(|x| - kappa * w(x), 0).
double adaptive_shrink_value(double x, double kappa);
Eigen::VectorXd adaptive_shrink(const Eigen::VectorXd& field, double kappa);
Eigen::MatrixXd adaptive_shrink_columns(const Eigen::MatrixXd& fields,
                                        const Eigen::VectorXd& kappa_per_column);

// Stage-checked wrappers; shrinking an unsmoothed set requires the
// explicit override.
LoadingSet smooth_loading_set(const LoadingSet& set, const Eigen::VectorXd& sigma_per_column);
LoadingSet shrink_loading_set(const LoadingSet& set, const Eigen::VectorXd& kappa_per_column,
                              bool allow_unsmoothed = false);

// Subject folds with their covariances and aligned reduced-data fits.
struct FoldSet {
    int n_folds = 0;
    std::vector<std::vector<int>> subjects;       // fold -> subject ids (round robin)
    std::vector<MaskedCovariance> fold_cov;       // C^(v): fold-v subjects only
    std::vector<Eigen::MatrixXd> fold_loadings;   // L^(-v) at rank K, aligned to the full fit
    std::vector<double> align_residuals;          // Procrustes residual per fold (diagnostic)
};

FoldSet make_folds(const std::vector<ScanTensor>& scans, int n_folds, const BandMask& mask,
                   int k_hat, const CompletionOptions& completion_opts,
                   const Eigen::MatrixXd& full_loadings, int batch = 64);

struct CvCurvePoint {
    double param;
    double cv;
};

struct CvResult {
    Eigen::VectorXd chosen;                 // per component
    std::vector<CvCurvePoint> curve;        // uniform mode
    std::vector<std::vector<CvCurvePoint>> component_curves;  // coordinate-wise mode
};

// CV(sigma) = (1/V) sum_v Err(v; smoothed rotated fold loadings), where
// Err is the band-masked residual against the held-out fold covariance.
// Oblique fits are de-rotated before the implied covariance is formed.
// Ties prefer the smaller sigma.
CvResult cv_tune_sigma(const FoldSet& folds, const RotationResult& rotation,
                       const std::vector<double>& sigma_grid, bool uniform);

// Same skeleton with adaptive shrinkage on the sigma*-smoothed fold
// loadings. Ties prefer the larger kappa (sparser estimate).
CvResult cv_tune_kappa(const FoldSet& folds, const RotationResult& rotation,
                       const Eigen::VectorXd& sigma_star, const std::vector<double>& kappa_grid,
                       bool uniform);

}  // namespace tffa
