#pragma once

#include "tffa/loading_set.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace tffa {

enum class OrthCriterion { Varimax, Quartimax };

OrthCriterion orth_criterion_from_string(const std::string& s);
std::string to_string(OrthCriterion c);

struct RotationOptions {
    int restarts = 10;      // seeded random restarts, restart 0 = identity
    int max_iters = 1000;
    double tol = 1e-8;      // on criterion change per accepted step
    bool kaiser = false;    // row-normalize before rotating (off: matches the criterion as written)
    std::uint64_t seed = 0;
};

struct RotationResult {
    LoadingSet loadings;            // stage = rotated
    Eigen::MatrixXd transform;      // R (L* = L R) or T (L* = L T^{-1})
    RotationKind kind = RotationKind::Orthogonal;
    Eigen::MatrixXd phi;            // H = T T^T; identity for orthogonal
    std::vector<double> criterion_trace;  // accepted-step values of the winning restart
    double criterion = 0.0;
    bool converged = true;
    int best_restart = 0;

    // Rotate a loading matrix exactly the way the stored transform was
    // applied to the fit (used to rotate aligned fold loadings in CV).
    Eigen::MatrixXd apply(const Eigen::MatrixXd& l) const;
    // Revert an oblique rotation: L* T. Identity for orthogonal results.
    Eigen::MatrixXd derotate(const Eigen::MatrixXd& l_star) const;
};

// Maximizes the quartimax or varimax criterion over orthonormal R by
// gradient projection with step halving and random restarts. K = 1
// returns the identity rotation.
RotationResult rotate_orthogonal(const LoadingSet& loadings, OrthCriterion criterion,
                                 const RotationOptions& opts = {});

// Minimizes the direct oblimin criterion (quartimin at alpha = 0) over
// invertible T with diag(T T^T) = I. Positive alpha is rejected.
RotationResult rotate_oblique(const LoadingSet& loadings, double alpha,
                              const RotationOptions& opts = {});

struct AlignResult {
    Eigen::MatrixXd aligned;
    Eigen::MatrixXd transform;        // source * transform = aligned
    double residual = 0.0;            // ||aligned - target||_F
    bool permutation_only = false;    // degenerate cross-product fallback
};

// Aligns source loadings onto a target: orthogonal Procrustes followed by
// a greedy signed-permutation snap (orthogonal kind), or least-squares
// column matching (oblique kind). Used to match fold-wise fits to their
// full-data counterparts before component-wise tuning.
AlignResult align_to_target(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target,
                            RotationKind kind);

}  // namespace tffa
