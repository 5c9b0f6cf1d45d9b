#pragma once

#include "tffa/common.hpp"
#include "tffa/grid.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>

namespace tffa {

// Pipeline stage of a loading set; postprocessing order (smooth before
// shrink) is enforced through these tags.
enum class LoadingStage { Initial, Rotated, Smoothed, Shrunk };

enum class RotationKind { Orthogonal, Oblique };

std::string to_string(LoadingStage stage);
LoadingStage loading_stage_from_string(const std::string& s);

// K spatial loading maps in matrix form (packed active voxels x K), plus
// the transform and factor covariance when the set comes from an oblique
// rotation.
struct LoadingSet {
    SpatialGrid grid;
    Eigen::MatrixXd matrix;  // active_count x K
    LoadingStage stage = LoadingStage::Initial;
    RotationKind kind = RotationKind::Orthogonal;
    std::optional<Eigen::MatrixXd> transform;   // K x K (R or T)
    std::optional<Eigen::MatrixXd> factor_cov;  // H = T T^T, identity if orthogonal

    int n_factors() const { return static_cast<int>(matrix.cols()); }

    void validate_shape() const {
        validate(matrix.rows() == grid.active_count(), "loading rows do not match grid");
        validate(matrix.cols() >= 1, "loading set must have at least one column");
        if (transform) {
            validate(transform->rows() == matrix.cols() && transform->cols() == matrix.cols(),
                     "transform must be K x K");
        }
    }

    // Global spatial covariance implied by this representation.
    Eigen::MatrixXd implied_global_cov() const {
        if (kind == RotationKind::Oblique && factor_cov) {
            return matrix * (*factor_cov) * matrix.transpose();
        }
        return matrix * matrix.transpose();
    }
};

}  // namespace tffa
