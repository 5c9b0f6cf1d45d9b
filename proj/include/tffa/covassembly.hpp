#pragma once

#include "tffa/grid.hpp"
#include "tffa/tensor_io.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace tffa {

// Band-deleting mask Z over pairs of active voxels. Z(m, m') = 1 keeps a
// pair (off band, used by the completion objective); Z = 0 deletes it.
//
// fixed_fraction: Z = 1 iff |m_d - m'_d| >  radius_d      for all d
// distance:       Z = 1 iff |m_d - m'_d| / M_d > delta    for all d
struct BandMaskRule {
    enum class Kind { FixedFraction, Distance };
    Kind kind = Kind::FixedFraction;
    std::vector<int> radius;  // per dim; empty => ceil(M_d / 4)
    double delta = 0.0;       // distance rule only

    static BandMaskRule fixed_fraction();
    static BandMaskRule fixed_fraction(std::vector<int> radius);
    static BandMaskRule distance(double delta);
};

class BandMask {
public:
    BandMask() = default;

    const SpatialGrid& grid() const { return grid_; }
    const BandMaskRule& rule() const { return rule_; }

    bool z(std::int64_t a, std::int64_t b) const { return z_(a, b) != 0; }
    const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& matrix() const { return z_; }

    std::int64_t off_band_count() const { return off_band_count_; }

    // Bandwidth per dimension implied by the rule, used by the
    // identifiability cap.
    std::vector<double> effective_delta() const;

    friend BandMask build_band_mask(const SpatialGrid& grid, const BandMaskRule& rule);

private:
    SpatialGrid grid_;
    BandMaskRule rule_;
    std::vector<int> resolved_radius_;
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> z_;
    std::int64_t off_band_count_ = 0;
};

BandMask build_band_mask(const SpatialGrid& grid, const BandMaskRule& rule);

// Empirical average spatial covariance with the mask it was built for.
struct MaskedCovariance {
    Eigen::MatrixXd matrix;  // active x active, exactly symmetric
    BandMask mask;
    int n_subjects = 0;
    std::int64_t n_time = 0;
    bool degenerate_single_subject = false;

    // Smallest eigenvalue check: PSD up to -tol * ||C||.
    bool is_psd(double tol = 1e-10) const;
};

// (1/nJ) sum_i sum_j of centered per-time outer products, accumulated in
// time batches. Centering subtracts the cross-subject mean scan. The
// result is symmetrized by averaging with its transpose.
MaskedCovariance empirical_spatial_cov(const std::vector<ScanTensor>& scans,
                                       const BandMask& mask, int batch = 64);

// sum over ordered pairs with Z = 1 of (A - B)^2; the shared completion
// objective and cross-validation error kernel.
double masked_residual_norm(const Eigen::MatrixXd& cov_a, const Eigen::MatrixXd& cov_b,
                            const BandMask& mask);

}  // namespace tffa
