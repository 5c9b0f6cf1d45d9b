#pragma once

#include "tffa/grid.hpp"
#include "tffa/loading_set.hpp"
#include "tffa/tensor_io.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tffa {

enum class LoadingScheme { BI, NET, TRI };

std::string to_string(LoadingScheme s);
LoadingScheme loading_scheme_from_string(const std::string& s);

// Full parameterization of the data generating process. Defaults follow
// the simulation design: J = 500, omega_f = 0.02, omega_u = 0.002,
// regime 1 scales in U[2,3], regime 2 in U[0.8,1.8], local coefficients
// in U[0.1,1].
struct SimConfig {
    SpatialGrid grid;  // two-dimensional, square
    std::int64_t n_time = 500;
    int n_factors = 2;
    int n_subjects = 1;
    LoadingScheme scheme = LoadingScheme::BI;
    double delta = 0.1;
    int regime = 1;
    double omega_f = 0.02;
    double omega_u = 0.002;
    int n_local = 50;  // local error components per subject, >> K
    std::optional<Eigen::MatrixXd> oblique_t;  // K x K, diag(T T^T) = I
    std::uint64_t seed = 0;
    bool store_global_parts = true;  // keep Y_i for exact-decomposition checks
    double local_support_scale = 1.0;  // test hook: widens local bump supports

    void validate_config() const;
};

// One local error component: coefficient and the support box of its
// spatial bump, [x0, x1] x [y0, y1] inside the unit square.
struct LocalComponent {
    double coeff = 0.0;
    std::array<double, 4> box{};
};

struct GroundTruth {
    LoadingSet loadings;                   // scaled true loadings c_k z_k
    Eigen::MatrixXd global_cov;            // G^s implied by loadings and H
    std::vector<Eigen::MatrixXd> factors;  // per subject, K x J
    Eigen::MatrixXd factor_cov;            // H (identity when orthogonal)
    std::vector<std::vector<LocalComponent>> locals;  // n x P
    std::vector<Eigen::MatrixXd> global_parts;        // Y_i when stored
};

// Unit-norm spatial maps for the named scheme. BI and NET are defined for
// K in {2, 4}; TRI for K = 8. Bump placements are a documented constant
// table, not a contract.
Eigen::MatrixXd make_loading_scheme(LoadingScheme scheme, const SpatialGrid& grid, int k);

// Smooth compactly supported bump on the ellipse inscribed in `box`,
// evaluated at active cell centers: exp(-1 / (1 - r^2)) for r < 1.
Eigen::VectorXd evaluate_bump(const SpatialGrid& grid, const std::array<double, 4>& box);

std::pair<std::vector<ScanTensor>, GroundTruth> simulate_dataset(const SimConfig& cfg);

// True iff, for every generated local component, no two support cells are
// delta or further apart (as |m_d - m'_d| / M_d) in any dimension.
// Verified analytically from the stored bump supports.
bool true_local_cov_band_check(const GroundTruth& truth, const SpatialGrid& grid, double delta);

}  // namespace tffa
