#pragma once

#include "tffa/covassembly.hpp"
#include "tffa/loading_set.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tffa {

struct CompletionOptions {
    enum class Optimizer { QuasiNewton, BlockSgd, Hybrid };
    Optimizer optimizer = Optimizer::QuasiNewton;
    int max_iters = 500;
    double grad_tol = 1e-7;   // stop when ||grad|| <= grad_tol * (1 + f)
    int lbfgs_memory = 10;
    int sgd_epochs = 0;       // 0 => max_iters (block_sgd) or max_iters / 10 (hybrid)
    int n_strata = 8;         // voxel blocks for the stratified schedule
    double sgd_rate = 0.0;    // 0 => derived from the leading eigenvalue
    std::uint64_t seed = 0;
    bool randomized_init = false;  // randomized-range spectral initialization
    int randomized_oversample = 8;
    int randomized_power_iters = 2;
};

CompletionOptions::Optimizer optimizer_from_string(const std::string& s);
std::string to_string(CompletionOptions::Optimizer o);

// Identifiability cap K* = prod_d floor((1/2 - delta_d) M_d - 1).
// Requires every delta_d < 1/2.
std::int64_t rank_cap(const SpatialGrid& grid, const std::vector<double>& delta);
std::int64_t rank_cap(const SpatialGrid& grid, double delta);

// Rank-j truncated eigendecomposition of the full covariance (or of a
// randomized-range approximation of it), returned as U_j Sigma_j^{1/2}
// with negative eigenvalues clipped to zero.
Eigen::MatrixXd spectral_init(const MaskedCovariance& cov, int j,
                              const CompletionOptions& opts = {});

// Divergent optimization; carries the last finite iterate.
class CompletionDivergenceError : public std::runtime_error {
public:
    CompletionDivergenceError(const std::string& msg, Eigen::MatrixXd last)
        : std::runtime_error(msg), last_iterate(std::move(last)) {}
    Eigen::MatrixXd last_iterate;
};

struct CompletionResult {
    Eigen::MatrixXd v;
    double objective = 0.0;
    int iterations = 0;
    double grad_norm = 0.0;
    bool trace_rescaled = false;  // post-hoc feasibility projection fired
};

// Minimizes f(V) = sum_{Z=1} (C - V V^T)^2 from the given (or spectral)
// initialization; returns whichever of the optimized iterate and the
// initialization attains the lower objective, then applies the trace
// feasibility projection.
CompletionResult complete_rank(const MaskedCovariance& cov, int j, const CompletionOptions& opts,
                               const std::optional<Eigen::MatrixXd>& init = std::nullopt);

struct RankPathEntry {
    int rank = 0;
    Eigen::MatrixXd v;
    double objective = 0.0;
};

struct RankPath {
    // Objective of the zero matrix (rank 0); anchors the scree curve.
    double f0 = 0.0;
    bool has_f0 = false;
    std::vector<RankPathEntry> entries;  // ranks 1..max_rank, objective nonincreasing
};

// Solves ranks 1..max_rank, warm-starting rank j from the previous
// solution extended by a spectral residual column and falling back to the
// embedded previous solution whenever that would beat the optimizer.
RankPath rank_path(const MaskedCovariance& cov, int max_rank, const CompletionOptions& opts);

struct RankSelection {
    enum class Mode { Elbow, Threshold, Fixed };
    Mode mode = Mode::Elbow;
    double threshold = 0.0;
    int fixed = 0;

    static RankSelection elbow() { return {}; }
    static RankSelection threshold_rule(double c);
    static RankSelection fixed_rule(int j);
};

// Elbow: maximal second difference of log f (using the rank-0 anchor when
// present). Threshold: smallest j with f_j < c. Fixed: passthrough.
int select_rank(const RankPath& path, const RankSelection& selection);

// Rows of the scree CSV: (j, f_j, f_{j+1}/f_j).
struct ScreeRow {
    int rank;
    double objective;
    double ratio;  // NaN for the last entry
};
std::vector<ScreeRow> scree_data(const RankPath& path);

// Scaled eigenvector loadings of V V^T via the K x K Gram trick; columns
// ordered by descending eigenvalue, signs fixed so the largest-magnitude
// coordinate is positive.
LoadingSet extract_loadings(const Eigen::MatrixXd& v, const SpatialGrid& grid);

struct GlobalCovEstimate {
    int k_hat = 0;
    Eigen::MatrixXd v;             // M x K_hat factor with G = V V^T
    Eigen::VectorXd eigenvalues;   // descending
    LoadingSet loadings;
};

GlobalCovEstimate make_global_cov_estimate(const Eigen::MatrixXd& v, const SpatialGrid& grid);

}  // namespace tffa
