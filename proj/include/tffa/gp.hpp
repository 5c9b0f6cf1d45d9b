#pragma once

#include "tffa/rng.hpp"

#include <Eigen/Core>

#include <cstdint>

namespace tffa {

// Lower Cholesky factor of the squared-exponential kernel
//   Sigma(j, j') = exp(-(t_j - t_j')^2 / (2 omega^2))
// on the even time grid, with diagonal jitter. Jitter starts at 1e-8 and
// escalates by x10 up to 1e-4 before giving up.
//
// Factor the kernel once per (omega, J) and reuse it across draws.
class GpSampler {
public:
    GpSampler(double omega, std::int64_t n_time);

    // One zero-mean draw evaluated on the grid.
    Eigen::VectorXd sample(RngStream& rng) const;

    std::int64_t n_time() const { return n_time_; }

private:
    std::int64_t n_time_;
    Eigen::MatrixXd chol_;  // lower triangular
};

// Single-shot convenience wrapper.
Eigen::VectorXd sample_gp(double omega, std::int64_t n_time, RngStream& rng);

}  // namespace tffa
