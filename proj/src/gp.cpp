#include "tffa/gp.hpp"

#include "tffa/common.hpp"
#include "tffa/tensor_io.hpp"

#include <Eigen/Cholesky>

namespace tffa {

GpSampler::GpSampler(double omega, std::int64_t n_time) : n_time_(n_time) {
    validate(omega > 0.0, "GP length parameter must be positive");
    validate(n_time >= 1, "GP grid must have at least one point");

    const Eigen::VectorXd t = time_grid(n_time);
    Eigen::MatrixXd k(n_time, n_time);
    const double inv = 1.0 / (2.0 * omega * omega);
    for (std::int64_t a = 0; a < n_time; ++a) {
        for (std::int64_t b = 0; b <= a; ++b) {
            const double d = t[a] - t[b];
            const double v = std::exp(-d * d * inv);
            k(a, b) = v;
            k(b, a) = v;
        }
    }

    for (double jitter = 1e-8; jitter <= 1e-4 * 1.0000001; jitter *= 10.0) {
        Eigen::MatrixXd kj = k;
        kj.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(kj);
        if (llt.info() == Eigen::Success) {
            chol_ = llt.matrixL();
            return;
        }
    }
    throw std::runtime_error("GP kernel factorization failed after jitter escalation to 1e-4");
}

Eigen::VectorXd GpSampler::sample(RngStream& rng) const {
    return chol_ * rng.normal_vec(n_time_);
}

Eigen::VectorXd sample_gp(double omega, std::int64_t n_time, RngStream& rng) {
    return GpSampler(omega, n_time).sample(rng);
}

}  // namespace tffa
