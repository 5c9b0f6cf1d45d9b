#include "tffa/covassembly.hpp"

#include "tffa/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace tffa {

BandMaskRule BandMaskRule::fixed_fraction() { return BandMaskRule{}; }

BandMaskRule BandMaskRule::fixed_fraction(std::vector<int> radius) {
    BandMaskRule r;
    r.kind = Kind::FixedFraction;
    r.radius = std::move(radius);
    return r;
}

BandMaskRule BandMaskRule::distance(double delta) {
    BandMaskRule r;
    r.kind = Kind::Distance;
    r.delta = delta;
    return r;
}

BandMask build_band_mask(const SpatialGrid& grid, const BandMaskRule& rule) {
    const int D = grid.ndim();
    const std::int64_t m = grid.active_count();

    BandMask out;
    out.grid_ = grid;
    out.rule_ = rule;

    std::vector<int> radius(D);
    if (rule.kind == BandMaskRule::Kind::FixedFraction) {
        if (rule.radius.empty()) {
            for (int d = 0; d < D; ++d)
                radius[d] = static_cast<int>(std::ceil(grid.dims()[d] / 4.0));
        } else {
            validate(static_cast<int>(rule.radius.size()) == D,
                     "fixed_fraction radius must have one entry per dimension");
            radius = rule.radius;
        }
        for (int d = 0; d < D; ++d) {
            validate(radius[d] >= 1, "band radius must be positive");
            validate(radius[d] < grid.dims()[d],
                     "band radius >= M_d leaves no off-band pairs in dimension " + std::to_string(d));
        }
    } else {
        validate(rule.delta > 0.0, "distance rule requires delta > 0");
        validate(rule.delta < 1.0, "distance rule delta must be < 1");
        for (int d = 0; d < D; ++d) {
            validate(rule.delta * grid.dims()[d] < grid.dims()[d] - 1,
                     "distance rule delta leaves no off-band pairs in dimension " + std::to_string(d));
        }
    }
    out.resolved_radius_ = radius;

    out.z_.resize(m, m);
    std::int64_t count = 0;
    for (std::int64_t a = 0; a < m; ++a) {
        out.z_(a, a) = 0;
        for (std::int64_t b = 0; b < a; ++b) {
            bool keep = true;
            for (int d = 0; d < D && keep; ++d) {
                const int diff = std::abs(grid.active_coord(a, d) - grid.active_coord(b, d));
                if (rule.kind == BandMaskRule::Kind::FixedFraction) {
                    keep = diff > radius[d];
                } else {
                    keep = static_cast<double>(diff) / grid.dims()[d] > rule.delta;
                }
            }
            out.z_(a, b) = keep ? 1 : 0;
            out.z_(b, a) = out.z_(a, b);
            if (keep) count += 2;
        }
    }
    validate(count > 0, "band mask keeps no pairs; radius or delta too large for this grid");
    out.off_band_count_ = count;
    return out;
}

std::vector<double> BandMask::effective_delta() const {
    std::vector<double> d(grid_.ndim());
    for (int i = 0; i < grid_.ndim(); ++i) {
        if (rule_.kind == BandMaskRule::Kind::FixedFraction) {
            d[i] = static_cast<double>(resolved_radius_[i]) / grid_.dims()[i];
        } else {
            d[i] = rule_.delta;
        }
    }
    return d;
}

bool MaskedCovariance::is_psd(double tol) const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(matrix, Eigen::EigenvaluesOnly);
    const double scale = std::max(1e-300, es.eigenvalues().cwiseAbs().maxCoeff());
    return es.eigenvalues().minCoeff() >= -tol * scale;
}

MaskedCovariance empirical_spatial_cov(const std::vector<ScanTensor>& scans,
                                       const BandMask& mask, int batch) {
    validate(!scans.empty(), "need at least one scan");
    validate(batch >= 1, "batch must be positive");
    const SpatialGrid& grid = scans.front().grid;
    const std::int64_t j_total = scans.front().n_time;
    for (const auto& s : scans) {
        s.validate_shape();
        validate(s.grid.same_shape(grid), "all scans must share one grid");
        validate(s.n_time == j_total, "all scans must share one time resolution");
    }
    validate(mask.grid().same_shape(grid), "band mask grid does not match the scans");

    const std::int64_t m = grid.active_count();
    const int n = static_cast<int>(scans.size());

    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(m, j_total);
    for (const auto& s : scans) mean += s.values;
    mean /= static_cast<double>(n);

    // Accumulation is parallel over fixed-size row blocks of the output;
    // each entry is touched by exactly one block with subject-major,
    // batch-minor summation order, so the result does not depend on the
    // number of worker threads.
    constexpr std::int64_t kRowBlock = 128;
    const std::int64_t n_blocks = (m + kRowBlock - 1) / kRowBlock;

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < n; ++i) {
        const Eigen::MatrixXd centered = scans[i].values - mean;
        parallel_for_blocks(n_blocks, [&](std::int64_t blk) {
            const std::int64_t r0 = blk * kRowBlock;
            const std::int64_t rows = std::min(kRowBlock, m - r0);
            for (std::int64_t c0 = 0; c0 < j_total; c0 += batch) {
                const std::int64_t cols = std::min<std::int64_t>(batch, j_total - c0);
                cov.middleRows(r0, rows).noalias() +=
                    centered.block(r0, 0, rows, j_total).middleCols(c0, cols) *
                    centered.middleCols(c0, cols).transpose();
            }
        });
    }
    cov /= static_cast<double>(n) * static_cast<double>(j_total);
    cov = ((cov + cov.transpose()) * 0.5).eval();

    MaskedCovariance out;
    out.matrix = std::move(cov);
    out.mask = mask;
    out.n_subjects = n;
    out.n_time = j_total;
    out.degenerate_single_subject = (n == 1);
    return out;
}

double masked_residual_norm(const Eigen::MatrixXd& cov_a, const Eigen::MatrixXd& cov_b,
                            const BandMask& mask) {
    validate(cov_a.rows() == cov_b.rows() && cov_a.cols() == cov_b.cols(),
             "matrix shapes do not match");
    validate(cov_a.rows() == mask.matrix().rows(), "mask does not match matrix shape");

    const std::int64_t m = cov_a.rows();
    constexpr std::int64_t kRowBlock = 256;
    const std::int64_t n_blocks = (m + kRowBlock - 1) / kRowBlock;
    std::vector<double> partial(static_cast<std::size_t>(n_blocks), 0.0);

    parallel_for_blocks(n_blocks, [&](std::int64_t blk) {
        const std::int64_t r0 = blk * kRowBlock;
        const std::int64_t r1 = std::min(r0 + kRowBlock, m);
        double acc = 0.0;
        for (std::int64_t a = r0; a < r1; ++a) {
            for (std::int64_t b = 0; b < m; ++b) {
                if (mask.matrix()(a, b)) {
                    const double d = cov_a(a, b) - cov_b(a, b);
                    acc += d * d;
                }
            }
        }
        partial[static_cast<std::size_t>(blk)] = acc;
    });

    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace tffa
