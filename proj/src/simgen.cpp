#include "tffa/simgen.hpp"

#include "tffa/gp.hpp"
#include "tffa/parallel.hpp"
#include "tffa/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace tffa {

std::string to_string(LoadingScheme s) {
    switch (s) {
        case LoadingScheme::BI: return "BI";
        case LoadingScheme::NET: return "NET";
        case LoadingScheme::TRI: return "TRI";
    }
    return "BI";
}

LoadingScheme loading_scheme_from_string(const std::string& s) {
    if (s == "BI" || s == "bi") return LoadingScheme::BI;
    if (s == "NET" || s == "net") return LoadingScheme::NET;
    if (s == "TRI" || s == "tri") return LoadingScheme::TRI;
    throw ValidationError("unknown loading scheme: " + s);
}

void SimConfig::validate_config() const {
    validate(grid.ndim() == 2, "the generator is defined on two-dimensional grids");
    validate(grid.dims()[0] == grid.dims()[1], "the generator expects a square grid");
    validate(n_time >= 1, "n_time must be positive");
    validate(n_subjects >= 1, "n_subjects must be positive");
    validate(delta > 0.0 && delta < 0.5, "delta must lie in (0, 1/2)");
    validate(regime == 1 || regime == 2, "regime must be 1 or 2");
    validate(omega_f > 0.0 && omega_u > 0.0, "GP length parameters must be positive");
    validate(n_local >= 0, "n_local must be nonnegative");
    validate(local_support_scale > 0.0, "local_support_scale must be positive");
    if (oblique_t) {
        validate(oblique_t->rows() == n_factors && oblique_t->cols() == n_factors,
                 "oblique_t must be K x K");
        const Eigen::MatrixXd h = (*oblique_t) * oblique_t->transpose();
        for (int k = 0; k < n_factors; ++k) {
            validate(std::abs(h(k, k) - 1.0) < 1e-8, "oblique_t must satisfy diag(T T^T) = I");
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(*oblique_t);
        validate(lu.isInvertible(), "oblique_t must be invertible");
    }
}

Eigen::VectorXd evaluate_bump(const SpatialGrid& grid, const std::array<double, 4>& box) {
    const double x0 = box[0], x1 = box[1], y0 = box[2], y1 = box[3];
    validate(x1 > x0 && y1 > y0, "bump support box is empty");
    const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
    const double rx = 0.5 * (x1 - x0), ry = 0.5 * (y1 - y0);
    const int m0 = grid.dims()[0], m1 = grid.dims()[1];

    Eigen::VectorXd v = Eigen::VectorXd::Zero(grid.active_count());
    const int a_lo = std::max(0, static_cast<int>(std::floor(x0 * m0)));
    const int a_hi = std::min(m0 - 1, static_cast<int>(std::ceil(x1 * m0)));
    const int b_lo = std::max(0, static_cast<int>(std::floor(y0 * m1)));
    const int b_hi = std::min(m1 - 1, static_cast<int>(std::ceil(y1 * m1)));
    for (int a = a_lo; a <= a_hi; ++a) {
        const double sx = (a + 0.5) / m0;
        const double ux = (sx - cx) / rx;
        for (int b = b_lo; b <= b_hi; ++b) {
            const double sy = (b + 0.5) / m1;
            const double uy = (sy - cy) / ry;
            const double r2 = ux * ux + uy * uy;
            if (r2 >= 1.0) continue;
            const std::int64_t full = static_cast<std::int64_t>(a) * m1 + b;
            const std::int64_t row = grid.full_to_active(full);
            if (row < 0) continue;
            v[row] = std::exp(-1.0 / (1.0 - r2));
        }
    }
    return v;
}

namespace {

struct Blob {
    double cx, cy, rx, ry, amp;
};

std::array<double, 4> blob_box(const Blob& b) {
    return {b.cx - b.rx, b.cx + b.rx, b.cy - b.ry, b.cy + b.ry};
}

// Scheme placement tables (normalized coordinates). Chosen to visually
// echo the reference arrangements; not a format contract.
std::vector<std::vector<Blob>> scheme_blobs(LoadingScheme scheme, int k) {
    switch (scheme) {
        case LoadingScheme::BI: {
            validate(k == 2 || k == 4, "BI scheme is defined for K in {2, 4}");
            const double r = (k == 2) ? 0.14 : 0.13;
            std::vector<std::vector<Blob>> t = {
                {{0.25, 0.25, r, r, 1.0}, {0.75, 0.75, r, r, 1.0}},
                {{0.75, 0.25, r, r, 1.0}, {0.25, 0.75, r, r, 1.0}},
                {{0.50, 0.20, r, r, 1.0}, {0.50, 0.80, r, r, 1.0}},
                {{0.20, 0.50, r, r, 1.0}, {0.80, 0.50, r, r, 1.0}},
            };
            t.resize(k);
            return t;
        }
        case LoadingScheme::NET: {
            validate(k == 2 || k == 4, "NET scheme is defined for K in {2, 4}");
            std::vector<std::vector<Blob>> t = {
                // default-mode-like: medial anterior + posterior, lateral parietal
                {{0.50, 0.14, 0.10, 0.08, 1.0},
                 {0.50, 0.82, 0.12, 0.12, 1.0},
                 {0.15, 0.55, 0.07, 0.09, 0.8},
                 {0.85, 0.55, 0.07, 0.09, 0.8}},
                // executive-like: bilateral frontal pair
                {{0.32, 0.68, 0.12, 0.10, 1.0}, {0.68, 0.68, 0.12, 0.10, 1.0}},
                // left dorsal-stream-like
                {{0.22, 0.25, 0.10, 0.09, 1.0}, {0.36, 0.42, 0.08, 0.07, 0.9}},
                // right dorsal-stream-like
                {{0.78, 0.25, 0.10, 0.09, 1.0}, {0.64, 0.42, 0.08, 0.07, 0.9}},
            };
            t.resize(k);
            return t;
        }
        case LoadingScheme::TRI: {
            validate(k == 8, "TRI scheme is defined for K = 8");
            // 4x4 slot lattice, radius below half the slot spacing so the
            // three bumps of a factor never touch. The first bump of each
            // factor has twice the amplitude of the other two.
            auto slot = [](int s, double amp) {
                const int col = s % 4, row = s / 4;
                return Blob{0.125 + 0.25 * col, 0.125 + 0.25 * row, 0.11, 0.11, amp};
            };
            const int table[8][3] = {{0, 5, 10}, {3, 6, 9},  {12, 1, 7},  {15, 2, 8},
                                     {4, 11, 14}, {7, 13, 0}, {2, 9, 12}, {5, 14, 3}};
            std::vector<std::vector<Blob>> t(8);
            for (int f = 0; f < 8; ++f) {
                t[f] = {slot(table[f][0], 2.0), slot(table[f][1], 1.0), slot(table[f][2], 1.0)};
            }
            return t;
        }
    }
    throw ValidationError("unknown loading scheme");
}

}  // namespace

Eigen::MatrixXd make_loading_scheme(LoadingScheme scheme, const SpatialGrid& grid, int k) {
    validate(grid.ndim() == 2, "loading schemes are two-dimensional");
    const auto table = scheme_blobs(scheme, k);
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(grid.active_count(), k);
    for (int f = 0; f < k; ++f) {
        for (const Blob& b : table[f]) {
            z.col(f) += b.amp * evaluate_bump(grid, blob_box(b));
        }
        const double norm = z.col(f).norm();
        validate(norm > 0.0, "loading scheme produced an empty map; grid too coarse or fully masked");
        z.col(f) /= norm;
    }
    return z;
}

namespace {

std::array<double, 4> clip_box(std::array<double, 4> box) {
    box[0] = std::max(box[0], 0.0);
    box[1] = std::min(box[1], 1.0);
    box[2] = std::max(box[2], 0.0);
    box[3] = std::min(box[3], 1.0);
    return box;
}

// Local bumps live on the delta-grid tiling of the unit square; supports
// that straddle the boundary are clipped to it.
std::array<double, 4> local_tile_box(double delta, std::int64_t p, std::int64_t q, double scale) {
    const double cx = (p + 0.5) * delta;
    const double cy = (q + 0.5) * delta;
    const double half = 0.5 * delta * scale;
    return clip_box({cx - half, cx + half, cy - half, cy + half});
}

}  // namespace

std::pair<std::vector<ScanTensor>, GroundTruth> simulate_dataset(const SimConfig& cfg) {
    cfg.validate_config();
    const int K = cfg.n_factors;
    const int n = cfg.n_subjects;
    const std::int64_t J = cfg.n_time;
    const std::int64_t M = cfg.grid.active_count();

    const Eigen::MatrixXd z = make_loading_scheme(cfg.scheme, cfg.grid, K);

    RngStream coeff_rng = RngStream::derive(cfg.seed, {rng_tag::loading_coeffs});
    Eigen::VectorXd c(K);
    const double c_lo = cfg.regime == 1 ? 2.0 : 0.8;
    const double c_hi = cfg.regime == 1 ? 3.0 : 1.8;
    for (int k = 0; k < K; ++k) c[k] = coeff_rng.uniform(c_lo, c_hi);

    const Eigen::MatrixXd l_true = z * c.asDiagonal();
    const Eigen::MatrixXd h = cfg.oblique_t
                                  ? Eigen::MatrixXd((*cfg.oblique_t) * cfg.oblique_t->transpose())
                                  : Eigen::MatrixXd(Eigen::MatrixXd::Identity(K, K));

    GroundTruth truth;
    truth.loadings.grid = cfg.grid;
    truth.loadings.matrix = l_true;
    truth.loadings.stage = LoadingStage::Initial;
    truth.loadings.kind = cfg.oblique_t ? RotationKind::Oblique : RotationKind::Orthogonal;
    truth.loadings.factor_cov = h;
    truth.factor_cov = h;
    truth.global_cov = l_true * h * l_true.transpose();
    truth.factors.resize(n);
    truth.locals.resize(n);
    if (cfg.store_global_parts) truth.global_parts.resize(n);

    const GpSampler gp_f(cfg.omega_f, J);
    std::optional<GpSampler> gp_u;
    if (cfg.n_local > 0) gp_u.emplace(cfg.omega_u, J);

    const std::int64_t n_tiles = static_cast<std::int64_t>(std::ceil(1.0 / cfg.delta));

    std::vector<ScanTensor> scans(n);
    parallel_for_blocks(n, [&](std::int64_t i) {
        RngStream f_rng = RngStream::derive(cfg.seed, {rng_tag::factors, static_cast<std::uint64_t>(i)});
        Eigen::MatrixXd f(K, J);
        for (int k = 0; k < K; ++k) f.row(k) = gp_f.sample(f_rng).transpose();
        if (cfg.oblique_t) f = (*cfg.oblique_t) * f;

        Eigen::MatrixXd y = l_true * f;
        Eigen::MatrixXd x = y;

        std::vector<LocalComponent> locals;
        locals.reserve(cfg.n_local);
        if (cfg.n_local > 0) {
            RngStream e_rng =
                RngStream::derive(cfg.seed, {rng_tag::local_errors, static_cast<std::uint64_t>(i)});
            for (int p = 0; p < cfg.n_local; ++p) {
                double a = e_rng.uniform(0.1, 1.0);
                Eigen::VectorXd v;
                std::array<double, 4> box{};
                int attempts = 0;
                for (;;) {
                    const std::int64_t tx = e_rng.uniform_int(0, n_tiles - 1);
                    const std::int64_t ty = e_rng.uniform_int(0, n_tiles - 1);
                    box = local_tile_box(cfg.delta, tx, ty, cfg.local_support_scale);
                    v = evaluate_bump(cfg.grid, box);
                    const double norm = v.norm();
                    if (norm > 0.0) {
                        v /= norm;
                        break;
                    }
                    require(++attempts < 100,
                            "could not place a local bump with nonempty support; grid too coarse");
                }
                const Eigen::VectorXd u = gp_u->sample(e_rng);
                x.noalias() += (a * v) * u.transpose();
                locals.push_back({a, box});
            }
        }

        scans[i].grid = cfg.grid;
        scans[i].n_time = J;
        scans[i].values = std::move(x);
        truth.factors[i] = std::move(f);
        truth.locals[i] = std::move(locals);
        if (cfg.store_global_parts) truth.global_parts[i] = std::move(y);
    });

    (void)M;
    return {std::move(scans), std::move(truth)};
}

bool true_local_cov_band_check(const GroundTruth& truth, const SpatialGrid& grid, double delta) {
    const int m0 = grid.dims()[0], m1 = grid.dims()[1];
    for (const auto& subject : truth.locals) {
        for (const LocalComponent& comp : subject) {
            // Fast path: a support box narrower than delta in every
            // dimension cannot contain a violating pair.
            const double wx = comp.box[1] - comp.box[0];
            const double wy = comp.box[3] - comp.box[2];
            if (wx <= delta + 1e-12 && wy <= delta + 1e-12) continue;

            const Eigen::VectorXd v = evaluate_bump(grid, comp.box);
            int min_a = m0, max_a = -1, min_b = m1, max_b = -1;
            for (std::int64_t row = 0; row < v.size(); ++row) {
                if (v[row] == 0.0) continue;
                const int a = grid.active_coord(row, 0);
                const int b = grid.active_coord(row, 1);
                min_a = std::min(min_a, a);
                max_a = std::max(max_a, a);
                min_b = std::min(min_b, b);
                max_b = std::max(max_b, b);
            }
            if (max_a < 0) continue;  // empty support on this grid
            if (static_cast<double>(max_a - min_a) / m0 >= delta) return false;
            if (static_cast<double>(max_b - min_b) / m1 >= delta) return false;
        }
    }
    return true;
}

}  // namespace tffa
