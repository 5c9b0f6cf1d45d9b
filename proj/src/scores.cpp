#include "tffa/scores.hpp"

#include "tffa/parallel.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace tffa {

namespace {

// Clamped knot vector for p cubic-or-other-degree splines on [0,1] with
// equally spaced interior knots.
std::vector<double> make_knots(int p, int degree) {
    const int segments = p - degree;  // number of nonempty spans
    std::vector<double> u(static_cast<std::size_t>(p + degree + 1));
    for (int i = 0; i <= degree; ++i) u[static_cast<std::size_t>(i)] = 0.0;
    for (int i = 1; i < segments; ++i)
        u[static_cast<std::size_t>(degree + i)] = static_cast<double>(i) / segments;
    for (int i = p; i <= p + degree; ++i) u[static_cast<std::size_t>(i)] = 1.0;
    return u;
}

int find_span(int p, int degree, double x, const std::vector<double>& u) {
    if (x >= 1.0) return p - 1;
    int lo = degree, hi = p;
    while (hi - lo > 1) {
        const int mid = (lo + hi) / 2;
        if (x < u[static_cast<std::size_t>(mid)]) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return lo;
}

// Piegl & Tiller A2.3: values and derivatives of the degree+1 nonzero
// basis functions at x. Rows of `ders` are derivative orders.
void ders_basis_funs(int span, double x, int degree, int n_ders, const std::vector<double>& u,
                     Eigen::MatrixXd& ders) {
    const int g = degree;
    Eigen::MatrixXd ndu(g + 1, g + 1);
    std::vector<double> left(static_cast<std::size_t>(g + 1)), right(static_cast<std::size_t>(g + 1));
    ndu(0, 0) = 1.0;
    for (int j = 1; j <= g; ++j) {
        left[static_cast<std::size_t>(j)] = x - u[static_cast<std::size_t>(span + 1 - j)];
        right[static_cast<std::size_t>(j)] = u[static_cast<std::size_t>(span + j)] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            ndu(j, r) = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
            const double temp = ndu(r, j - 1) / ndu(j, r);
            ndu(r, j) = saved + right[static_cast<std::size_t>(r + 1)] * temp;
            saved = left[static_cast<std::size_t>(j - r)] * temp;
        }
        ndu(j, j) = saved;
    }

    ders.setZero(n_ders + 1, g + 1);
    for (int j = 0; j <= g; ++j) ders(0, j) = ndu(j, g);

    Eigen::MatrixXd a(2, g + 1);
    for (int r = 0; r <= g; ++r) {
        int s1 = 0, s2 = 1;
        a.setZero();
        a(0, 0) = 1.0;
        for (int k = 1; k <= n_ders; ++k) {
            double dval = 0.0;
            const int rk = r - k, pk = g - k;
            if (r >= k) {
                a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
                dval = a(s2, 0) * ndu(rk, pk);
            }
            const int j1 = (rk >= -1) ? 1 : -rk;
            const int j2 = (r - 1 <= pk) ? k - 1 : g - r;
            for (int j = j1; j <= j2; ++j) {
                a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
                dval += a(s2, j) * ndu(rk + j, pk);
            }
            if (r <= pk) {
                a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
                dval += a(s2, k) * ndu(r, pk);
            }
            ders(k, r) = dval;
            std::swap(s1, s2);
        }
    }

    int factor = g;
    for (int k = 1; k <= n_ders; ++k) {
        for (int j = 0; j <= g; ++j) ders(k, j) *= factor;
        factor *= (g - k);
    }
}

}  // namespace

Eigen::VectorXd bspline_values(int p, int degree, double x, int deriv) {
    validate(p >= degree + 1, "basis size must be at least degree + 1");
    validate(x >= 0.0 && x <= 1.0, "basis evaluation point outside [0,1]");
    const std::vector<double> u = make_knots(p, degree);
    const int span = find_span(p, degree, x, u);
    Eigen::MatrixXd ders;
    ders_basis_funs(span, x, degree, deriv, u, ders);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(p);
    for (int j = 0; j <= degree; ++j) out[span - degree + j] = ders(deriv, j);
    return out;
}

TemporalBasis build_basis(int p, std::int64_t n_time, int degree) {
    validate(degree >= 1, "spline degree must be positive");
    validate(p >= degree + 1, "basis size must be at least degree + 1");
    validate(p >= 4, "basis size must be at least 4");
    validate(n_time >= p, "basis size exceeds the number of time points");

    TemporalBasis basis;
    basis.p = p;
    const Eigen::VectorXd t = time_grid(n_time);
    basis.e.resize(p, n_time);
    for (std::int64_t j = 0; j < n_time; ++j) {
        basis.e.col(j) = bspline_values(p, degree, t[j]);
    }

    // Exact integration of <e_a'', e_b''>: the integrand is piecewise
    // polynomial of degree 2(degree-2) per span, and two-point
    // Gauss-Legendre is exact through degree 3.
    basis.d = Eigen::MatrixXd::Zero(p, p);
    const int segments = p - degree;
    const double offset = 0.5 / std::sqrt(3.0);
    for (int s = 0; s < segments; ++s) {
        const double a = static_cast<double>(s) / segments;
        const double b = static_cast<double>(s + 1) / segments;
        const double h = b - a;
        for (double xi : {0.5 - offset, 0.5 + offset}) {
            const Eigen::VectorXd d2 = bspline_values(p, degree, a + xi * h, 2);
            basis.d.noalias() += (0.5 * h) * (d2 * d2.transpose());
        }
    }
    basis.d = ((basis.d + basis.d.transpose()) * 0.5).eval();
    return basis;
}

namespace {

void check_fosr_inputs(const Eigen::MatrixXd& x, const Eigen::MatrixXd& l,
                       const TemporalBasis& basis, const Eigen::VectorXd& gamma) {
    validate(x.rows() == l.rows(), "scan and loadings disagree on voxel count");
    validate(basis.e.cols() == x.cols(), "basis evaluations do not match scan time points");
    validate(basis.e.rows() == basis.p && basis.d.rows() == basis.p && basis.d.cols() == basis.p,
             "malformed temporal basis");
    validate(gamma.size() == l.cols(), "need one gamma per factor");
    validate(gamma.minCoeff() >= 0.0, "gamma must be nonnegative");
}

}  // namespace

FactorScores fosr_scores(const Eigen::MatrixXd& scan_values, const Eigen::MatrixXd& loadings,
                         const TemporalBasis& basis, const Eigen::VectorXd& gamma) {
    check_fosr_inputs(scan_values, loadings, basis, gamma);
    const int k = static_cast<int>(loadings.cols());
    const int p = basis.p;

    const Eigen::MatrixXd ltl = loadings.transpose() * loadings;
    if (gamma.minCoeff() <= 0.0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ltl, Eigen::EigenvaluesOnly);
        validate(es.eigenvalues().minCoeff() >
                     1e-12 * std::max(1.0, es.eigenvalues().maxCoeff()),
                 "singular FOSR system: loadings are rank-deficient and gamma = 0; use gamma > 0");
    }

    const Eigen::MatrixXd eet = basis.e * basis.e.transpose();
    const Eigen::MatrixXd rhs_mat = loadings.transpose() * scan_values * basis.e.transpose();

    // Kronecker-structured normal equations, vec() column-stacked so that
    // unknown (k, p) sits at index p*K + k.
    Eigen::MatrixXd system(k * p, k * p);
    for (int p1 = 0; p1 < p; ++p1) {
        for (int p2 = 0; p2 < p; ++p2) {
            system.block(p1 * k, p2 * k, k, k) = eet(p1, p2) * ltl;
            for (int kk = 0; kk < k; ++kk) {
                system(p1 * k + kk, p2 * k + kk) += basis.d(p1, p2) * gamma[kk];
            }
        }
    }

    const Eigen::Map<const Eigen::VectorXd> rhs(rhs_mat.data(), k * p);
    Eigen::LLT<Eigen::MatrixXd> llt(system);
    validate(llt.info() == Eigen::Success,
             "singular FOSR system; loadings rank-deficient — use gamma > 0");
    const Eigen::VectorXd sol = llt.solve(rhs);
    require(sol.allFinite(), "FOSR solve produced non-finite coefficients");

    FactorScores out;
    out.method = FactorScores::Method::Fosr;
    out.a = Eigen::Map<const Eigen::MatrixXd>(sol.data(), k, p);
    out.f_hat = out.a * basis.e;
    out.gamma = gamma;
    return out;
}

FactorScores fosr_scores(const Eigen::MatrixXd& scan_values, const Eigen::MatrixXd& loadings,
                         const TemporalBasis& basis, double gamma) {
    return fosr_scores(scan_values, loadings, basis,
                       Eigen::VectorXd::Constant(loadings.cols(), gamma));
}

FactorScores pwls_scores(const Eigen::MatrixXd& scan_values, const Eigen::MatrixXd& loadings) {
    validate(scan_values.rows() == loadings.rows(), "scan and loadings disagree on voxel count");
    const Eigen::MatrixXd ltl = loadings.transpose() * loadings;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ltl, Eigen::EigenvaluesOnly);
    validate(es.eigenvalues().minCoeff() > 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff()),
             "PWLS requires full-column-rank loadings");

    FactorScores out;
    out.method = FactorScores::Method::Pwls;
    out.f_hat = ltl.llt().solve(loadings.transpose() * scan_values);
    out.gamma = Eigen::VectorXd::Zero(loadings.cols());
    return out;
}

Eigen::MatrixXd fosr_normal_residual(const Eigen::MatrixXd& scan_values,
                                     const Eigen::MatrixXd& loadings, const TemporalBasis& basis,
                                     const Eigen::VectorXd& gamma, const Eigen::MatrixXd& a) {
    const Eigen::MatrixXd ltl = loadings.transpose() * loadings;
    const Eigen::MatrixXd eet = basis.e * basis.e.transpose();
    return -loadings.transpose() * scan_values * basis.e.transpose() + ltl * a * eet +
           gamma.asDiagonal() * a * basis.d;
}

std::vector<int> spatial_fold_ids(const SpatialGrid& grid, int v_folds) {
    const int d = grid.ndim();
    std::vector<int> ids(static_cast<std::size_t>(grid.active_count()));
    if (d == 1) {
        validate(v_folds == 2, "one-dimensional grids use the two-fold half split");
        for (std::int64_t r = 0; r < grid.active_count(); ++r) {
            const int m0 = grid.active_coord(r, 0);
            ids[static_cast<std::size_t>(r)] = (2 * m0 + 1 >= grid.dims()[0]) ? 1 : 0;
        }
    } else {
        validate(v_folds == 4, "spatial folds are the four blocks split at 1/2 in the first two dimensions");
        for (std::int64_t r = 0; r < grid.active_count(); ++r) {
            const int m0 = grid.active_coord(r, 0);
            const int m1 = grid.active_coord(r, 1);
            const int hi0 = (2 * m0 + 1 >= grid.dims()[0]) ? 1 : 0;
            const int hi1 = (2 * m1 + 1 >= grid.dims()[1]) ? 1 : 0;
            ids[static_cast<std::size_t>(r)] = 2 * hi0 + hi1;
        }
    }
    std::vector<std::int64_t> count(static_cast<std::size_t>(v_folds), 0);
    for (int id : ids) ++count[static_cast<std::size_t>(id)];
    for (int v = 0; v < v_folds; ++v) {
        validate(count[static_cast<std::size_t>(v)] > 0,
                 "spatial fold " + std::to_string(v) + " is empty after masking");
    }
    return ids;
}

SpatialCvResult spatial_cv_gamma(const std::vector<ScanTensor>& scans,
                                 const Eigen::MatrixXd& loadings, const SpatialGrid& grid,
                                 const TemporalBasis& basis, const std::vector<double>& gamma_grid,
                                 int v_folds) {
    validate(!gamma_grid.empty(), "gamma grid is empty");
    validate(!scans.empty(), "need at least one scan");
    validate(loadings.rows() == grid.active_count(), "loadings do not match grid");

    const std::vector<int> fold_of = spatial_fold_ids(grid, v_folds);
    const int n = static_cast<int>(scans.size());
    const std::size_t n_gamma = gamma_grid.size();

    std::vector<std::vector<double>> fold_errors(n_gamma,
                                                 std::vector<double>(static_cast<std::size_t>(v_folds), 0.0));

    for (int v = 0; v < v_folds; ++v) {
        std::vector<std::int64_t> in_rows, out_rows;
        for (std::int64_t r = 0; r < grid.active_count(); ++r) {
            if (fold_of[static_cast<std::size_t>(r)] == v) {
                in_rows.push_back(r);
            } else {
                out_rows.push_back(r);
            }
        }
        const auto gather = [](const Eigen::MatrixXd& m, const std::vector<std::int64_t>& rows) {
            Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
            for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
            return out;
        };
        const Eigen::MatrixXd l_out = gather(loadings, out_rows);
        const Eigen::MatrixXd l_in = gather(loadings, in_rows);
        const double m_v = static_cast<double>(in_rows.size());

        for (int i = 0; i < n; ++i) {
            const Eigen::MatrixXd x_out = gather(scans[static_cast<std::size_t>(i)].values, out_rows);
            const Eigen::MatrixXd x_in = gather(scans[static_cast<std::size_t>(i)].values, in_rows);
            for (std::size_t gi = 0; gi < n_gamma; ++gi) {
                const FactorScores fit = fosr_scores(x_out, l_out, basis, gamma_grid[gi]);
                const double err = (x_in - l_in * fit.f_hat).squaredNorm() / m_v;
                fold_errors[gi][static_cast<std::size_t>(v)] += err / n;
            }
        }
    }

    SpatialCvResult out;
    out.fold_errors = fold_errors;
    for (std::size_t gi = 0; gi < n_gamma; ++gi) {
        double e = 0.0;
        for (double fe : fold_errors[gi]) e += fe;
        e /= v_folds;
        out.curve.emplace_back(gamma_grid[gi], e);
    }
    // argmin with ties resolved toward the larger gamma
    double best_e = std::numeric_limits<double>::infinity();
    double best_gamma = gamma_grid.front();
    for (const auto& [g, e] : out.curve) {
        if (e < best_e || (e == best_e && g > best_gamma)) {
            best_e = e;
            best_gamma = g;
        }
    }
    out.gamma = best_gamma;
    return out;
}

DiagnosticReport factor_cov_diagnostic(const std::vector<Eigen::MatrixXd>& factor_scores) {
    validate(factor_scores.size() >= 2, "diagnostic needs at least two subjects");
    const int n = static_cast<int>(factor_scores.size());
    const Eigen::Index k = factor_scores.front().rows();
    const Eigen::Index j = factor_scores.front().cols();
    for (const auto& f : factor_scores) {
        validate(f.rows() == k && f.cols() == j, "factor score shapes differ across subjects");
    }

    DiagnosticReport rep;
    rep.n_subjects = n;
    rep.n_time = j;

    // subject-level covariance samples h_i = (1/J) F_i F_i^T
    std::vector<Eigen::MatrixXd> h(static_cast<std::size_t>(n));
    Eigen::MatrixXd h_mean = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < n; ++i) {
        h[static_cast<std::size_t>(i)] =
            (factor_scores[static_cast<std::size_t>(i)] *
             factor_scores[static_cast<std::size_t>(i)].transpose()) /
            static_cast<double>(j);
        h_mean += h[static_cast<std::size_t>(i)];
    }
    h_mean /= static_cast<double>(n);
    rep.h_hat = h_mean;

    rep.t_stat.resize(k, k);
    rep.p_raw.resize(k, k);
    rep.p_bonf.resize(k, k);
    rep.flag.resize(k, k);

    const double comparisons = static_cast<double>(k) * (k + 1) / 2.0;
    const boost::math::students_t dist(n - 1);

    for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = 0; b <= a; ++b) {
            const double target = (a == b) ? 1.0 : 0.0;
            double var = 0.0;
            for (int i = 0; i < n; ++i) {
                const double dev = h[static_cast<std::size_t>(i)](a, b) - h_mean(a, b);
                var += dev * dev;
            }
            var /= (n - 1);
            const double se = std::sqrt(var / n);
            const double diff = h_mean(a, b) - target;

            double t, p;
            if (se == 0.0) {
                t = diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity() * (diff > 0 ? 1 : -1);
                p = diff == 0.0 ? 1.0 : 0.0;
            } else {
                t = diff / se;
                p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
            }
            const double p_adj = std::min(1.0, p * comparisons);
            rep.t_stat(a, b) = rep.t_stat(b, a) = t;
            rep.p_raw(a, b) = rep.p_raw(b, a) = p;
            rep.p_bonf(a, b) = rep.p_bonf(b, a) = p_adj;
            rep.flag(a, b) = rep.flag(b, a) = (p_adj < 0.05) ? 1 : 0;
        }
    }
    return rep;
}

}  // namespace tffa
