#include "tffa/rotation.hpp"

#include "tffa/parallel.hpp"
#include "tffa/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace tffa {

OrthCriterion orth_criterion_from_string(const std::string& s) {
    if (s == "varimax") return OrthCriterion::Varimax;
    if (s == "quartimax") return OrthCriterion::Quartimax;
    throw ValidationError("unknown orthogonal criterion: " + s);
}

std::string to_string(OrthCriterion c) {
    return c == OrthCriterion::Varimax ? "varimax" : "quartimax";
}

Eigen::MatrixXd RotationResult::apply(const Eigen::MatrixXd& l) const {
    if (kind == RotationKind::Orthogonal) return l * transform;
    return transform.transpose().partialPivLu().solve(l.transpose()).transpose();
}

Eigen::MatrixXd RotationResult::derotate(const Eigen::MatrixXd& l_star) const {
    if (kind == RotationKind::Orthogonal) return l_star;
    return l_star * transform;
}

namespace {

// Criterion evaluations return the value to MINIMIZE plus its gradient in
// the rotated loadings. Orthogonal criteria are stated as maximizations,
// so they enter negated; `paper_sign` converts back for reporting.

struct CriterionEval {
    double f;
    Eigen::MatrixXd gq;
};

CriterionEval eval_quartimax(const Eigen::MatrixXd& l) {
    const Eigen::ArrayXXd a = l.array();
    CriterionEval out;
    out.f = -0.25 * (a.square().square()).sum();
    out.gq = (-a.cube()).matrix();
    return out;
}

CriterionEval eval_varimax(const Eigen::MatrixXd& l) {
    const Eigen::ArrayXXd sq = l.array().square();
    const Eigen::ArrayXXd centered = sq.rowwise() - sq.colwise().mean();
    CriterionEval out;
    out.f = -0.25 * (centered * centered).sum();
    out.gq = (-(l.array() * centered)).matrix();
    return out;
}

CriterionEval eval_oblimin(const Eigen::MatrixXd& l, double alpha) {
    const int k = static_cast<int>(l.cols());
    const Eigen::ArrayXXd sq = l.array().square();
    // cross-component simplicity term: sum_{k<k'} <L_k^2, L_k'^2>
    const Eigen::ArrayXd row_sum = sq.rowwise().sum();
    const double sum4 = sq.square().sum();
    const double cross = 0.5 * ((row_sum * row_sum).sum() - sum4);

    CriterionEval out;
    out.f = cross;
    // gradient of the cross term: 2 L o (L^2 N), N = ones - I
    Eigen::ArrayXXd others = (-sq).colwise() + row_sum;  // row_sum minus own column
    out.gq = (2.0 * l.array() * others).matrix();

    if (alpha != 0.0) {
        Eigen::VectorXd s(k);
        for (int c = 0; c < k; ++c) s[c] = std::sqrt(sq.col(c).square().sum());
        const double s_total = s.sum();
        double pair_sum = 0.0;
        for (int c = 0; c < k; ++c) pair_sum += s[c] * (s_total - s[c]);
        out.f -= alpha * 0.5 * pair_sum;
        for (int c = 0; c < k; ++c) {
            if (s[c] <= 1e-300) continue;
            const double coeff = -alpha * (s_total - s[c]) * 2.0 / s[c];
            out.gq.col(c).array() += coeff * l.array().col(c).cube();
        }
    }
    return out;
}

struct RestartOutcome {
    Eigen::MatrixXd rotated;
    Eigen::MatrixXd transform;  // internal parameterization
    double f = std::numeric_limits<double>::infinity();
    std::vector<double> trace;  // minimized values, accepted steps
    bool converged = false;
    bool degenerate = false;
};

Eigen::MatrixXd random_orthonormal(int k, RngStream& rng) {
    Eigen::MatrixXd g(k, k);
    for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) g(r, c) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    // fix a deterministic sign convention
    const Eigen::MatrixXd r_mat = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int c = 0; c < k; ++c) {
        if (r_mat(c, c) < 0.0) q.col(c) = -q.col(c);
    }
    return q;
}

// Gradient projection on the orthogonal group (minimizing).
template <typename Criterion>
RestartOutcome gpa_orthogonal(const Eigen::MatrixXd& a, Eigen::MatrixXd r,
                              const RotationOptions& opts, const Criterion& crit) {
    RestartOutcome out;
    Eigen::MatrixXd l = a * r;
    CriterionEval e = crit(l);
    Eigen::MatrixXd g = a.transpose() * e.gq;
    double step = 1.0;
    out.trace.push_back(e.f);

    for (int iter = 0; iter < opts.max_iters; ++iter) {
        const Eigen::MatrixXd m = r.transpose() * g;
        const Eigen::MatrixXd s = 0.5 * (m + m.transpose());
        const Eigen::MatrixXd gp = g - r * s;
        const double slope = gp.squaredNorm();
        if (std::sqrt(slope) < 1e-12 * (1.0 + std::abs(e.f))) {
            out.converged = true;
            break;
        }

        step *= 2.0;
        bool accepted = false;
        Eigen::MatrixXd r_new;
        CriterionEval e_new;
        for (int h = 0; h < 40; ++h) {
            const Eigen::MatrixXd x = r - step * gp;
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeFullU | Eigen::ComputeFullV);
            r_new = svd.matrixU() * svd.matrixV().transpose();
            e_new = crit(a * r_new);
            if (std::isfinite(e_new.f) && e_new.f < e.f - 0.5 * slope * step) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            out.converged = true;  // no descent left at machine resolution
            break;
        }
        const double drop = e.f - e_new.f;
        r = std::move(r_new);
        e = std::move(e_new);
        g = a.transpose() * e.gq;
        out.trace.push_back(e.f);
        if (drop <= opts.tol * (1.0 + std::abs(e.f))) {
            out.converged = true;
            break;
        }
    }

    out.rotated = a * r;
    out.transform = std::move(r);
    out.f = e.f;
    return out;
}

// Gradient projection on the oblique manifold. Internally uses the
// unit-column parameterization Tm (L = A (Tm^T)^{-1}); the reported
// transform is T = Tm^T, which satisfies diag(T T^T) = I.
template <typename Criterion>
RestartOutcome gpa_oblique(const Eigen::MatrixXd& a, Eigen::MatrixXd tm,
                           const RotationOptions& opts, const Criterion& crit) {
    RestartOutcome out;
    const int k = static_cast<int>(a.cols());

    auto rotate = [&](const Eigen::MatrixXd& t) -> Eigen::MatrixXd {
        // L = A (T^T)^{-1}, i.e. L^T = T^{-1} A^T
        return t.partialPivLu().solve(a.transpose()).transpose();
    };

    if (std::abs(tm.determinant()) < 1e-10) {
        out.degenerate = true;
        return out;
    }

    Eigen::MatrixXd l = rotate(tm);
    CriterionEval e = crit(l);
    auto gradient = [&](const Eigen::MatrixXd& t, const Eigen::MatrixXd& lcur,
                        const Eigen::MatrixXd& gq) -> Eigen::MatrixXd {
        // G = -(L^T Gq T^{-1})^T = -(T^T)^{-1} (L^T Gq)^T
        const Eigen::MatrixXd tmp = lcur.transpose() * gq;  // K x K
        return -t.transpose().partialPivLu().solve(tmp.transpose());
    };
    Eigen::MatrixXd g = gradient(tm, l, e.gq);
    double step = 1.0;
    out.trace.push_back(e.f);

    for (int iter = 0; iter < opts.max_iters; ++iter) {
        Eigen::MatrixXd gp = g;
        for (int c = 0; c < k; ++c) {
            gp.col(c) -= tm.col(c) * (tm.col(c).dot(g.col(c)));
        }
        const double slope = gp.squaredNorm();
        if (std::sqrt(slope) < 1e-12 * (1.0 + std::abs(e.f))) {
            out.converged = true;
            break;
        }

        step *= 2.0;
        bool accepted = false;
        Eigen::MatrixXd tm_new;
        CriterionEval e_new;
        for (int h = 0; h < 40; ++h) {
            Eigen::MatrixXd x = tm - step * gp;
            for (int c = 0; c < k; ++c) {
                const double norm = x.col(c).norm();
                if (norm <= 1e-300) {
                    x.col(c) = tm.col(c);
                } else {
                    x.col(c) /= norm;
                }
            }
            if (std::abs(x.determinant()) < 1e-10) {
                step *= 0.5;
                continue;
            }
            e_new = crit(rotate(x));
            if (std::isfinite(e_new.f) && e_new.f < e.f - 0.5 * slope * step) {
                tm_new = std::move(x);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            out.converged = true;
            break;
        }
        const double drop = e.f - e_new.f;
        tm = std::move(tm_new);
        l = rotate(tm);
        e = std::move(e_new);
        g = gradient(tm, l, e.gq);
        out.trace.push_back(e.f);
        if (drop <= opts.tol * (1.0 + std::abs(e.f))) {
            out.converged = true;
            break;
        }
    }

    if (std::abs(tm.determinant()) < 1e-10) {
        out.degenerate = true;
        return out;
    }
    out.rotated = rotate(tm);
    out.transform = std::move(tm);
    out.f = e.f;
    return out;
}

// Reorder columns by descending squared norm and set the sign of the
// largest-magnitude coordinate positive; the transform and factor
// covariance are adjusted to keep the representation consistent.
void canonicalize_columns(Eigen::MatrixXd& l, Eigen::MatrixXd& transform, Eigen::MatrixXd& phi,
                          RotationKind kind) {
    const int k = static_cast<int>(l.cols());
    std::vector<int> order(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) order[static_cast<std::size_t>(i)] = i;
    const Eigen::VectorXd norms = l.colwise().squaredNorm();
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return norms[x] > norms[y]; });

    Eigen::MatrixXd perm_sign = Eigen::MatrixXd::Zero(k, k);
    Eigen::MatrixXd l_new(l.rows(), k);
    for (int dst = 0; dst < k; ++dst) {
        const int src = order[static_cast<std::size_t>(dst)];
        Eigen::Index argmax = 0;
        l.col(src).cwiseAbs().maxCoeff(&argmax);
        const double sign = l(argmax, src) < 0.0 ? -1.0 : 1.0;
        l_new.col(dst) = sign * l.col(src);
        perm_sign(src, dst) = sign;
    }
    l = std::move(l_new);

    if (kind == RotationKind::Orthogonal) {
        transform = transform * perm_sign;  // R <- R P S
        phi = Eigen::MatrixXd::Identity(k, k);
    } else {
        // L* <- L* (PS) with L* = L T^{-1}  =>  T <- (PS)^{-1} T = (PS)^T T
        transform = perm_sign.transpose() * transform;
        phi = transform * transform.transpose();
    }
}

void kaiser_normalize(Eigen::MatrixXd& l) {
    const Eigen::VectorXd row_norms = l.rowwise().norm();
    for (Eigen::Index r = 0; r < l.rows(); ++r) {
        if (row_norms[r] > 0.0) l.row(r) /= row_norms[r];
    }
}

template <typename RunRestart>
RotationResult run_restarts(const LoadingSet& loadings, const RotationOptions& opts,
                            RotationKind kind, double paper_sign, const RunRestart& run) {
    const int k = loadings.n_factors();
    std::vector<RestartOutcome> outcomes(static_cast<std::size_t>(std::max(1, opts.restarts)));
    parallel_for_blocks(static_cast<std::int64_t>(outcomes.size()), [&](std::int64_t rs) {
        outcomes[static_cast<std::size_t>(rs)] = run(static_cast<int>(rs));
    });

    int best = -1;
    double best_tnorm = 0.0;
    for (int rs = 0; rs < static_cast<int>(outcomes.size()); ++rs) {
        const auto& o = outcomes[static_cast<std::size_t>(rs)];
        if (o.degenerate) continue;
        const double tnorm = (o.transform - Eigen::MatrixXd::Identity(k, k)).norm();
        if (best < 0) {
            best = rs;
            best_tnorm = tnorm;
            continue;
        }
        const auto& b = outcomes[static_cast<std::size_t>(best)];
        const double tie = 1e-12 * (1.0 + std::abs(b.f));
        if (o.f < b.f - tie || (std::abs(o.f - b.f) <= tie && tnorm < best_tnorm)) {
            best = rs;
            best_tnorm = tnorm;
        }
    }
    require(best >= 0, "oblique rotation: every restart collapsed to a degenerate transform");

    RestartOutcome& win = outcomes[static_cast<std::size_t>(best)];

    RotationResult res;
    res.kind = kind;
    res.best_restart = best;
    res.converged = win.converged;
    res.criterion = paper_sign * win.f;
    res.criterion_trace.reserve(win.trace.size());
    for (double f : win.trace) res.criterion_trace.push_back(paper_sign * f);

    Eigen::MatrixXd l_star = std::move(win.rotated);
    Eigen::MatrixXd transform =
        (kind == RotationKind::Orthogonal) ? win.transform : Eigen::MatrixXd(win.transform.transpose());
    Eigen::MatrixXd phi = (kind == RotationKind::Orthogonal)
                              ? Eigen::MatrixXd(Eigen::MatrixXd::Identity(k, k))
                              : Eigen::MatrixXd(transform * transform.transpose());
    canonicalize_columns(l_star, transform, phi, kind);

    res.loadings.grid = loadings.grid;
    res.loadings.matrix = std::move(l_star);
    res.loadings.stage = LoadingStage::Rotated;
    res.loadings.kind = kind;
    res.loadings.transform = transform;
    res.loadings.factor_cov = phi;
    res.transform = std::move(transform);
    res.phi = std::move(phi);
    return res;
}

}  // namespace

RotationResult rotate_orthogonal(const LoadingSet& loadings, OrthCriterion criterion,
                                 const RotationOptions& opts) {
    loadings.validate_shape();
    const int k = loadings.n_factors();

    if (k == 1) {
        RotationResult res;
        res.kind = RotationKind::Orthogonal;
        res.transform = Eigen::MatrixXd::Identity(1, 1);
        res.phi = Eigen::MatrixXd::Identity(1, 1);
        res.loadings = loadings;
        res.loadings.stage = LoadingStage::Rotated;
        res.loadings.transform = res.transform;
        res.loadings.factor_cov = res.phi;
        const CriterionEval e = criterion == OrthCriterion::Varimax
                                    ? eval_varimax(loadings.matrix)
                                    : eval_quartimax(loadings.matrix);
        res.criterion = -e.f;
        res.criterion_trace = {res.criterion};
        return res;
    }

    Eigen::MatrixXd a = loadings.matrix;
    if (opts.kaiser) kaiser_normalize(a);

    auto crit = [&](const Eigen::MatrixXd& l) {
        return criterion == OrthCriterion::Varimax ? eval_varimax(l) : eval_quartimax(l);
    };

    RotationResult res = run_restarts(
        loadings, opts, RotationKind::Orthogonal, /*paper_sign=*/-1.0, [&](int rs) {
            Eigen::MatrixXd r0;
            if (rs == 0) {
                r0 = Eigen::MatrixXd::Identity(k, k);
            } else {
                RngStream rng = RngStream::derive(opts.seed,
                                                  {rng_tag::rotation, static_cast<std::uint64_t>(rs)});
                r0 = random_orthonormal(k, rng);
            }
            return gpa_orthogonal(a, std::move(r0), opts, crit);
        });

    if (opts.kaiser) {
        // the rotation was found on row-normalized maps; apply it to the
        // original loadings
        res.loadings.matrix = loadings.matrix * res.transform;
    }
    return res;
}

RotationResult rotate_oblique(const LoadingSet& loadings, double alpha,
                              const RotationOptions& opts) {
    loadings.validate_shape();
    validate(alpha <= 0.0, "direct oblimin requires alpha <= 0 (positive values risk degeneracy)");
    const int k = loadings.n_factors();

    if (k == 1) {
        RotationResult res;
        res.kind = RotationKind::Oblique;
        res.transform = Eigen::MatrixXd::Identity(1, 1);
        res.phi = Eigen::MatrixXd::Identity(1, 1);
        res.loadings = loadings;
        res.loadings.stage = LoadingStage::Rotated;
        res.loadings.kind = RotationKind::Oblique;
        res.loadings.transform = res.transform;
        res.loadings.factor_cov = res.phi;
        res.criterion = 0.0;
        res.criterion_trace = {0.0};
        return res;
    }

    const Eigen::MatrixXd& a = loadings.matrix;
    auto crit = [&](const Eigen::MatrixXd& l) { return eval_oblimin(l, alpha); };

    return run_restarts(loadings, opts, RotationKind::Oblique, /*paper_sign=*/1.0, [&](int rs) {
        Eigen::MatrixXd t0;
        if (rs == 0) {
            t0 = Eigen::MatrixXd::Identity(k, k);
        } else {
            RngStream rng =
                RngStream::derive(opts.seed, {rng_tag::rotation, static_cast<std::uint64_t>(rs)});
            t0 = random_orthonormal(k, rng);
        }
        return gpa_oblique(a, std::move(t0), opts, crit);
    });
}

namespace {

// Greedy one-to-one column matching by largest |score|; returns the K x K
// signed permutation (source column -> target slot).
Eigen::MatrixXd greedy_signed_permutation(const Eigen::MatrixXd& score) {
    const int k = static_cast<int>(score.rows());
    Eigen::MatrixXd ps = Eigen::MatrixXd::Zero(k, k);
    std::vector<bool> used_src(static_cast<std::size_t>(k), false);
    std::vector<bool> used_dst(static_cast<std::size_t>(k), false);
    for (int pick = 0; pick < k; ++pick) {
        int best_a = -1, best_b = -1;
        double best = -1.0;
        for (int a = 0; a < k; ++a) {
            if (used_src[static_cast<std::size_t>(a)]) continue;
            for (int b = 0; b < k; ++b) {
                if (used_dst[static_cast<std::size_t>(b)]) continue;
                if (std::abs(score(a, b)) > best) {
                    best = std::abs(score(a, b));
                    best_a = a;
                    best_b = b;
                }
            }
        }
        used_src[static_cast<std::size_t>(best_a)] = true;
        used_dst[static_cast<std::size_t>(best_b)] = true;
        ps(best_a, best_b) = score(best_a, best_b) < 0.0 ? -1.0 : 1.0;
    }
    return ps;
}

}  // namespace

AlignResult align_to_target(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target,
                            RotationKind kind) {
    validate(source.rows() == target.rows() && source.cols() == target.cols(),
             "alignment shapes do not match");
    const int k = static_cast<int>(source.cols());

    AlignResult out;
    if (kind == RotationKind::Orthogonal) {
        const Eigen::MatrixXd cross = source.transpose() * target;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const double smax = svd.singularValues().maxCoeff();
        if (svd.singularValues().minCoeff() < 1e-12 * std::max(1.0, smax)) {
            // Rank-deficient cross-product: Procrustes is underdetermined,
            // fall back to matching columns directly.
            out.permutation_only = true;
            const Eigen::MatrixXd ps = greedy_signed_permutation(cross);
            out.transform = ps;
            out.aligned = source * ps;
        } else {
            const Eigen::MatrixXd r = svd.matrixU() * svd.matrixV().transpose();
            const Eigen::MatrixXd rotated = source * r;
            const Eigen::MatrixXd ps = greedy_signed_permutation(rotated.transpose() * target);
            out.transform = r * ps;
            out.aligned = source * out.transform;
        }
    } else {
        Eigen::MatrixXd score(k, k);
        for (int a = 0; a < k; ++a) {
            const double na = std::max(source.col(a).norm(), 1e-300);
            for (int b = 0; b < k; ++b) {
                const double nb = std::max(target.col(b).norm(), 1e-300);
                score(a, b) = source.col(a).dot(target.col(b)) / (na * nb);
            }
        }
        const Eigen::MatrixXd ps = greedy_signed_permutation(score);
        out.transform = ps;
        out.aligned = source * ps;
    }
    out.residual = (out.aligned - target).norm();
    return out;
}

}  // namespace tffa
