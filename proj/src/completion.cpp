#include "tffa/completion.hpp"

#include "tffa/parallel.hpp"
#include "tffa/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace tffa {

CompletionOptions::Optimizer optimizer_from_string(const std::string& s) {
    if (s == "quasi_newton") return CompletionOptions::Optimizer::QuasiNewton;
    if (s == "block_sgd") return CompletionOptions::Optimizer::BlockSgd;
    if (s == "hybrid") return CompletionOptions::Optimizer::Hybrid;
    throw ValidationError("unknown optimizer: " + s);
}

std::string to_string(CompletionOptions::Optimizer o) {
    switch (o) {
        case CompletionOptions::Optimizer::QuasiNewton: return "quasi_newton";
        case CompletionOptions::Optimizer::BlockSgd: return "block_sgd";
        case CompletionOptions::Optimizer::Hybrid: return "hybrid";
    }
    return "quasi_newton";
}

std::int64_t rank_cap(const SpatialGrid& grid, const std::vector<double>& delta) {
    validate(static_cast<int>(delta.size()) == grid.ndim(),
             "rank cap needs one bandwidth per dimension");
    std::int64_t cap = 1;
    for (int d = 0; d < grid.ndim(); ++d) {
        validate(delta[d] < 0.5, "identifiability requires every delta_d < 1/2");
        validate(delta[d] >= 0.0, "bandwidth must be nonnegative");
        // epsilon guard so exact integer boundaries are not lost to rounding
        const double raw = (0.5 - delta[d]) * grid.dims()[d] - 1.0;
        const std::int64_t factor = static_cast<std::int64_t>(std::floor(raw + 1e-9));
        cap *= std::max<std::int64_t>(factor, 0);
    }
    return cap;
}

std::int64_t rank_cap(const SpatialGrid& grid, double delta) {
    return rank_cap(grid, std::vector<double>(grid.ndim(), delta));
}

// ---------------------------------------------------------------------------
// Masked objective f(V) = sum_{Z=1} (C - V V^T)^2, gradient -4 (Z o (C-VV^T)) V.
// Row-block parallel with fixed block size; every entry is owned by one
// block, so values are thread-count invariant.
// ---------------------------------------------------------------------------

namespace {

constexpr std::int64_t kRowBlock = 128;

struct MaskedObjective {
    const Eigen::MatrixXd& c;
    const BandMask& mask;

    double value(const Eigen::MatrixXd& v) const {
        const std::int64_t m = c.rows();
        const std::int64_t n_blocks = (m + kRowBlock - 1) / kRowBlock;
        std::vector<double> partial(static_cast<std::size_t>(n_blocks), 0.0);
        parallel_for_blocks(n_blocks, [&](std::int64_t blk) {
            const std::int64_t r0 = blk * kRowBlock;
            const std::int64_t rows = std::min(kRowBlock, m - r0);
            Eigen::MatrixXd resid = c.middleRows(r0, rows);
            resid.noalias() -= v.middleRows(r0, rows) * v.transpose();
            double acc = 0.0;
            for (std::int64_t r = 0; r < rows; ++r) {
                for (std::int64_t b = 0; b < m; ++b) {
                    if (mask.matrix()(r0 + r, b)) acc += resid(r, b) * resid(r, b);
                }
            }
            partial[static_cast<std::size_t>(blk)] = acc;
        });
        double total = 0.0;
        for (double p : partial) total += p;
        return total;
    }

    double value_and_grad(const Eigen::MatrixXd& v, Eigen::MatrixXd& grad) const {
        const std::int64_t m = c.rows();
        grad.resize(v.rows(), v.cols());
        const std::int64_t n_blocks = (m + kRowBlock - 1) / kRowBlock;
        std::vector<double> partial(static_cast<std::size_t>(n_blocks), 0.0);
        parallel_for_blocks(n_blocks, [&](std::int64_t blk) {
            const std::int64_t r0 = blk * kRowBlock;
            const std::int64_t rows = std::min(kRowBlock, m - r0);
            Eigen::MatrixXd resid = c.middleRows(r0, rows);
            resid.noalias() -= v.middleRows(r0, rows) * v.transpose();
            double acc = 0.0;
            for (std::int64_t r = 0; r < rows; ++r) {
                for (std::int64_t b = 0; b < m; ++b) {
                    if (mask.matrix()(r0 + r, b)) {
                        acc += resid(r, b) * resid(r, b);
                    } else {
                        resid(r, b) = 0.0;
                    }
                }
            }
            grad.middleRows(r0, rows).noalias() = -4.0 * (resid * v);
            partial[static_cast<std::size_t>(blk)] = acc;
        });
        double total = 0.0;
        for (double p : partial) total += p;
        return total;
    }
};

double leading_eigenvalue_estimate(const Eigen::MatrixXd& c, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, {rng_tag::completion, 0xE16});
    Eigen::VectorXd x = rng.normal_vec(c.rows());
    x.normalize();
    double lambda = 1.0;
    for (int it = 0; it < 30; ++it) {
        Eigen::VectorXd y = c * x;
        lambda = y.norm();
        if (lambda <= 0.0) return 1.0;
        x = y / lambda;
    }
    return lambda;
}

struct OptimizerOutcome {
    Eigen::MatrixXd v;
    double f = 0.0;
    int iterations = 0;
    double grad_norm = 0.0;
};

OptimizerOutcome run_lbfgs(const MaskedObjective& obj, Eigen::MatrixXd v,
                           const CompletionOptions& opts, int max_iters) {
    using Eigen::Map;
    const Eigen::Index dim = v.size();

    Eigen::MatrixXd grad;
    double f = obj.value_and_grad(v, grad);
    require(std::isfinite(f), "objective not finite at initialization");

    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;

    OptimizerOutcome out;
    int iter = 0;
    for (; iter < max_iters; ++iter) {
        const double gnorm = grad.norm();
        if (gnorm <= opts.grad_tol * (1.0 + std::abs(f))) break;

        // two-loop recursion
        Eigen::VectorXd q = Map<const Eigen::VectorXd>(grad.data(), dim);
        std::vector<double> alpha(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        if (!s_hist.empty()) {
            const double gamma =
                s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            q *= gamma;
        } else {
            q *= 1.0 / std::max(1.0, gnorm);
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha[i] - beta) * s_hist[i];
        }
        Eigen::VectorXd direction = -q;

        double dir_dot_grad = direction.dot(Map<const Eigen::VectorXd>(grad.data(), dim));
        if (!(dir_dot_grad < 0.0)) {  // not a descent direction; restart
            direction = -Map<const Eigen::VectorXd>(grad.data(), dim);
            dir_dot_grad = -direction.squaredNorm();
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        // Armijo backtracking
        double step = 1.0;
        Eigen::MatrixXd v_new;
        double f_new = f;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            v_new = v + step * Map<const Eigen::MatrixXd>(direction.data(), v.rows(), v.cols());
            f_new = obj.value(v_new);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * dir_dot_grad) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // stalled; gradient too inaccurate to improve

        Eigen::MatrixXd grad_new;
        const double f_check = obj.value_and_grad(v_new, grad_new);
        (void)f_check;

        Eigen::VectorXd s = step * direction;
        Eigen::VectorXd y = Map<const Eigen::VectorXd>(grad_new.data(), dim) -
                            Map<const Eigen::VectorXd>(grad.data(), dim);
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opts.lbfgs_memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        v = std::move(v_new);
        grad = std::move(grad_new);
        f = f_new;
    }

    out.v = std::move(v);
    out.f = f;
    out.iterations = iter;
    out.grad_norm = grad.norm();
    return out;
}

// Round-robin tournament over voxel blocks: every unordered block pair is
// visited exactly once per epoch, diagonal cells in one opening round.
// Cells within a round touch disjoint row blocks of V, so they can run in
// parallel with bitwise-reproducible results.
struct StratumSchedule {
    std::vector<std::pair<std::int64_t, std::int64_t>> block_range;  // [begin, end) rows
    std::vector<std::vector<std::pair<int, int>>> rounds;            // cells (p, q), p <= q
};

StratumSchedule build_schedule(std::int64_t m, int n_strata, std::uint64_t seed) {
    StratumSchedule sched;
    const int s = static_cast<int>(std::min<std::int64_t>(std::max(1, n_strata), m));
    const std::int64_t base = m / s, extra = m % s;
    std::int64_t begin = 0;
    for (int b = 0; b < s; ++b) {
        const std::int64_t len = base + (b < extra ? 1 : 0);
        sched.block_range.emplace_back(begin, begin + len);
        begin += len;
    }

    // seeded block relabeling so the sweep order is a function of the seed
    std::vector<int> label(s);
    for (int i = 0; i < s; ++i) label[i] = i;
    RngStream rng = RngStream::derive(seed, {rng_tag::completion, 0x5C4ED});
    for (int i = s - 1; i > 0; --i) {
        std::swap(label[i], label[rng.uniform_int(0, i)]);
    }

    std::vector<std::pair<int, int>> diag;
    for (int p = 0; p < s; ++p) diag.emplace_back(label[p], label[p]);
    sched.rounds.push_back(std::move(diag));

    const int padded = (s % 2 == 0) ? s : s + 1;
    for (int r = 0; r < padded - 1; ++r) {
        std::vector<std::pair<int, int>> round;
        for (int k = 0; k < padded / 2; ++k) {
            int a, b;
            if (k == 0) {
                a = padded - 1;
                b = r;
            } else {
                a = (r + k) % (padded - 1);
                b = (r - k + padded - 1) % (padded - 1);
            }
            if (a >= s || b >= s) continue;  // dummy slot when s is odd
            const int p = std::min(label[a], label[b]);
            const int q = std::max(label[a], label[b]);
            round.emplace_back(p, q);
        }
        if (!round.empty()) sched.rounds.push_back(std::move(round));
    }
    return sched;
}

OptimizerOutcome run_block_sgd(const MaskedObjective& obj, Eigen::MatrixXd v,
                               const CompletionOptions& opts, int epochs) {
    const std::int64_t m = obj.c.rows();
    const StratumSchedule sched = build_schedule(m, opts.n_strata, opts.seed);

    double rate = opts.sgd_rate;
    if (rate <= 0.0) {
        rate = 0.125 / std::max(1e-12, leading_eigenvalue_estimate(obj.c, opts.seed));
    }

    double f_prev = obj.value(v);
    Eigen::MatrixXd best_v = v;
    double best_f = f_prev;

    auto sweep_cell = [&](int p, int q) {
        const auto [p0, p1] = sched.block_range[static_cast<std::size_t>(p)];
        const auto [q0, q1] = sched.block_range[static_cast<std::size_t>(q)];
        const std::int64_t np = p1 - p0, nq = q1 - q0;
        if (np == 0 || nq == 0) return;

        Eigen::MatrixXd resid = obj.c.block(p0, q0, np, nq);
        resid.noalias() -= v.middleRows(p0, np) * v.middleRows(q0, nq).transpose();
        for (std::int64_t a = 0; a < np; ++a)
            for (std::int64_t b = 0; b < nq; ++b)
                if (!obj.mask.matrix()(p0 + a, q0 + b)) resid(a, b) = 0.0;

        if (p == q) {
            const Eigen::MatrixXd g = -4.0 * (resid * v.middleRows(p0, np));
            v.middleRows(p0, np).noalias() -= rate * g;
        } else {
            const Eigen::MatrixXd gp = -4.0 * (resid * v.middleRows(q0, nq));
            const Eigen::MatrixXd gq = -4.0 * (resid.transpose() * v.middleRows(p0, np));
            v.middleRows(p0, np).noalias() -= rate * gp;
            v.middleRows(q0, nq).noalias() -= rate * gq;
        }
    };

    int epoch = 0;
    for (; epoch < epochs; ++epoch) {
        for (const auto& round : sched.rounds) {
            parallel_for_blocks(static_cast<std::int64_t>(round.size()), [&](std::int64_t cell) {
                const auto [p, q] = round[static_cast<std::size_t>(cell)];
                sweep_cell(p, q);
            });
        }
        const double f_now = obj.value(v);
        if (!std::isfinite(f_now)) {
            throw CompletionDivergenceError("block SGD diverged (non-finite objective)",
                                            std::move(best_v));
        }
        // bold driver: reward improvement, back off on worsening
        if (f_now < f_prev) {
            rate *= 1.05;
        } else {
            rate *= 0.5;
        }
        f_prev = f_now;
        if (f_now < best_f) {
            best_f = f_now;
            best_v = v;
        }
        if (rate < 1e-14) break;
    }

    OptimizerOutcome out;
    out.v = std::move(best_v);
    out.f = best_f;
    out.iterations = epoch;
    Eigen::MatrixXd grad;
    obj.value_and_grad(out.v, grad);
    out.grad_norm = grad.norm();
    return out;
}

}  // namespace

Eigen::MatrixXd spectral_init(const MaskedCovariance& cov, int j, const CompletionOptions& opts) {
    const std::int64_t m = cov.matrix.rows();
    validate(j >= 1 && j <= m, "spectral init rank must be in [1, M]");

    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
    if (!opts.randomized_init) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.matrix);
        require(es.info() == Eigen::Success, "eigendecomposition failed");
        values = es.eigenvalues();
        vectors = es.eigenvectors();  // ascending order
    } else {
        // Halko-style randomized range finder with power iterations.
        const int probe = std::min<std::int64_t>(m, j + opts.randomized_oversample);
        RngStream rng = RngStream::derive(opts.seed, {rng_tag::randomized_svd});
        Eigen::MatrixXd omega(m, probe);
        for (std::int64_t r = 0; r < m; ++r)
            for (int c = 0; c < probe; ++c) omega(r, c) = rng.normal();
        Eigen::MatrixXd y = cov.matrix * omega;
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, probe);
        for (int it = 0; it < opts.randomized_power_iters; ++it) {
            y = cov.matrix * q;
            qr.compute(y);
            q = qr.householderQ() * Eigen::MatrixXd::Identity(m, probe);
        }
        const Eigen::MatrixXd b = q.transpose() * cov.matrix * q;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b);
        require(es.info() == Eigen::Success, "eigendecomposition failed");
        values = es.eigenvalues();
        vectors = q * es.eigenvectors();
    }

    Eigen::MatrixXd v0(m, j);
    const Eigen::Index top = values.size() - 1;
    for (int k = 0; k < j; ++k) {
        const double lambda = std::max(0.0, values[top - k]);
        v0.col(k) = vectors.col(top - k) * std::sqrt(lambda);
    }
    return v0;
}

CompletionResult complete_rank(const MaskedCovariance& cov, int j, const CompletionOptions& opts,
                               const std::optional<Eigen::MatrixXd>& init) {
    const SpatialGrid& grid = cov.mask.grid();
    const std::int64_t cap = rank_cap(grid, cov.mask.effective_delta());
    validate(j >= 1, "rank must be positive");
    validate(j <= cap, "requested rank " + std::to_string(j) + " exceeds the identifiability cap K* = " +
                           std::to_string(cap));
    validate(cov.mask.off_band_count() > 0, "band mask keeps no entries");

    MaskedObjective obj{cov.matrix, cov.mask};

    Eigen::MatrixXd v0 = init ? *init : spectral_init(cov, j, opts);
    validate(v0.rows() == cov.matrix.rows() && v0.cols() == j, "initialization has wrong shape");
    const double f_init = obj.value(v0);

    OptimizerOutcome best;
    switch (opts.optimizer) {
        case CompletionOptions::Optimizer::QuasiNewton:
            best = run_lbfgs(obj, v0, opts, opts.max_iters);
            break;
        case CompletionOptions::Optimizer::BlockSgd: {
            const int epochs = opts.sgd_epochs > 0 ? opts.sgd_epochs : opts.max_iters;
            best = run_block_sgd(obj, v0, opts, epochs);
            break;
        }
        case CompletionOptions::Optimizer::Hybrid: {
            const int epochs = opts.sgd_epochs > 0 ? opts.sgd_epochs
                                                   : std::max(5, opts.max_iters / 10);
            OptimizerOutcome warm = run_block_sgd(obj, v0, opts, epochs);
            best = run_lbfgs(obj, warm.v, opts, opts.max_iters);
            best.iterations += warm.iterations;
            break;
        }
    }

    CompletionResult out;
    if (best.f <= f_init) {
        out.v = std::move(best.v);
        out.objective = best.f;
        out.grad_norm = best.grad_norm;
    } else {
        out.v = std::move(v0);
        out.objective = f_init;
        Eigen::MatrixXd g;
        obj.value_and_grad(out.v, g);
        out.grad_norm = g.norm();
    }
    out.iterations = best.iterations;

    // Feasibility: trace of the estimate must not exceed the trace of the
    // empirical covariance.
    const double trace_v = out.v.squaredNorm();
    const double trace_c = cov.matrix.trace();
    if (trace_v > trace_c && trace_c > 0.0) {
        out.v *= std::sqrt(trace_c / trace_v);
        out.objective = obj.value(out.v);
        out.trace_rescaled = true;
    }
    return out;
}

RankPath rank_path(const MaskedCovariance& cov, int max_rank, const CompletionOptions& opts) {
    const std::int64_t cap = rank_cap(cov.mask.grid(), cov.mask.effective_delta());
    validate(max_rank >= 1, "max_rank must be positive");
    validate(max_rank <= cap,
             "max_rank " + std::to_string(max_rank) + " exceeds the identifiability cap K* = " +
                 std::to_string(cap));

    MaskedObjective obj{cov.matrix, cov.mask};

    RankPath path;
    path.f0 = masked_residual_norm(cov.matrix, Eigen::MatrixXd::Zero(cov.matrix.rows(), cov.matrix.cols()),
                                   cov.mask);
    path.has_f0 = true;

    // One full decomposition serves every spectral initialization.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.matrix);
    require(es.info() == Eigen::Success, "eigendecomposition failed");
    const Eigen::Index top = es.eigenvalues().size() - 1;
    auto spectral_cols = [&](int j) {
        Eigen::MatrixXd v0(cov.matrix.rows(), j);
        for (int k = 0; k < j; ++k) {
            const double lambda = std::max(0.0, es.eigenvalues()[top - k]);
            v0.col(k) = es.eigenvectors().col(top - k) * std::sqrt(lambda);
        }
        return v0;
    };

    for (int j = 1; j <= max_rank; ++j) {
        Eigen::MatrixXd init = spectral_cols(j);
        if (j > 1) {
            const Eigen::MatrixXd& prev = path.entries.back().v;
            // residual leading eigenvector via power iteration
            RngStream rng = RngStream::derive(opts.seed,
                                              {rng_tag::completion, static_cast<std::uint64_t>(j)});
            Eigen::VectorXd x = rng.normal_vec(cov.matrix.rows());
            x.normalize();
            double lambda = 0.0;
            for (int it = 0; it < 50; ++it) {
                Eigen::VectorXd y = cov.matrix * x - prev * (prev.transpose() * x);
                lambda = y.norm();
                if (lambda <= 1e-300) break;
                x = y / lambda;
            }
            Eigen::MatrixXd warm(cov.matrix.rows(), j);
            warm.leftCols(j - 1) = prev;
            warm.col(j - 1) = x * std::sqrt(std::max(0.0, lambda));
            if (obj.value(warm) < obj.value(init)) init = std::move(warm);
        }

        CompletionResult res = complete_rank(cov, j, opts, init);

        if (!path.entries.empty() && res.objective > path.entries.back().objective) {
            // keep the path nonincreasing: embed the previous solution
            RankPathEntry entry;
            entry.rank = j;
            entry.v = Eigen::MatrixXd::Zero(cov.matrix.rows(), j);
            entry.v.leftCols(j - 1) = path.entries.back().v;
            entry.objective = path.entries.back().objective;
            path.entries.push_back(std::move(entry));
        } else {
            path.entries.push_back({j, std::move(res.v), res.objective});
        }
    }
    return path;
}

RankSelection RankSelection::threshold_rule(double c) {
    RankSelection s;
    s.mode = Mode::Threshold;
    s.threshold = c;
    return s;
}

RankSelection RankSelection::fixed_rule(int j) {
    RankSelection s;
    s.mode = Mode::Fixed;
    s.fixed = j;
    return s;
}

int select_rank(const RankPath& path, const RankSelection& selection) {
    validate(!path.entries.empty(), "rank path is empty");
    const int r = static_cast<int>(path.entries.size());

    switch (selection.mode) {
        case RankSelection::Mode::Fixed:
            validate(selection.fixed >= 1 && selection.fixed <= r,
                     "fixed rank outside the computed path");
            return selection.fixed;

        case RankSelection::Mode::Threshold: {
            double fmin = std::numeric_limits<double>::infinity();
            for (const auto& e : path.entries) {
                if (e.objective < selection.threshold) return e.rank;
                fmin = std::min(fmin, e.objective);
            }
            throw ValidationError("threshold " + std::to_string(selection.threshold) +
                                  " never met; minimum objective on the path is " +
                                  std::to_string(fmin));
        }

        case RankSelection::Mode::Elbow: {
            if (r == 1) return 1;
            // log-scale second differences; the rank-0 anchor lets the
            // elbow land on j = 1
            const double floor_val =
                1e-15 * std::max(path.has_f0 ? path.f0 : 0.0, path.entries.front().objective);
            auto log_f = [&](int j) {  // j = 0 => f0
                const double f = (j == 0) ? path.f0 : path.entries[static_cast<std::size_t>(j - 1)].objective;
                return std::log(std::max(f, std::max(floor_val, 1e-300)));
            };
            const int j_lo = path.has_f0 ? 1 : 2;
            int best_j = j_lo;
            double best_curv = -std::numeric_limits<double>::infinity();
            for (int j = j_lo; j <= r - 1; ++j) {
                const double curv = log_f(j - 1) - 2.0 * log_f(j) + log_f(j + 1);
                if (curv > best_curv) {
                    best_curv = curv;
                    best_j = j;
                }
            }
            return best_j;
        }
    }
    throw ValidationError("unknown rank selection mode");
}

std::vector<ScreeRow> scree_data(const RankPath& path) {
    std::vector<ScreeRow> rows;
    const int r = static_cast<int>(path.entries.size());
    for (int i = 0; i < r; ++i) {
        ScreeRow row;
        row.rank = path.entries[static_cast<std::size_t>(i)].rank;
        row.objective = path.entries[static_cast<std::size_t>(i)].objective;
        row.ratio = (i + 1 < r && row.objective > 0.0)
                        ? path.entries[static_cast<std::size_t>(i + 1)].objective / row.objective
                        : std::numeric_limits<double>::quiet_NaN();
        rows.push_back(row);
    }
    return rows;
}

LoadingSet extract_loadings(const Eigen::MatrixXd& v, const SpatialGrid& grid) {
    validate(v.rows() == grid.active_count(), "factor rows do not match grid");
    validate(v.allFinite(), "factor matrix must be finite");
    const int k = static_cast<int>(v.cols());

    // K x K Gram trick: eigenvectors of V^T V rotate V onto the scaled
    // eigenvectors of V V^T.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v.transpose() * v);
    require(es.info() == Eigen::Success, "Gram eigendecomposition failed");
    const double max_eval = std::max(0.0, es.eigenvalues().maxCoeff());
    validate(es.eigenvalues().minCoeff() > 1e-12 * std::max(1.0, max_eval),
             "factor matrix has a (numerically) zero column");

    Eigen::MatrixXd q(k, k);
    for (int i = 0; i < k; ++i) q.col(i) = es.eigenvectors().col(k - 1 - i);

    Eigen::MatrixXd l = v * q;
    for (int c = 0; c < k; ++c) {
        Eigen::Index argmax = 0;
        l.col(c).cwiseAbs().maxCoeff(&argmax);
        if (l(argmax, c) < 0.0) l.col(c) = -l.col(c);
    }

    LoadingSet set;
    set.grid = grid;
    set.matrix = std::move(l);
    set.stage = LoadingStage::Initial;
    set.kind = RotationKind::Orthogonal;
    return set;
}

GlobalCovEstimate make_global_cov_estimate(const Eigen::MatrixXd& v, const SpatialGrid& grid) {
    GlobalCovEstimate est;
    est.k_hat = static_cast<int>(v.cols());
    est.v = v;
    est.loadings = extract_loadings(v, grid);
    est.eigenvalues = est.loadings.matrix.colwise().squaredNorm().transpose();
    return est;
}

}  // namespace tffa
