#include "tffa/postprocess.hpp"

#include "tffa/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace tffa {

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int o = -radius; o <= radius; ++o) {
        const double v = std::exp(-0.5 * (o / sigma) * (o / sigma));
        w[static_cast<std::size_t>(o + radius)] = v;
        total += v;
    }
    for (double& v : w) v /= total;
    return w;
}

int reflect_index(int i, int m) {
    while (i < 0 || i >= m) {
        if (i < 0) i = -i - 1;
        if (i >= m) i = 2 * m - 1 - i;
    }
    return i;
}

// One separable pass along `axis` over a full-grid buffer. Zero padding
// when `zero_pad` (masked grids), reflect padding otherwise.
void convolve_axis(const std::vector<int>& dims, std::vector<double>& buf, int axis,
                   const std::vector<double>& kernel, bool zero_pad) {
    const int radius = static_cast<int>(kernel.size() / 2);
    const int m = dims[static_cast<std::size_t>(axis)];

    std::int64_t stride = 1;
    for (int d = static_cast<int>(dims.size()) - 1; d > axis; --d) stride *= dims[static_cast<std::size_t>(d)];
    std::int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= dims[static_cast<std::size_t>(d)];
    const std::int64_t inner = stride;
    const std::int64_t axis_span = static_cast<std::int64_t>(m) * stride;

    std::vector<double> line(static_cast<std::size_t>(m));
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * axis_span + in;
            for (int i = 0; i < m; ++i) line[static_cast<std::size_t>(i)] = buf[base + i * stride];
            for (int i = 0; i < m; ++i) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const int src = i + k;
                    double v;
                    if (src < 0 || src >= m) {
                        v = zero_pad ? 0.0 : line[static_cast<std::size_t>(reflect_index(src, m))];
                    } else {
                        v = line[static_cast<std::size_t>(src)];
                    }
                    acc += kernel[static_cast<std::size_t>(k + radius)] * v;
                }
                buf[base + i * stride] = acc;
            }
        }
    }
}

}  // namespace

Eigen::VectorXd gaussian_smooth(const SpatialGrid& grid, const Eigen::VectorXd& field,
                                double sigma) {
    validate(sigma >= 0.0, "sigma must be nonnegative");
    validate(field.size() == grid.active_count(), "field length does not match grid");
    if (sigma == 0.0) return field;
    const std::vector<double> kernel = gaussian_kernel(sigma);
    if (kernel.size() == 1) return field;

    const std::int64_t total = grid.total_cells();
    std::vector<double> num(static_cast<std::size_t>(total), 0.0);
    for (std::int64_t row = 0; row < grid.active_count(); ++row) {
        num[static_cast<std::size_t>(grid.active_to_full(row))] = field[row];
    }

    if (!grid.has_mask()) {
        for (int d = 0; d < grid.ndim(); ++d) {
            convolve_axis(grid.dims(), num, d, kernel, /*zero_pad=*/false);
        }
        Eigen::VectorXd out(grid.active_count());
        for (std::int64_t row = 0; row < grid.active_count(); ++row) {
            out[row] = num[static_cast<std::size_t>(grid.active_to_full(row))];
        }
        return out;
    }

    // Normalized convolution: out-of-mask voxels are excluded and the
    // kernel mass renormalized over what remains.
    std::vector<double> den(static_cast<std::size_t>(total), 0.0);
    for (std::int64_t row = 0; row < grid.active_count(); ++row) {
        den[static_cast<std::size_t>(grid.active_to_full(row))] = 1.0;
    }
    for (int d = 0; d < grid.ndim(); ++d) {
        convolve_axis(grid.dims(), num, d, kernel, /*zero_pad=*/true);
        convolve_axis(grid.dims(), den, d, kernel, /*zero_pad=*/true);
    }
    Eigen::VectorXd out(grid.active_count());
    for (std::int64_t row = 0; row < grid.active_count(); ++row) {
        const std::size_t full = static_cast<std::size_t>(grid.active_to_full(row));
        out[row] = num[full] / den[full];
    }
    return out;
}

Eigen::MatrixXd gaussian_smooth_columns(const SpatialGrid& grid, const Eigen::MatrixXd& fields,
                                        const Eigen::VectorXd& sigma_per_column) {
    validate(sigma_per_column.size() == fields.cols(), "need one sigma per column");
    Eigen::MatrixXd out(fields.rows(), fields.cols());
    parallel_for_blocks(fields.cols(), [&](std::int64_t c) {
        out.col(c) = gaussian_smooth(grid, fields.col(c), sigma_per_column[c]);
    });
    return out;
}

double adaptive_shrink_value(double x, double kappa) {
    if (kappa == 0.0) return x;
    if (x == 0.0) return 0.0;  // w(0) = +inf
    const double threshold = kappa / (x * x);
    const double mag = std::abs(x) - threshold;
    if (mag <= 0.0) return 0.0;
    return x < 0.0 ? -mag : mag;
}

Eigen::VectorXd adaptive_shrink(const Eigen::VectorXd& field, double kappa) {
    validate(kappa >= 0.0, "kappa must be nonnegative");
    Eigen::VectorXd out(field.size());
    for (Eigen::Index i = 0; i < field.size(); ++i) out[i] = adaptive_shrink_value(field[i], kappa);
    return out;
}

Eigen::MatrixXd adaptive_shrink_columns(const Eigen::MatrixXd& fields,
                                        const Eigen::VectorXd& kappa_per_column) {
    validate(kappa_per_column.size() == fields.cols(), "need one kappa per column");
    Eigen::MatrixXd out(fields.rows(), fields.cols());
    for (Eigen::Index c = 0; c < fields.cols(); ++c) {
        out.col(c) = adaptive_shrink(fields.col(c), kappa_per_column[c]);
    }
    return out;
}

LoadingSet smooth_loading_set(const LoadingSet& set, const Eigen::VectorXd& sigma_per_column) {
    set.validate_shape();
    validate(set.stage == LoadingStage::Initial || set.stage == LoadingStage::Rotated,
             "smoothing expects initial or rotated loadings (got " + to_string(set.stage) + ")");
    LoadingSet out = set;
    out.matrix = gaussian_smooth_columns(set.grid, set.matrix, sigma_per_column);
    out.stage = LoadingStage::Smoothed;
    return out;
}

LoadingSet shrink_loading_set(const LoadingSet& set, const Eigen::VectorXd& kappa_per_column,
                              bool allow_unsmoothed) {
    set.validate_shape();
    if (!allow_unsmoothed) {
        validate(set.stage == LoadingStage::Smoothed,
                 "shrinkage is applied after smoothing; pass the override to shrink a " +
                     to_string(set.stage) + " set");
    }
    LoadingSet out = set;
    out.matrix = adaptive_shrink_columns(set.matrix, kappa_per_column);
    out.stage = LoadingStage::Shrunk;
    return out;
}

FoldSet make_folds(const std::vector<ScanTensor>& scans, int n_folds, const BandMask& mask,
                   int k_hat, const CompletionOptions& completion_opts,
                   const Eigen::MatrixXd& full_loadings, int batch) {
    const int n = static_cast<int>(scans.size());
    validate(n_folds >= 2, "need at least two folds");
    validate(n >= n_folds, "need at least one subject per fold");
    validate(full_loadings.cols() == k_hat, "full loadings must have K_hat columns");

    FoldSet out;
    out.n_folds = n_folds;
    out.subjects.resize(static_cast<std::size_t>(n_folds));
    for (int i = 0; i < n; ++i) out.subjects[static_cast<std::size_t>(i % n_folds)].push_back(i);

    for (int v = 0; v < n_folds; ++v) {
        std::vector<ScanTensor> own, rest;
        for (int i = 0; i < n; ++i) {
            if (i % n_folds == v) {
                own.push_back(scans[static_cast<std::size_t>(i)]);
            } else {
                rest.push_back(scans[static_cast<std::size_t>(i)]);
            }
        }
        out.fold_cov.push_back(empirical_spatial_cov(own, mask, batch));

        const MaskedCovariance rest_cov = empirical_spatial_cov(rest, mask, batch);
        const CompletionResult fit = complete_rank(rest_cov, k_hat, completion_opts);
        const LoadingSet fold_init = extract_loadings(fit.v, mask.grid());
        const AlignResult aligned =
            align_to_target(fold_init.matrix, full_loadings, RotationKind::Orthogonal);
        out.fold_loadings.push_back(aligned.aligned);
        out.align_residuals.push_back(aligned.residual);
    }
    return out;
}

namespace {

// Shared CV skeleton for sigma and kappa. `transform_fold` maps a fold's
// rotated loadings and a candidate parameter vector to the loadings whose
// implied covariance enters Err.
template <typename TransformFold>
CvResult run_cv(const FoldSet& folds, const RotationResult& rotation,
                const std::vector<double>& grid, bool uniform, bool tie_prefers_larger,
                const TransformFold& transform_fold) {
    validate(!grid.empty(), "candidate grid is empty");
    const int k = rotation.loadings.n_factors();
    const int v_folds = folds.n_folds;
    validate(v_folds >= 2 && static_cast<int>(folds.fold_cov.size()) == v_folds,
             "fold set is incomplete");

    // rotate each fold's aligned initial loadings with the full-data transform
    std::vector<Eigen::MatrixXd> fold_rotated;
    fold_rotated.reserve(static_cast<std::size_t>(v_folds));
    for (int v = 0; v < v_folds; ++v) {
        fold_rotated.push_back(rotation.apply(folds.fold_loadings[static_cast<std::size_t>(v)]));
    }

    auto cv_value = [&](const Eigen::VectorXd& params) {
        std::vector<double> errs(static_cast<std::size_t>(v_folds), 0.0);
        parallel_for_blocks(v_folds, [&](std::int64_t v) {
            const Eigen::MatrixXd l = transform_fold(fold_rotated[static_cast<std::size_t>(v)], params);
            const Eigen::MatrixXd implied = l * l.transpose();
            errs[static_cast<std::size_t>(v)] = masked_residual_norm(
                folds.fold_cov[static_cast<std::size_t>(v)].matrix, implied,
                folds.fold_cov[static_cast<std::size_t>(v)].mask);
        });
        double total = 0.0;
        for (double e : errs) total += e;
        return total / v_folds;
    };

    auto better = [&](double cv, double param, double best_cv, double best_param) {
        if (cv < best_cv) return true;
        if (cv > best_cv) return false;
        return tie_prefers_larger ? param > best_param : param < best_param;
    };

    CvResult out;
    if (uniform) {
        double best_cv = 0.0, best_param = 0.0;
        bool first = true;
        for (double g : grid) {
            const double cv = cv_value(Eigen::VectorXd::Constant(k, g));
            out.curve.push_back({g, cv});
            if (first || better(cv, g, best_cv, best_param)) {
                best_cv = cv;
                best_param = g;
                first = false;
            }
        }
        out.chosen = Eigen::VectorXd::Constant(k, best_param);
        return out;
    }

    // coordinate-wise, one pass; other components held at the current best
    Eigen::VectorXd current = Eigen::VectorXd::Constant(k, grid.front());
    out.component_curves.resize(static_cast<std::size_t>(k));
    for (int comp = 0; comp < k; ++comp) {
        double best_cv = 0.0, best_param = 0.0;
        bool first = true;
        for (double g : grid) {
            Eigen::VectorXd trial = current;
            trial[comp] = g;
            const double cv = cv_value(trial);
            out.component_curves[static_cast<std::size_t>(comp)].push_back({g, cv});
            if (first || better(cv, g, best_cv, best_param)) {
                best_cv = cv;
                best_param = g;
                first = false;
            }
        }
        current[comp] = best_param;
    }
    out.chosen = current;
    return out;
}

}  // namespace

CvResult cv_tune_sigma(const FoldSet& folds, const RotationResult& rotation,
                       const std::vector<double>& sigma_grid, bool uniform) {
    const SpatialGrid& grid = rotation.loadings.grid;
    const bool oblique = rotation.kind == RotationKind::Oblique;
    return run_cv(folds, rotation, sigma_grid, uniform, /*tie_prefers_larger=*/false,
                  [&](const Eigen::MatrixXd& rotated, const Eigen::VectorXd& sigmas) {
                      Eigen::MatrixXd smoothed = gaussian_smooth_columns(grid, rotated, sigmas);
                      return oblique ? rotation.derotate(smoothed) : smoothed;
                  });
}

CvResult cv_tune_kappa(const FoldSet& folds, const RotationResult& rotation,
                       const Eigen::VectorXd& sigma_star, const std::vector<double>& kappa_grid,
                       bool uniform) {
    const SpatialGrid& grid = rotation.loadings.grid;
    const bool oblique = rotation.kind == RotationKind::Oblique;
    validate(sigma_star.size() == rotation.loadings.n_factors(),
             "sigma_star must carry one value per component");

    // smoothing precedes shrinkage; fold loadings enter already smoothed
    return run_cv(folds, rotation, kappa_grid, uniform, /*tie_prefers_larger=*/true,
                  [&](const Eigen::MatrixXd& rotated, const Eigen::VectorXd& kappas) {
                      const Eigen::MatrixXd smoothed =
                          gaussian_smooth_columns(grid, rotated, sigma_star);
                      Eigen::MatrixXd shrunk = adaptive_shrink_columns(smoothed, kappas);
                      return oblique ? rotation.derotate(shrunk) : shrunk;
                  });
}

}  // namespace tffa
