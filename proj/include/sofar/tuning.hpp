#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sofar/errors.hpp"
#include "sofar/lasso.hpp"
#include "sofar/linalg.hpp"
#include "sofar/penalty.hpp"
#include "sofar/solver.hpp"

namespace sofar {

enum class Criterion { Validation, KFoldCV, GIC };

inline std::string to_string(Criterion c)
{
    switch (c) {
    case Criterion::Validation: return "valid";
    case Criterion::KFoldCV: return "cv";
    case Criterion::GIC: return "gic";
    }
    return "?";
}

struct NullBounds {
    double lambda_d = 0.0;
    double lambda_a = 0.0;
    double lambda_b = 0.0;
    /// X^T Y vanished; every bound is zero.
    bool null_data = false;
};

/// Upper bounds from the marginal null models (two of the three lambdas at
/// zero, the third at the smallest value giving the zero fit).
///
/// Unweighted: lambda_d* = sigma_1(X^T Y), lambda_a* from X^T Y, lambda_b*
/// from Y^T X. Adaptive penalties carry p x m / q x m weights, so their
/// gradients are taken in the frame of the initial factors (X^T Y V0 and
/// Y^T X U0), and lambda_d* is divided by the smallest singular-value weight.
inline NullBounds marginal_null_bounds(const Mat& x, const Mat& y, const Penalty& penalty_a,
                                       const Penalty& penalty_b,
                                       const std::optional<Vec>& weights_d = std::nullopt,
                                       const InitState* init = nullptr)
{
    if (x.rows() != y.rows()) throw InvalidArgument("marginal_null_bounds: row mismatch");
    const Mat xty = x.transpose() * y;
    NullBounds nb;
    if (xty.cwiseAbs().maxCoeff() == 0.0) {
        nb.null_data = true;
        return nb;
    }
    nb.lambda_d = spectral_norm(xty);
    if (weights_d) nb.lambda_d /= weights_d->minCoeff();

    auto frame = [&](const Penalty& pen, const Mat& g, const Mat* basis) {
        if (!pen.weights) return null_threshold(pen, g).lambda;
        if (!basis) throw InvalidArgument("marginal_null_bounds: adaptive weights need an init");
        return null_threshold(pen, Mat(g * *basis)).lambda;
    };
    nb.lambda_a = frame(penalty_a, xty, init ? &init->v0 : nullptr);
    nb.lambda_b = frame(penalty_b, Mat(xty.transpose()), init ? &init->u0 : nullptr);
    return nb;
}

struct CriterionData {
    const Mat* x_valid = nullptr;
    const Mat* y_valid = nullptr;
    int k_folds = 5;
};

struct SearchOptions {
    int grid_size = 30;
    double epsilon = 1e-3;
    Criterion criterion = Criterion::GIC;
    /// Multipliers on (lambda_d*, lambda_a*, lambda_b*) fixing the ray direction.
    std::array<double, 3> ratios{1.0, 1.0, 1.0};
    bool warm_start = true;
    std::uint64_t seed = 1;
};

struct GridPoint {
    double t = 0.0;
    double lambda_d = 0.0;
    double lambda_a = 0.0;
    double lambda_b = 0.0;
};

struct TuningResult {
    std::vector<GridPoint> grid;
    std::vector<double> scores;
    std::vector<Index> ranks;
    std::size_t best_index = 0;
    SofarFit best_fit;
    Criterion criterion = Criterion::GIC;
    NullBounds bounds;
    /// The fit at t = 1 was the zero model.
    bool null_at_top = false;
    /// Every fit on the path, in grid order (kept only when requested).
    std::vector<SofarFit> path;
    int monotonicity_violations = 0;
    double max_orth_deviation = 0.0;
};

/// Entries with magnitude above 1e-8.
inline Index count_nonzero(const Mat& m, double thr = 1e-8)
{
    return (m.array().abs() > thr).count();
}

/// log(RSS/(nq)) + log(log n) log(pq) df/(nq), df = nnz(D) + nnz(A) + nnz(B).
inline double gic_score(const Mat& x, const Mat& y, const SofarFit& f)
{
    const double n = static_cast<double>(x.rows());
    const double p = static_cast<double>(x.cols());
    const double q = static_cast<double>(y.cols());
    const double rss = (y - x * f.c).squaredNorm();
    const double df = static_cast<double>(count_nonzero(f.d) + count_nonzero(f.a) +
                                          count_nonzero(f.b));
    return std::log(std::max(rss, 1e-300) / (n * q)) +
           std::log(std::log(n)) * std::log(p * q) * df / (n * q);
}

inline double validation_error(const Mat& xv, const Mat& yv, const Mat& c)
{
    return (yv - xv * c).squaredNorm() / static_cast<double>(yv.rows() * yv.cols());
}

inline std::vector<GridPoint> ray_grid(const NullBounds& nb, const SearchOptions& opt)
{
    if (opt.grid_size < 2) throw InvalidArgument("search: grid_size must be at least 2");
    if (!(opt.epsilon > 0.0 && opt.epsilon < 1.0))
        throw InvalidArgument("search: epsilon must lie in (0, 1)");
    std::vector<GridPoint> grid;
    for (double t : log_grid(1.0, opt.epsilon, opt.grid_size))
        grid.push_back({t, t * opt.ratios[0] * nb.lambda_d, t * opt.ratios[1] * nb.lambda_a,
                        t * opt.ratios[2] * nb.lambda_b});
    return grid;
}

/// base with the penalty levels of grid point g.
inline SofarConfig at_point(const SofarConfig& base, const GridPoint& g)
{
    SofarConfig c = base;
    c.lambda_d = g.lambda_d;
    c.lambda_a = g.lambda_a;
    c.lambda_b = g.lambda_b;
    return c;
}

namespace detail {

// Fits along the ray with optional warm starts. A warm start is used only
// when the previous fit kept all m layers, since pruned layers cannot return.
inline std::vector<SofarFit> fit_path(const Mat& x, const Mat& y, Index m,
                                      const SofarConfig& base, const InitState& init,
                                      const std::vector<GridPoint>& grid, bool warm_start)
{
    std::vector<SofarFit> fits;
    fits.reserve(grid.size());
    const SofarState* warm = nullptr;
    for (const auto& g : grid) {
        FitOptions fo;
        if (warm_start && warm && warm->rank() == m) fo.warm = warm;
        fits.push_back(fit(x, y, m, at_point(base, g), init, fo));
        warm = &fits.back().final_state;
    }
    return fits;
}

}  // namespace detail

/// One-dimensional search along t * (lambda_d*, lambda_a*, lambda_b*),
/// t log-spaced from 1 down to epsilon. Ties go to the larger t.
inline TuningResult search(const Mat& x, const Mat& y, Index m, const SofarConfig& base,
                           const InitState& init, const SearchOptions& opt,
                           const CriterionData& data = {}, bool keep_path = false)
{
    if (opt.criterion == Criterion::Validation && (!data.x_valid || !data.y_valid))
        throw InvalidArgument("search: validation criterion needs validation data");

    TuningResult res;
    res.criterion = opt.criterion;
    res.bounds = marginal_null_bounds(x, y, base.penalty_a, base.penalty_b, base.weights_d, &init);
    res.grid = ray_grid(res.bounds, opt);

    std::vector<SofarFit> fits = detail::fit_path(x, y, m, base, init, res.grid, opt.warm_start);
    res.scores.assign(res.grid.size(), 0.0);

    if (opt.criterion == Criterion::KFoldCV) {
        const auto folds = make_folds(x.rows(), data.k_folds, opt.seed);
        for (const auto& held : folds) {
            const auto train = complement(x.rows(), held);
            const Mat xt = x(train, Eigen::all);
            const Mat yt = y(train, Eigen::all);
            const Mat xv = x(held, Eigen::all);
            const Mat yv = y(held, Eigen::all);
            const InitState fold_init =
                init_from_estimate(lasso_matrix(xt, yt, init.lambda0), m, init.lambda0);
            const auto fold_fits =
                detail::fit_path(xt, yt, m, base, fold_init, res.grid, opt.warm_start);
            for (std::size_t g = 0; g < res.grid.size(); ++g)
                res.scores[g] += validation_error(xv, yv, fold_fits[g].c) / data.k_folds;
        }
    } else {
        for (std::size_t g = 0; g < res.grid.size(); ++g) {
            res.scores[g] = opt.criterion == Criterion::Validation
                                ? validation_error(*data.x_valid, *data.y_valid, fits[g].c)
                                : gic_score(x, y, fits[g]);
        }
    }

    for (std::size_t g = 0; g < fits.size(); ++g) {
        res.ranks.push_back(fits[g].rank());
        res.monotonicity_violations += fits[g].monotonicity_violations;
        res.max_orth_deviation = std::max(
            {res.max_orth_deviation, orth_deviation(fits[g].u), orth_deviation(fits[g].v)});
    }
    res.best_index = 0;
    for (std::size_t g = 1; g < res.scores.size(); ++g)
        if (res.scores[g] < res.scores[res.best_index]) res.best_index = g;
    res.null_at_top = fits.front().rank() == 0;
    res.best_fit = fits[res.best_index];
    if (keep_path) res.path = std::move(fits);
    return res;
}

/// Adaptive weights for SOFAR from an InitState: W_d = 1/d~, W_a from
/// A~ = U~ D~, W_b from B~ = V~ D~ (entrywise or row-norm reciprocals).
inline SofarConfig with_adaptive_weights(SofarConfig cfg, const InitState& init,
                                         double floor = 1e-8)
{
    cfg.weights_d = init.d0.unaryExpr([floor](double d) { return 1.0 / std::max(d, floor); });
    cfg.penalty_a = adaptive_penalty(cfg.penalty_a.kind, init.a0(), floor);
    cfg.penalty_b = adaptive_penalty(cfg.penalty_b.kind, init.b0(), floor);
    return cfg;
}

}  // namespace sofar
