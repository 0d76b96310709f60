#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sofar/errors.hpp"
#include "sofar/lasso.hpp"
#include "sofar/linalg.hpp"
#include "sofar/penalty.hpp"
#include "sofar/solver.hpp"
#include "sofar/tuning.hpp"

namespace sofar {

/// Ordinary least squares (minimum-norm when X is rank deficient).
inline Mat ols_fit(const Mat& x, const Mat& y) { return min_norm_least_squares(x, y); }

/// Reduced-rank regression: C_ols V_m V_m^T with V_m the top-m right singular
/// vectors of the OLS fitted values.
inline Mat rrr_fit(const Mat& x, const Mat& y, Index m)
{
    if (m < 0 || m > std::min(x.cols(), y.cols())) throw InvalidArgument("rrr_fit: bad rank");
    if (m == 0) return Mat::Zero(x.cols(), y.cols());
    const Mat c_ols = min_norm_least_squares(x, y);
    const Mat fitted = x * c_ols;
    if (fitted.cwiseAbs().maxCoeff() == 0.0) return c_ols;
    const Mat vm = thin_svd(fitted).v.leftCols(m);
    return c_ols * vm * vm.transpose();
}

struct RankChoice {
    Mat c;
    Index rank = 0;
    std::vector<double> scores;
};

/// RRR with the rank picked on a validation set (ties to the smaller rank).
inline RankChoice rrr_validation(const Mat& x, const Mat& y, const Mat& xv, const Mat& yv,
                                 Index max_rank)
{
    max_rank = std::min<Index>(max_rank, std::min(x.cols(), y.cols()));
    const Mat c_ols = min_norm_least_squares(x, y);
    const ThinSvd svd = thin_svd(Mat(x * c_ols));
    RankChoice out;
    double best = std::numeric_limits<double>::infinity();
    for (Index k = 0; k <= max_rank; ++k) {
        const Mat c = k == 0 ? Mat::Zero(x.cols(), y.cols())
                             : Mat(c_ols * svd.v.leftCols(k) * svd.v.leftCols(k).transpose());
        const double e = validation_error(xv, yv, c);
        out.scores.push_back(e);
        if (e < best) {
            best = e;
            out.c = c;
            out.rank = k;
        }
    }
    return out;
}

/// Separate adaptive Lasso regressions, one per response, with weights
/// 1/|C~_ij| and each column's lambda chosen on a validation set over a log
/// grid from that column's lambda_max down to ratio * lambda_max.
inline Mat adaptive_lasso_validation(const Mat& x, const Mat& y, const Mat& xv, const Mat& yv,
                                     const Mat& c_tilde, int grid_size = 30, double ratio = 1e-4)
{
    if (c_tilde.rows() != x.cols() || c_tilde.cols() != y.cols())
        throw InvalidArgument("adaptive_lasso: initial estimate has the wrong shape");
    const LassoDesign design(x);
    const Mat corr = design.correlations(y);
    const Mat w = adaptive_weights(c_tilde);
    const double n = static_cast<double>(x.rows());
    Mat c = Mat::Zero(x.cols(), y.cols());
    for (Index j = 0; j < y.cols(); ++j) {
        // beta = scale * b, so w |beta| = (w * scale) |b| on the scaled problem.
        const Vec wj = w.col(j).cwiseProduct(design.scale()).cwiseMax(1e-300);
        // An all-zero initial column means every weight is infinite.
        if ((c_tilde.col(j).array() == 0.0).all()) continue;
        const double lmax = LassoDesign::lambda_max(corr.col(j), &wj);
        double best = validation_error(xv, yv.col(j), Vec::Zero(x.cols()));
        if (lmax == 0.0) continue;
        Vec warm = Vec::Zero(x.cols());
        const double yy = y.col(j).squaredNorm() / n;
        for (double lam : log_grid(lmax, ratio, grid_size)) {
            const LassoSolution sol = design.solve(corr.col(j), yy, lam, &wj, &warm);
            warm = sol.beta_scaled;
            const double e = validation_error(xv, yv.col(j), sol.beta);
            if (e < best) {
                best = e;
                c.col(j) = sol.beta;
            }
        }
    }
    return c;
}

/// Configuration of the sparse reduced-rank special case: lambda_d =
/// lambda_b = 0 and a rowwise group penalty on A.
inline SofarConfig srrr_config(double lambda_a, const SofarConfig& base = {})
{
    SofarConfig c = base;
    c.lambda_d = 0.0;
    c.lambda_b = 0.0;
    c.lambda_a = lambda_a;
    c.penalty_a = base.penalty_a.kind == PenaltyKind::RowwiseGroup ? base.penalty_a
                                                                     : Penalty::group();
    c.penalty_b = Penalty::l1();
    c.weights_d.reset();
    return c;
}

struct SrrrChoice {
    SofarFit fit;
    Index rank = 0;
    double score = std::numeric_limits<double>::infinity();
    int monotonicity_violations = 0;
    double max_orth_deviation = 0.0;
};

/// Adaptive SRRR tuned on a validation set jointly over the rank 1..max_rank
/// and lambda_a along [epsilon, 1] * lambda_a*.
inline SrrrChoice srrr_validation(const Mat& x, const Mat& y, const Mat& xv, const Mat& yv,
                                  const Mat& c_tilde, Index max_rank, SearchOptions opt,
                                  const SofarConfig& controls = {})
{
    SrrrChoice best;
    opt.criterion = Criterion::Validation;
    opt.ratios = {0.0, 1.0, 0.0};
    const CriterionData data{&xv, &yv};
    max_rank = std::min<Index>(max_rank, std::min(x.cols(), y.cols()));
    for (Index k = 1; k <= max_rank; ++k) {
        const InitState init = init_from_estimate(c_tilde, k);
        if (init.zero_fit) break;
        SofarConfig cfg = srrr_config(0.0, controls);
        cfg.penalty_a = adaptive_penalty(PenaltyKind::RowwiseGroup, init.a0());
        const TuningResult tr = search(x, y, k, cfg, init, opt, data);
        best.monotonicity_violations += tr.monotonicity_violations;
        best.max_orth_deviation = std::max(best.max_orth_deviation, tr.max_orth_deviation);
        if (tr.scores[tr.best_index] < best.score) {
            best.score = tr.scores[tr.best_index];
            best.fit = tr.best_fit;
            best.rank = k;
        }
    }
    if (!std::isfinite(best.score)) best.fit = zero_fit(x.cols(), y.cols());
    return best;
}

/// Output of an application wrapper: the SOFAR fit plus named derived blocks.
struct AppResult {
    SofarFit fit;
    std::map<std::string, Mat> derived;
};

/// SOFAR with the identity design (X = I_n, Y = data). Without an explicit
/// start, the rank-m SVD of the data is used.
inline SofarFit fit_identity(const Mat& data, Index m, const SofarConfig& cfg,
                             const InitState* init = nullptr)
{
    cfg.validate();
    if (m < 1 || m > std::min(data.rows(), data.cols()))
        throw InvalidArgument("fit_identity: rank m out of range");
    const InitState own = init ? *init : init_from_estimate(data, m);
    if (own.zero_fit) return zero_fit(data.rows(), data.cols());
    const SofarProblem pr = SofarProblem::identity_design(data);
    return fit_problem(pr, cfg, SofarState::from_init(own.u0, own.d0, own.v0, cfg.mu0),
                       LayerPenalties::from_config(cfg, m));
}

/// Biclustering: identity-design SOFAR on the data matrix; the supports of
/// the columns of U and V are the row and column clusters.
inline AppResult bicluster(const Mat& data, Index m, const SofarConfig& cfg)
{
    AppResult r;
    r.fit = fit_identity(data, m, cfg);
    Mat rows = (r.fit.u.array().abs() > 1e-8).cast<double>();
    Mat cols = (r.fit.v.array().abs() > 1e-8).cast<double>();
    r.derived["row_clusters"] = rows;
    r.derived["column_clusters"] = cols;
    return r;
}

/// Sparse PCA, regression form: X = Y = data with lambda_b = 0. Loadings
/// are the columns of U, scores X U.
inline AppResult sparse_pca_regression(const Mat& data, Index m, SofarConfig cfg)
{
    cfg.lambda_b = 0.0;
    const Index p = data.cols();
    if (m < 1 || m > std::min(data.rows(), p))
        throw InvalidArgument("sparse_pca_regression: rank m out of range");
    // Start from the projection onto the leading principal subspace.
    const Mat vm = thin_svd(data).v.leftCols(m);
    InitState init;
    init.c_tilde = vm * vm.transpose();
    init.u0 = vm;
    init.v0 = vm;
    init.d0 = Vec::Ones(m);
    for (Index i = 0; i < p; ++i) {
        init.kept_rows.push_back(i);
        init.kept_cols.push_back(i);
    }
    init.zero_fit = data.cwiseAbs().maxCoeff() == 0.0;
    AppResult r;
    r.fit = fit(data, data, m, cfg, init);
    r.derived["loadings"] = r.fit.u;
    r.derived["scores"] = data * r.fit.u;
    return r;
}

/// Sparse PCA, low-rank approximation form: identity design with
/// lambda_a = 0. Loadings are the columns of V.
inline AppResult sparse_pca_approx(const Mat& data, Index m, SofarConfig cfg)
{
    cfg.lambda_a = 0.0;
    AppResult r;
    r.fit = fit_identity(data, m, cfg);
    r.derived["loadings"] = r.fit.v;
    r.derived["scores"] = r.fit.u * r.fit.d.asDiagonal();
    return r;
}

/// Sparse factor model on a T x p panel: F = sqrt(T) U, Lambda = V D / sqrt(T),
/// so F^T F / T = I.
inline AppResult sparse_factor_analysis(const Mat& series, Index m, const SofarConfig& cfg)
{
    AppResult r;
    r.fit = fit_identity(series, m, cfg);
    const double st = std::sqrt(static_cast<double>(series.rows()));
    r.derived["factors"] = st * r.fit.u;
    r.derived["loadings"] = r.fit.v * r.fit.d.asDiagonal() / st;
    return r;
}

/// Two-step sparse factor-augmented VAR. Step 1 fits x_t on x_{t-1} by
/// SOFAR (rows are time, so the transition matrix is C^T). Step 2 regresses
/// y_t on (y_{t-1}, f_{t-1}) by OLS with f_t = U^T x_t.
inline AppResult sparse_var(const Mat& x_series, const Mat& y_series, Index m,
                            const SofarConfig& cfg, const InitOptions& init_opt = {})
{
    const Index t_len = x_series.rows();
    if (t_len < 3) throw InvalidArgument("sparse_var: need at least 3 time points");
    if (y_series.rows() != t_len) throw InvalidArgument("sparse_var: series lengths differ");
    const Mat lagged = x_series.topRows(t_len - 1);
    const Mat lead = x_series.bottomRows(t_len - 1);
    const InitState init = initialize(lagged, lead, m, init_opt);

    AppResult r;
    r.fit = fit(lagged, lead, m, cfg, init);
    r.derived["transition"] = r.fit.c.transpose();
    r.derived["D"] = Mat(r.fit.d);
    const Mat f = x_series * r.fit.u;
    r.derived["factors_f"] = f;
    r.derived["factors_g"] = x_series * r.fit.v;

    const Index ql = y_series.cols();
    const Index k = f.cols();
    Mat design(t_len - 1, ql + k);
    design.leftCols(ql) = y_series.topRows(t_len - 1);
    if (k > 0) design.rightCols(k) = f.topRows(t_len - 1);
    const Mat coef = min_norm_least_squares(design, y_series.bottomRows(t_len - 1));
    r.derived["A"] = coef.topRows(ql);
    r.derived["B"] = coef.bottomRows(k);
    return r;
}

}  // namespace sofar
