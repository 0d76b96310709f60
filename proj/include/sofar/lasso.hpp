#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sofar/errors.hpp"
#include "sofar/linalg.hpp"
#include "sofar/random.hpp"

namespace sofar {

struct LassoControl {
    /// Converged when the largest coordinate change in a full sweep is below tol.
    double tol = 1e-10;
    int max_sweeps = 10000;
};

/// Solution of (2n)^-1 ||y - X b||^2 + lambda * sum_j w_j |b_j| on the
/// column-scaled design (||x_j||^2 = n). `beta` is on the original scale.
struct LassoSolution {
    Vec beta;
    Vec beta_scaled;
    int sweeps = 0;
    double objective = 0.0;
    double kkt_residual = 0.0;
    /// Sweeps whose objective exceeded the previous sweep's (should stay 0).
    int objective_increases = 0;
};

/// Design matrix with columns rescaled to squared norm n and its Gram
/// matrix, shared across all response columns and along a lambda path.
class LassoDesign {
public:
    explicit LassoDesign(const Mat& x) : x_(x), n_(static_cast<double>(x.rows()))
    {
        if (x.rows() == 0 || x.cols() == 0) throw InvalidArgument("lasso: empty design");
        scale_.resize(x.cols());
        for (Index j = 0; j < x.cols(); ++j) {
            const double nrm = x.col(j).norm();
            scale_(j) = nrm > 0.0 ? std::sqrt(n_) / nrm : 0.0;
        }
        gram_ = scale_.asDiagonal() * (x.transpose() * x) * scale_.asDiagonal() / n_;
    }

    Index n() const { return x_.rows(); }
    Index p() const { return x_.cols(); }
    const Vec& scale() const { return scale_; }
    const Mat& gram() const { return gram_; }

    /// Scaled correlations X~^T y / n for every column of y. Columns are
    /// computed one at a time so a column's result does not depend on its
    /// neighbours.
    Mat correlations(const Mat& y) const
    {
        Mat out(x_.cols(), y.cols());
        for (Index j = 0; j < y.cols(); ++j)
            out.col(j) = scale_.cwiseProduct(x_.transpose() * y.col(j)) / n_;
        return out;
    }

    /// Solve one response given its scaled correlation vector and ||y||^2/n.
    LassoSolution solve(const Vec& corr, double yy_over_n, double lambda,
                        const Vec* weights = nullptr, const Vec* warm_scaled = nullptr,
                        const LassoControl& ctl = {}) const
    {
        if (!(lambda >= 0.0)) throw InvalidArgument("lasso: lambda must be nonnegative");
        const Index p = gram_.rows();
        LassoSolution sol;
        Vec b = warm_scaled ? *warm_scaled : Vec::Zero(p);
        Vec g = corr - gram_ * b;
        auto wt = [&](Index j) { return weights ? (*weights)(j) : 1.0; };

        auto objective = [&]() {
            double pen = 0.0;
            for (Index j = 0; j < p; ++j)
                if (b(j) != 0.0) pen += wt(j) * std::abs(b(j));
            return 0.5 * (yy_over_n - b.dot(corr) - b.dot(g)) + lambda * pen;
        };

        auto update = [&](Index j) {
            const double gjj = gram_(j, j);
            if (gjj <= 0.0) return 0.0;
            const double z = g(j) + gjj * b(j);
            const double thr = lambda * wt(j);
            double next = 0.0;
            if (z > thr) next = (z - thr) / gjj;
            else if (z < -thr) next = (z + thr) / gjj;
            const double delta = next - b(j);
            if (delta != 0.0) {
                g.noalias() -= gram_.col(j) * delta;
                b(j) = next;
            }
            return std::abs(delta);
        };

        double prev = objective();
        auto record_sweep = [&]() {
            ++sol.sweeps;
            const double obj = objective();
            if (obj > prev + 1e-12 * std::max(1.0, std::abs(prev))) ++sol.objective_increases;
            prev = obj;
        };

        // Exact minimizer on the current support and sign pattern, accepted
        // only if the signs survive. Coordinate descent crawls on strongly
        // correlated designs; this jumps to the face minimizer.
        std::vector<Index> face;
        auto polish = [&]() {
            face.clear();
            for (Index j = 0; j < p; ++j)
                if (b(j) != 0.0) face.push_back(j);
            const Index k = static_cast<Index>(face.size());
            if (k == 0) return;
            const Mat gaa = gram_(face, face);
            Vec rhs(k);
            for (Index a = 0; a < k; ++a) {
                const Index j = face[static_cast<std::size_t>(a)];
                rhs(a) = corr(j) - std::copysign(lambda * wt(j), b(j));
            }
            const Eigen::LDLT<Mat> ldlt(gaa);
            if (ldlt.info() != Eigen::Success) return;
            const Vec z = ldlt.solve(rhs);
            if (!z.allFinite() || (gaa * z - rhs).norm() > 1e-10 * std::max(1.0, rhs.norm())) return;
            for (Index a = 0; a < k; ++a)
                if (z(a) == 0.0 || (z(a) > 0.0) != (b(face[static_cast<std::size_t>(a)]) > 0.0)) return;
            for (Index a = 0; a < k; ++a) b(face[static_cast<std::size_t>(a)]) = z(a);
            g = corr - gram_ * b;
            record_sweep();
        };

        std::vector<Index> active;
        while (sol.sweeps < ctl.max_sweeps) {
            double max_change = 0.0;
            for (Index j = 0; j < p; ++j) max_change = std::max(max_change, update(j));
            record_sweep();
            if (max_change <= ctl.tol) break;

            active.clear();
            for (Index j = 0; j < p; ++j)
                if (b(j) != 0.0) active.push_back(j);
            int since_polish = 0;
            while (sol.sweeps < ctl.max_sweeps) {
                double change = 0.0;
                for (Index j : active) change = std::max(change, update(j));
                record_sweep();
                if (change <= ctl.tol) break;
                if (++since_polish == 20) {
                    since_polish = 0;
                    polish();
                }
            }
        }

        // Recompute the gradient from scratch before the KKT check.
        g = corr - gram_ * b;
        double kkt = 0.0;
        for (Index j = 0; j < p; ++j) {
            if (gram_(j, j) <= 0.0) continue;
            const double thr = lambda * wt(j);
            if (b(j) != 0.0) {
                kkt = std::max(kkt, std::abs(g(j) - std::copysign(thr, b(j))));
            } else {
                kkt = std::max(kkt, std::max(0.0, std::abs(g(j)) - thr));
            }
        }
        sol.kkt_residual = kkt;
        sol.objective = objective();
        sol.beta = scale_.cwiseProduct(b);
        sol.beta_scaled = std::move(b);
        return sol;
    }

    LassoSolution solve_response(const Vec& y, double lambda, const Vec* weights = nullptr,
                                 const LassoControl& ctl = {}) const
    {
        if (y.size() != x_.rows()) throw InvalidArgument("lasso: response length mismatch");
        return solve(correlations(y).col(0), y.squaredNorm() / n_, lambda, weights, nullptr,
                     ctl);
    }

    /// Smallest lambda giving the all-zero solution for a correlation vector.
    static double lambda_max(const Vec& corr, const Vec* weights = nullptr)
    {
        double out = 0.0;
        for (Index j = 0; j < corr.size(); ++j)
            out = std::max(out, std::abs(corr(j)) / (weights ? (*weights)(j) : 1.0));
        return out;
    }

private:
    Mat x_;
    double n_;
    Vec scale_;
    Mat gram_;
};

/// Single-response Lasso (2n)^-1 ||y - X b||^2 + lambda0 ||b||_1 with
/// internally standardized columns; coefficients on the original scale.
inline Vec lasso_column(const Mat& x, const Vec& y, double lambda0)
{
    if (lambda0 < 0.0) throw InvalidArgument("lasso_column: lambda0 must be nonnegative");
    return LassoDesign(x).solve_response(y, lambda0).beta;
}

/// Column-separable Lasso for a response matrix.
inline Mat lasso_matrix(const Mat& x, const Mat& y, double lambda0,
                        const Mat* weights = nullptr)
{
    if (lambda0 < 0.0) throw InvalidArgument("lasso_matrix: lambda0 must be nonnegative");
    if (x.rows() != y.rows()) throw InvalidArgument("lasso_matrix: row count mismatch");
    const LassoDesign design(x);
    const Mat corr = design.correlations(y);
    const double n = static_cast<double>(x.rows());
    Mat c(x.cols(), y.cols());
    for (Index j = 0; j < y.cols(); ++j) {
        Vec w;
        if (weights) w = weights->col(j);
        c.col(j) = design
                       .solve(corr.col(j), y.col(j).squaredNorm() / n, lambda0,
                              weights ? &w : nullptr)
                       .beta;
    }
    return c;
}

/// Log-spaced grid from hi down to hi * ratio, `size` points.
inline std::vector<double> log_grid(double hi, double ratio, int size)
{
    std::vector<double> g(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) {
        const double t = size == 1 ? 0.0 : static_cast<double>(i) / (size - 1);
        g[static_cast<std::size_t>(i)] = hi * std::pow(ratio, t);
    }
    return g;
}

/// Row indices of each fold: a seeded shuffle cut into contiguous blocks.
inline std::vector<std::vector<Index>> make_folds(Index n, int k_folds, std::uint64_t seed)
{
    if (k_folds < 2) throw InvalidArgument("cross-validation needs at least 2 folds");
    if (n < k_folds) throw InvalidArgument("cross-validation: fewer rows than folds");
    RngStream rng(seed, 0x5eedf01dULL);
    const auto perm = rng.permutation(static_cast<std::size_t>(n));
    std::vector<std::vector<Index>> folds(static_cast<std::size_t>(k_folds));
    for (int f = 0; f < k_folds; ++f) {
        const Index lo = n * f / k_folds;
        const Index hi = n * (f + 1) / k_folds;
        if (hi <= lo) throw InvalidArgument("cross-validation: empty fold");
        for (Index i = lo; i < hi; ++i)
            folds[static_cast<std::size_t>(f)].push_back(
                static_cast<Index>(perm[static_cast<std::size_t>(i)]));
    }
    return folds;
}

inline std::vector<Index> complement(Index n, const std::vector<Index>& held_out)
{
    std::vector<char> out(static_cast<std::size_t>(n), 0);
    for (Index i : held_out) out[static_cast<std::size_t>(i)] = 1;
    std::vector<Index> keep;
    for (Index i = 0; i < n; ++i)
        if (!out[static_cast<std::size_t>(i)]) keep.push_back(i);
    return keep;
}

struct LambdaCv {
    double lambda = 0.0;
    std::vector<double> grid;
    std::vector<double> cv_error;
    std::size_t best_index = 0;
};

/// K-fold choice of the common lambda0 on a log grid from
/// lambda_max = ||X~^T Y||_inf / n down to 1e-3 * lambda_max.
/// Ties go to the larger lambda.
inline LambdaCv cross_validate_lambda0(const Mat& x, const Mat& y, int k_folds = 5,
                                       int grid_size = 30, std::uint64_t seed = 1,
                                       const Mat* weights = nullptr, const LassoControl& ctl = {})
{
    if (x.rows() != y.rows()) throw InvalidArgument("cross_validate_lambda0: row mismatch");
    if (grid_size < 1) throw InvalidArgument("cross_validate_lambda0: empty grid");
    const auto folds = make_folds(x.rows(), k_folds, seed);

    LassoDesign full(x);
    const Mat corr_full = full.correlations(y);
    double lmax = 0.0;
    for (Index j = 0; j < y.cols(); ++j) {
        Vec w;
        if (weights) w = weights->col(j);
        lmax = std::max(lmax, LassoDesign::lambda_max(corr_full.col(j), weights ? &w : nullptr));
    }

    LambdaCv out;
    if (lmax == 0.0) {
        out.grid = {0.0};
        out.cv_error = {y.squaredNorm() / static_cast<double>(k_folds)};
        return out;
    }
    out.grid = log_grid(lmax, 1e-3, grid_size);
    out.cv_error.assign(out.grid.size(), 0.0);

    for (const auto& held : folds) {
        const auto train = complement(x.rows(), held);
        const Mat xt = x(train, Eigen::all);
        const Mat yt = y(train, Eigen::all);
        const Mat xv = x(held, Eigen::all);
        const Mat yv = y(held, Eigen::all);
        const LassoDesign design(xt);
        const Mat corr = design.correlations(yt);
        const double nt = static_cast<double>(xt.rows());
        for (Index j = 0; j < y.cols(); ++j) {
            Vec w;
            if (weights) w = weights->col(j);
            Vec warm = Vec::Zero(x.cols());
            const double yy = yt.col(j).squaredNorm() / nt;
            for (std::size_t g = 0; g < out.grid.size(); ++g) {
                auto sol = design.solve(corr.col(j), yy, out.grid[g], weights ? &w : nullptr,
                                        &warm, ctl);
                warm = sol.beta_scaled;
                out.cv_error[g] += (yv.col(j) - xv * sol.beta).squaredNorm();
            }
        }
    }
    for (double& e : out.cv_error) e /= static_cast<double>(k_folds);

    out.best_index = 0;
    for (std::size_t g = 1; g < out.grid.size(); ++g)
        if (out.cv_error[g] < out.cv_error[out.best_index]) out.best_index = g;
    out.lambda = out.grid[out.best_index];
    return out;
}

/// Starting point for the SOFAR solver derived from the cross-validated Lasso.
struct InitState {
    Mat c_tilde;
    Mat u0;
    Mat v0;
    Vec d0;
    double lambda0 = 0.0;
    std::vector<Index> kept_rows;
    std::vector<Index> kept_cols;
    /// The Lasso estimate is identically zero; the final estimate is zero too.
    bool zero_fit = false;

    Mat a0() const { return u0 * d0.asDiagonal(); }
    Mat b0() const { return v0 * d0.asDiagonal(); }
};

struct InitOptions {
    int k_folds = 5;
    int grid_size = 30;
    std::uint64_t seed = 1;
    bool screening = false;
};

/// Build an InitState from a given coefficient estimate: rank-m truncated SVD
/// and the row/column supports.
inline InitState init_from_estimate(const Mat& c_tilde, Index m, double lambda0 = 0.0,
                                    bool screening = false)
{
    const Index p = c_tilde.rows();
    const Index q = c_tilde.cols();
    if (m < 1 || m > std::min(p, q)) throw InvalidArgument("initialize: rank m out of range");
    InitState st;
    st.c_tilde = c_tilde;
    st.lambda0 = lambda0;
    st.zero_fit = c_tilde.cwiseAbs().maxCoeff() == 0.0;
    const ThinSvd svd = thin_svd(c_tilde);
    st.u0 = svd.u.leftCols(m);
    st.v0 = svd.v.leftCols(m);
    st.d0 = svd.s.head(m);
    for (Index i = 0; i < p; ++i)
        if (!screening || c_tilde.row(i).cwiseAbs().maxCoeff() > 0.0) st.kept_rows.push_back(i);
    for (Index j = 0; j < q; ++j)
        if (!screening || c_tilde.col(j).cwiseAbs().maxCoeff() > 0.0) st.kept_cols.push_back(j);
    return st;
}

/// Cross-validated Lasso estimate C~ and its rank-m SVD.
inline InitState initialize(const Mat& x, const Mat& y, Index m, const InitOptions& opt = {})
{
    if (m < 1 || m > std::min(x.cols(), y.cols()))
        throw InvalidArgument("initialize: rank m out of range");
    require_finite_energy(x, "initialize: X");
    require_finite_energy(y, "initialize: Y");
    const LambdaCv cv = cross_validate_lambda0(x, y, opt.k_folds, opt.grid_size, opt.seed);
    return init_from_estimate(lasso_matrix(x, y, cv.lambda), m, cv.lambda, opt.screening);
}

}  // namespace sofar
