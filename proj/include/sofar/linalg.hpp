#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sofar/errors.hpp"

namespace sofar {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

/// Thin SVD m = u * diag(s) * v^T with k = min(rows, cols) columns in u and v.
struct ThinSvd {
    Mat u;
    Vec s;
    Mat v;
};

struct PolarFactor {
    Mat q;
    /// Smallest singular value of the input fell below 1e-12.
    bool rank_deficient = false;
};

inline bool all_finite(const Mat& m) { return m.allFinite(); }

/// max_ij |(Q^T Q - I)_ij|
inline double orth_deviation(const Mat& q)
{
    if (q.cols() == 0) return 0.0;
    Mat g = q.transpose() * q;
    g.diagonal().array() -= 1.0;
    return g.cwiseAbs().maxCoeff();
}

namespace detail {

// Flip u/v column pairs so the largest-magnitude entry of each v column is positive.
// First index wins ties.
inline void normalize_signs(Mat& u, Mat& v)
{
    for (Index k = 0; k < v.cols(); ++k) {
        Index arg = 0;
        double best = -1.0;
        for (Index i = 0; i < v.rows(); ++i) {
            const double a = std::abs(v(i, k));
            if (a > best) {
                best = a;
                arg = i;
            }
        }
        if (v.rows() > 0 && v(arg, k) < 0.0) {
            v.col(k) = -v.col(k);
            u.col(k) = -u.col(k);
        }
    }
}

// Make column k of q a unit vector orthogonal to columns [0, k) using the
// current content as the starting direction, falling back to unit vectors.
inline void complete_column(Mat& q, Index k)
{
    auto project_out = [&](Vec w) {
        for (int pass = 0; pass < 2; ++pass)
            for (Index j = 0; j < k; ++j) w -= q.col(j).dot(w) * q.col(j);
        return w;
    };
    Vec w = project_out(q.col(k));
    double nrm = w.norm();
    for (Index e = 0; nrm < 0.5 && e < q.rows(); ++e) {
        Vec cand = Vec::Zero(q.rows());
        cand(e) = 1.0;
        w = project_out(cand);
        nrm = w.norm();
    }
    q.col(k) = w / nrm;
}

// One-sided (Hestenes) Jacobi on a tall matrix a (rows >= cols).
inline ThinSvd jacobi_tall(const Mat& a)
{
    const Index n = a.cols();
    Mat w = a;
    Mat v = Mat::Identity(n, n);
    constexpr double tol = 1e-15;
    constexpr int max_sweeps = 80;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (Index i = 0; i + 1 < n; ++i) {
            for (Index j = i + 1; j < n; ++j) {
                const double alpha = w.col(i).squaredNorm();
                const double beta = w.col(j).squaredNorm();
                const double gamma = w.col(i).dot(w.col(j));
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (Index r = 0; r < w.rows(); ++r) {
                    const double wi = w(r, i);
                    const double wj = w(r, j);
                    w(r, i) = c * wi - s * wj;
                    w(r, j) = s * wi + c * wj;
                }
                for (Index r = 0; r < n; ++r) {
                    const double vi = v(r, i);
                    const double vj = v(r, j);
                    v(r, i) = c * vi - s * vj;
                    v(r, j) = s * vi + c * vj;
                }
            }
        }
        if (!rotated) break;
    }

    Vec sigma(n);
    for (Index k = 0; k < n; ++k) sigma(k) = w.col(k).norm();

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index x, Index y) { return sigma(x) > sigma(y); });

    ThinSvd out;
    out.u.resize(a.rows(), n);
    out.s.resize(n);
    out.v.resize(n, n);
    const double smax = n > 0 ? sigma(order[0]) : 0.0;
    for (Index k = 0; k < n; ++k) {
        const Index src = order[static_cast<std::size_t>(k)];
        out.s(k) = sigma(src);
        out.v.col(k) = v.col(src);
        if (sigma(src) > 0.0) {
            out.u.col(k) = w.col(src) / sigma(src);
        } else {
            out.u.col(k).setZero();
        }
        if (sigma(src) <= smax * 1e-14 || sigma(src) == 0.0) detail::complete_column(out.u, k);
    }
    return out;
}

}  // namespace detail

/// Thin SVD by one-sided Jacobi rotations applied on the narrower side.
/// Singular values are nonnegative and nonincreasing; equal values keep the
/// original column order. The largest-magnitude entry of every v column is
/// positive.
inline ThinSvd thin_svd(const Mat& m)
{
    if (m.rows() == 0 || m.cols() == 0) throw InvalidArgument("thin_svd: empty matrix");
    ThinSvd out;
    if (m.rows() >= m.cols()) {
        out = detail::jacobi_tall(m);
    } else {
        ThinSvd t = detail::jacobi_tall(m.transpose());
        out.u = std::move(t.v);
        out.s = std::move(t.s);
        out.v = std::move(t.u);
    }
    detail::normalize_signs(out.u, out.v);
    return out;
}

/// Orthonormal factor Q = U1 V1^T of the SVD U1 S V1^T = m; maximizes
/// tr(Q^T m) over matrices with orthonormal columns.
inline PolarFactor polar_orthogonal_factor(const Mat& m)
{
    if (m.rows() < m.cols())
        throw InvalidArgument("polar_orthogonal_factor: needs rows >= cols");
    PolarFactor out;
    if (m.cols() == 0) {
        out.q = Mat(m.rows(), 0);
        return out;
    }
    const ThinSvd svd = thin_svd(m);
    out.q = svd.u * svd.v.transpose();
    out.rank_deficient = svd.s(svd.s.size() - 1) < 1e-12;
    return out;
}

struct EigenEstimate {
    double value = 0.0;
    Vec vector;
    /// ||S x - value x||_2 at the returned unit vector.
    double residual = 0.0;
    int iterations = 0;
};

/// Power iteration from the normalized all-ones vector. Stops when the
/// relative change of the Rayleigh quotient is at most 1e-12.
inline EigenEstimate power_iteration(const Mat& s, int max_iter = 10000, double tol = 1e-12)
{
    if (s.rows() != s.cols() || s.rows() == 0)
        throw InvalidArgument("top_eigenvalue_sym: matrix must be square and nonempty");
    const double scale = 1.0 + s.cwiseAbs().maxCoeff();
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw InvalidArgument("top_eigenvalue_sym: matrix is not symmetric");

    EigenEstimate est;
    Vec x = Vec::Ones(s.rows()) / std::sqrt(static_cast<double>(s.rows()));
    double lambda = x.dot(s * x);
    for (est.iterations = 1; est.iterations <= max_iter; ++est.iterations) {
        Vec y = s * x;
        const double nrm = y.norm();
        if (nrm == 0.0) {
            lambda = 0.0;
            break;
        }
        x = y / nrm;
        const double next = x.dot(s * x);
        const double change = std::abs(next - lambda);
        lambda = next;
        if (change <= tol * std::max(std::abs(lambda), 1e-300)) break;
    }
    est.value = std::max(lambda, 0.0);
    est.vector = x;
    est.residual = (s * x - lambda * x).norm();
    return est;
}

/// Dominant eigenvalue of a symmetric positive semidefinite matrix.
inline double top_eigenvalue_sym(const Mat& s) { return power_iteration(s).value; }

/// Minimum-Frobenius-norm least squares solution X^+ Y; singular values below
/// 1e-10 * sigma_max count as zero.
inline Mat min_norm_least_squares(const Mat& x, const Mat& y)
{
    if (x.rows() != y.rows())
        throw InvalidArgument("min_norm_least_squares: row count mismatch");
    const ThinSvd svd = thin_svd(x);
    const double cut = 1e-10 * svd.s(0);
    Vec inv = Vec::Zero(svd.s.size());
    for (Index k = 0; k < svd.s.size(); ++k)
        if (svd.s(k) > cut && svd.s(k) > 0.0) inv(k) = 1.0 / svd.s(k);
    return svd.v * inv.asDiagonal() * (svd.u.transpose() * y);
}

/// Best rank-k approximation from a thin SVD (Eckart-Young).
inline Mat truncate(const ThinSvd& svd, Index k)
{
    k = std::min<Index>(k, svd.s.size());
    return svd.u.leftCols(k) * svd.s.head(k).asDiagonal() * svd.v.leftCols(k).transpose();
}

/// Entrywise L1 norm.
inline double l1_norm(const Mat& m) { return m.cwiseAbs().sum(); }

/// Operator (spectral) norm.
/// Rejects data whose squared norm overflows (or that holds NaN/Inf).
inline void require_finite_energy(const Mat& m, const char* what)
{
    if (!std::isfinite(m.squaredNorm()))
        throw NumericalError(std::string(what) + ": squared norm is not finite");
}

inline double spectral_norm(const Mat& m)
{
    if (m.size() == 0) return 0.0;
    return thin_svd(m).s(0);
}

}  // namespace sofar
