#pragma once

// Independent reference computations used by the test suite. None of these
// call into the library's decompositions.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;

// Eigenvalues of a symmetric 3x3 matrix from its characteristic polynomial
// (trigonometric form of the cubic roots), sorted decreasing.
inline std::array<double, 3> sym3_eigenvalues(const Mat& a)
{
    const double c2 = -(a(0, 0) + a(1, 1) + a(2, 2));
    const double c1 = a(0, 0) * a(1, 1) + a(0, 0) * a(2, 2) + a(1, 1) * a(2, 2) -
                      a(0, 1) * a(1, 0) - a(0, 2) * a(2, 0) - a(1, 2) * a(2, 1);
    const double c0 = -a.determinant();
    // x^3 + c2 x^2 + c1 x + c0; substitute x = y - c2/3.
    const double p = c1 - c2 * c2 / 3.0;
    const double q = 2.0 * c2 * c2 * c2 / 27.0 - c2 * c1 / 3.0 + c0;
    std::array<double, 3> r{};
    if (std::abs(p) < 1e-300) {
        r.fill(std::cbrt(-q) - c2 / 3.0);
    } else {
        const double m = 2.0 * std::sqrt(-p / 3.0);
        const double arg = std::clamp(3.0 * q / (p * m), -1.0, 1.0);
        const double th = std::acos(arg) / 3.0;
        for (int k = 0; k < 3; ++k) r[k] = m * std::cos(th - 2.0 * kPi * k / 3.0) - c2 / 3.0;
    }
    // One Newton polish per root on the cubic itself.
    for (double& x : r) {
        const double f = ((x + c2) * x + c1) * x + c0;
        const double df = (3.0 * x + 2.0 * c2) * x + c1;
        if (df != 0.0) x -= f / df;
    }
    std::sort(r.begin(), r.end(), std::greater<>());
    return r;
}

// Eigenvalues of a symmetric 2x2 matrix, decreasing.
inline std::array<double, 2> sym2_eigenvalues(const Mat& a)
{
    const double m = 0.5 * (a(0, 0) + a(1, 1));
    const double d = std::hypot(0.5 * (a(0, 0) - a(1, 1)), a(0, 1));
    return {m + d, m - d};
}

// Smallest eigenvalue of a symmetric k x k matrix by bisection on the Sturm
// count of the LDL^T pivots (k <= 12 in the tests).
inline double sym_min_eigenvalue(const Mat& a)
{
    const Eigen::Index k = a.rows();
    auto below = [&](double x) {
        // Number of eigenvalues < x via Gaussian elimination pivots of A - xI.
        Mat b = a;
        b.diagonal().array() -= x;
        int neg = 0;
        for (Eigen::Index i = 0; i < k; ++i) {
            double piv = b(i, i);
            if (piv == 0.0) piv = -1e-300;
            if (piv < 0.0) ++neg;
            for (Eigen::Index r = i + 1; r < k; ++r) {
                const double f = b(r, i) / piv;
                for (Eigen::Index c = i + 1; c < k; ++c) b(r, c) -= f * b(i, c);
            }
        }
        return neg;
    };
    double bound = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) bound = std::max(bound, a.row(i).cwiseAbs().sum());
    double lo = -bound - 1.0, hi = bound + 1.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (below(mid) >= 1) hi = mid;
        else lo = mid;
    }
    return 0.5 * (lo + hi);
}

// Solution of a 3x3 linear system by Cramer's rule.
inline Vec cramer3(const Mat& a, const Vec& b)
{
    auto det = [](const Mat& m) {
        return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
               m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
               m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    };
    const double d = det(a);
    Vec x(3);
    for (int j = 0; j < 3; ++j) {
        Mat aj = a;
        aj.col(j) = b;
        x(j) = det(aj) / d;
    }
    return x;
}

// Givens rotation in the (i, j) plane of R^p.
inline Mat givens(Eigen::Index p, Eigen::Index i, Eigen::Index j, double th)
{
    Mat g = Mat::Identity(p, p);
    g(i, i) = std::cos(th);
    g(j, j) = std::cos(th);
    g(i, j) = -std::sin(th);
    g(j, i) = std::sin(th);
    return g;
}

// Minimum of f over orthonormal p x m frames Q = R(angles) E_m, where R is a
// product of Givens rotations over the planes that move the first m axes,
// optionally composed with column sign flips. Coarse grid then coordinate
// refinement of every angle.
inline double stiefel_grid_min(Eigen::Index p, Eigen::Index m, const std::function<double(const Mat&)>& f,
                               int coarse = 12, int refine_rounds = 60)
{
    std::vector<std::pair<Eigen::Index, Eigen::Index>> planes;
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i + 1; j < p; ++j) planes.emplace_back(i, j);
    const std::size_t na = planes.size();
    auto frame = [&](const std::vector<double>& ang, int signs) {
        Mat r = Mat::Identity(p, p);
        for (std::size_t k = 0; k < na; ++k) r = r * givens(p, planes[k].first, planes[k].second, ang[k]);
        Mat q = r.leftCols(m);
        for (Eigen::Index c = 0; c < m; ++c)
            if (signs >> c & 1) q.col(c) = -q.col(c);
        return q;
    };
    double best = std::numeric_limits<double>::infinity();
    for (int signs = 0; signs < (1 << m); ++signs) {
        std::vector<double> ang(na, 0.0);
        // Random-restart coordinate search on a shrinking grid.
        for (int start = 0; start < 4; ++start) {
            for (std::size_t k = 0; k < na; ++k) ang[k] = (start * 0.37 + 0.11 * k) * kPi;
            double cur = f(frame(ang, signs));
            double step = 2.0 * kPi / coarse;
            for (int round = 0; round < refine_rounds; ++round) {
                bool moved = false;
                for (std::size_t k = 0; k < na; ++k) {
                    for (int s = -coarse / 2; s <= coarse / 2; ++s) {
                        if (s == 0) continue;
                        std::vector<double> trial = ang;
                        trial[k] += s * step;
                        const double v = f(frame(trial, signs));
                        if (v < cur) {
                            cur = v;
                            ang = trial;
                            moved = true;
                        }
                    }
                }
                if (!moved) step *= 0.5;
                if (step < 1e-7) break;
            }
            best = std::min(best, cur);
        }
    }
    return best;
}

// Minimizes 0.5 d^T H d - b^T d + lam * w^T d over d >= 0 by projected
// gradient with step 1/L.
inline Vec projected_gradient_qp(const Mat& h, const Vec& b, const Vec& lin, int iters = 200000,
                                 double tol = 1e-15)
{
    const double lip = Eigen::SelfAdjointEigenSolver<Mat>(h).eigenvalues().maxCoeff();
    Vec d = Vec::Zero(b.size());
    for (int it = 0; it < iters; ++it) {
        const Vec g = h * d - b + lin;
        const Vec next = (d - g / lip).cwiseMax(0.0);
        const double change = (next - d).cwiseAbs().maxCoeff();
        d = next;
        if (change < tol) break;
    }
    return d;
}

// Minimizer over the grid {-5, -5 + h, ..., 5}^2 (h = 1e-3) of
// 0.5 (yy - 2 c^T b + b^T G b) + lam ||b||_1. The objective is convex, so a
// pass at step 1e-2 locates the basin and the fine grid is scanned around it.
inline Vec lasso2_grid(const Mat& g, const Vec& c, double yy, double lam)
{
    auto f = [&](double b0, double b1) {
        return 0.5 * (yy - 2 * (c(0) * b0 + c(1) * b1) + g(0, 0) * b0 * b0 + 2 * g(0, 1) * b0 * b1 +
                      g(1, 1) * b1 * b1) +
               lam * (std::abs(b0) + std::abs(b1));
    };
    double best = 1e300;
    int ci = 0, cj = 0;
    for (int i = -500; i <= 500; ++i)
        for (int j = -500; j <= 500; ++j) {
            const double v = f(i * 1e-2, j * 1e-2);
            if (v < best) best = v, ci = i, cj = j;
        }
    best = 1e300;
    Vec arg(2);
    for (int i = std::max(-5000, 10 * ci - 200); i <= std::min(5000, 10 * ci + 200); ++i)
        for (int j = std::max(-5000, 10 * cj - 200); j <= std::min(5000, 10 * cj + 200); ++j) {
            const double v = f(i * 1e-3, j * 1e-3);
            if (v < best) best = v, arg << i * 1e-3, j * 1e-3;
        }
    return arg;
}

}  // namespace oracle
