#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sofar/errors.hpp"
#include "sofar/linalg.hpp"
#include "sofar/simgen.hpp"

namespace sofar {

/// Estimated and true factors padded to a common number of layers, with the
/// estimated layers sign-aligned to the truth.
struct AlignedLayers {
    Mat u_hat;
    Mat v_hat;
    Mat u_star;
    Mat v_star;
    Index width = 0;
};

/// Pair layers by rank order of d (both sides are sorted descending) and flip
/// each estimated pair so that v_hat_k^T v*_k >= 0. Missing layers are zero.
inline AlignedLayers align_layers(const Mat& u_hat, const Vec& d_hat, const Mat& v_hat,
                                  const Mat& u_star, const Vec& d_star, const Mat& v_star)
{
    if (u_hat.rows() != u_star.rows() || v_hat.rows() != v_star.rows())
        throw InvalidArgument("align_layers: dimension mismatch");
    auto order = [](const Vec& d) {
        std::vector<Index> idx(static_cast<std::size_t>(d.size()));
        std::iota(idx.begin(), idx.end(), Index{0});
        std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return d(a) > d(b); });
        return idx;
    };
    const auto oh = order(d_hat);
    const auto os = order(d_star);
    AlignedLayers al;
    al.width = std::max(d_hat.size(), d_star.size());
    al.u_hat = Mat::Zero(u_hat.rows(), al.width);
    al.v_hat = Mat::Zero(v_hat.rows(), al.width);
    al.u_star = Mat::Zero(u_star.rows(), al.width);
    al.v_star = Mat::Zero(v_star.rows(), al.width);
    for (std::size_t k = 0; k < oh.size(); ++k) {
        al.u_hat.col(static_cast<Index>(k)) = u_hat.col(oh[k]);
        al.v_hat.col(static_cast<Index>(k)) = v_hat.col(oh[k]);
    }
    for (std::size_t k = 0; k < os.size(); ++k) {
        al.u_star.col(static_cast<Index>(k)) = u_star.col(os[k]);
        al.v_star.col(static_cast<Index>(k)) = v_star.col(os[k]);
    }
    for (Index k = 0; k < al.width; ++k) {
        if (al.v_hat.col(k).dot(al.v_star.col(k)) < 0.0) {
            al.u_hat.col(k) *= -1.0;
            al.v_hat.col(k) *= -1.0;
        }
    }
    return al;
}

struct MetricsRecord {
    double mse_est = 0.0;
    double mse_pred = 0.0;
    /// Percentages over the stacked (U, V) entries.
    double fpr_pct = 0.0;
    double fnr_pct = 0.0;
    Index rank_hat = 0;
    double orth = 0.0;
    bool rank_correct = false;
};

/// Entries counted as nonzero in support comparisons.
inline constexpr double kSupportThreshold = 1e-8;

/// Accuracy metrics of an estimated SVD against the truth on design X.
/// Orth = 100 (||U^T U||_1 + ||V^T V||_1 - 2 r_hat), entrywise l1.
inline MetricsRecord evaluate(const Mat& x, const Mat& u_hat, const Vec& d_hat, const Mat& v_hat,
                              const GroundTruth& truth)
{
    const Index p = truth.c_star.rows();
    const Index q = truth.c_star.cols();
    if (x.cols() != p || u_hat.rows() != p || v_hat.rows() != q)
        throw InvalidArgument("evaluate: dimension mismatch");
    if (u_hat.cols() != d_hat.size() || v_hat.cols() != d_hat.size())
        throw InvalidArgument("evaluate: factor widths differ from d");
    const Mat c_hat = u_hat * d_hat.asDiagonal() * v_hat.transpose();
    const Mat diff = c_hat - truth.c_star;
    MetricsRecord m;
    m.mse_est = diff.squaredNorm() / static_cast<double>(p * q);
    m.mse_pred = (x * diff).squaredNorm() / static_cast<double>(x.rows() * q);

    const AlignedLayers al = align_layers(u_hat, d_hat, v_hat, truth.u_star, truth.d_star,
                                          truth.v_star);
    Index fp = 0, tn = 0, fn = 0, tp = 0;
    auto tally = [&](const Mat& est, const Mat& star) {
        for (Index j = 0; j < est.cols(); ++j)
            for (Index i = 0; i < est.rows(); ++i) {
                const bool e = std::abs(est(i, j)) > kSupportThreshold;
                const bool s = star(i, j) != 0.0;
                if (s) (e ? tp : fn) += 1;
                else (e ? fp : tn) += 1;
            }
    };
    tally(al.u_hat, al.u_star);
    tally(al.v_hat, al.v_star);
    m.fpr_pct = fp + tn > 0 ? 100.0 * static_cast<double>(fp) / static_cast<double>(fp + tn) : 0.0;
    m.fnr_pct = fn + tp > 0 ? 100.0 * static_cast<double>(fn) / static_cast<double>(fn + tp) : 0.0;

    m.rank_hat = (d_hat.array() > 0.0).count();
    m.rank_correct = m.rank_hat == truth.r;
    const Mat utu = u_hat.transpose() * u_hat;
    const Mat vtv = v_hat.transpose() * v_hat;
    m.orth = 100.0 * (l1_norm(utu) + l1_norm(vtv) - 2.0 * static_cast<double>(m.rank_hat));
    return m;
}

/// Number of singular values above tol * sigma_1.
inline Index numerical_rank(const Mat& c, double tol = 1e-8)
{
    if (c.size() == 0 || c.cwiseAbs().maxCoeff() == 0.0) return 0;
    const Vec s = thin_svd(c).s;
    return static_cast<Index>((s.array() > tol * s(0)).count());
}

/// Metrics for a coefficient estimate without SVD factors (baselines). The
/// support rates compare the entries of C_hat with those of C*.
inline MetricsRecord evaluate_coefficients(const Mat& x, const Mat& c_hat, const GroundTruth& truth,
                                           Index rank)
{
    const Index p = truth.c_star.rows();
    const Index q = truth.c_star.cols();
    if (c_hat.rows() != p || c_hat.cols() != q || x.cols() != p)
        throw InvalidArgument("evaluate: shape mismatch");
    const Mat diff = c_hat - truth.c_star;
    MetricsRecord m;
    m.mse_est = diff.squaredNorm() / static_cast<double>(p * q);
    m.mse_pred = (x * diff).squaredNorm() / static_cast<double>(x.rows() * q);
    Index fp = 0, tn = 0, fn = 0, tp = 0;
    for (Index j = 0; j < q; ++j)
        for (Index i = 0; i < p; ++i) {
            const bool e = std::abs(c_hat(i, j)) > kSupportThreshold;
            const bool s = truth.c_star(i, j) != 0.0;
            if (s) (e ? tp : fn) += 1;
            else (e ? fp : tn) += 1;
        }
    m.fpr_pct = fp + tn > 0 ? 100.0 * static_cast<double>(fp) / static_cast<double>(fp + tn) : 0.0;
    m.fnr_pct = fn + tp > 0 ? 100.0 * static_cast<double>(fn) / static_cast<double>(fn + tp) : 0.0;
    m.rank_hat = rank;
    m.rank_correct = rank == truth.r;
    return m;
}

struct TheoryReport {
    Index s = 0;
    Index s_a = 0;
    Index s_b = 0;
    Index r = 0;
    double eta_n = 0.0;
    double r_n = 0.0;
    double tau = 0.0;
    double delta = 0.0;
};

/// Sparsity and rate constants of a truth. delta is the largest value with
/// d_{j-1}^2 - d_j^2 >= delta^{1/2} d_{j-1}^2 for all j (one when r = 1).
inline TheoryReport theory_report(const GroundTruth& truth, Index n)
{
    const Index p = truth.c_star.rows();
    const Index q = truth.c_star.cols();
    if (n < 1) throw InvalidArgument("theory_report: n must be positive");
    TheoryReport t;
    const Vec& d = truth.d_star;
    t.r = (d.array() != 0.0).count();
    const Mat a = truth.u_star * d.asDiagonal();
    const Mat b = truth.v_star * d.asDiagonal();
    t.s = (truth.c_star.array() != 0.0).count();
    t.s_a = (a.array() != 0.0).count();
    t.s_b = (b.array() != 0.0).count();
    if (t.r <= 1) {
        t.delta = 1.0;
    } else {
        double gap = std::numeric_limits<double>::infinity();
        for (Index j = 1; j < t.r; ++j)
            gap = std::min(gap, 1.0 - (d(j) * d(j)) / (d(j - 1) * d(j - 1)));
        t.delta = std::max(0.0, gap) * std::max(0.0, gap);
    }
    double ratio_sq = 0.0;
    for (Index j = 0; j < t.r; ++j) ratio_sq += (d(0) / d(j)) * (d(0) / d(j));
    t.eta_n = t.delta > 0.0 ? 1.0 + std::sqrt(ratio_sq) / std::sqrt(t.delta)
                            : std::numeric_limits<double>::infinity();
    t.r_n = std::sqrt(static_cast<double>(t.s) * std::log(static_cast<double>(p * q)) /
                      static_cast<double>(n));
    double tau = std::numeric_limits<double>::infinity();
    auto scan = [&](const auto& m) {
        for (Index j = 0; j < m.cols(); ++j)
            for (Index i = 0; i < m.rows(); ++i)
                if (m(i, j) != 0.0) tau = std::min(tau, std::abs(m(i, j)));
    };
    scan(Mat(d));
    scan(a);
    scan(b);
    t.tau = std::isfinite(tau) ? tau : 0.0;
    return t;
}

/// Rate scale of the SOFAR bound, ((r + s_a + s_b) eta_n^2 log(pq) / n)^{1/2}.
inline double sofar_rate(const TheoryReport& t, Index p, Index q, Index n)
{
    return std::sqrt(static_cast<double>(t.r + t.s_a + t.s_b) * t.eta_n * t.eta_n *
                     std::log(static_cast<double>(p * q)) / static_cast<double>(n));
}

namespace detail {

// Calls f on every k-subset of {0..n-1} in lexicographic order until f returns true.
template <class F>
bool for_each_subset(Index n, Index k, F&& f)
{
    if (k > n) return false;
    std::vector<Index> idx(static_cast<std::size_t>(k));
    std::iota(idx.begin(), idx.end(), Index{0});
    for (;;) {
        if (f(idx)) return true;
        Index i = k - 1;
        while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - k + i) --i;
        if (i < 0) return false;
        ++idx[static_cast<std::size_t>(i)];
        for (Index j = i + 1; j < k; ++j)
            idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
    }
}

}  // namespace detail

/// Smallest k such that some k columns of n^{-1/2} X have
/// sigma_min(X_S^T X_S / n) < c. Returns nullopt when every subset up to
/// k_max passes, or when the search would be unreasonably large
/// (p > 20 and k_max > 12).
inline std::optional<int> robust_spark_bruteforce(const Mat& x, double c, int k_max)
{
    const Index p = x.cols();
    if (!(c > 0.0)) throw InvalidArgument("robust_spark: c must be positive");
    if (k_max < 1) throw InvalidArgument("robust_spark: k_max must be positive");
    if (p > 20 && k_max > 12) throw InvalidArgument("robust_spark: search too large");
    const Mat g = x.transpose() * x / static_cast<double>(x.rows());
    const Index top = std::min<Index>(k_max, p);
    for (Index k = 1; k <= top; ++k) {
        const bool hit = detail::for_each_subset(p, k, [&](const std::vector<Index>& s) {
            const Mat sub = g(s, s);
            const Eigen::SelfAdjointEigenSolver<Mat> es(sub, Eigen::EigenvaluesOnly);
            return es.eigenvalues()(0) < c;
        });
        if (hit) return static_cast<int>(k);
    }
    return std::nullopt;
}

struct PerturbationCheck {
    double lhs = 0.0;  // ||D - D*||_F
    double rhs = 0.0;  // ||C - C*||_F
    /// ||C - C*||_2 <= d_1(C*).
    bool applicable = false;
    bool holds = false;
    /// (||A - A*||_F + ||B - B*||_F) / (eta_n ||C - C*||_F), layers aligned
    /// by rank order and sign; NaN when C = C*.
    double factor_ratio = 0.0;
};

/// Singular-value perturbation bound ||D - D*||_F <= ||C - C*||_F, with both
/// spectra sorted descending and zero-padded, plus the factor-level ratio.
inline PerturbationCheck perturbation_check(const Mat& c, const Mat& c_star, double slack = 1e-10)
{
    if (c.rows() != c_star.rows() || c.cols() != c_star.cols())
        throw InvalidArgument("perturbation_check: shape mismatch");
    const ThinSvd sv = thin_svd(c);
    const ThinSvd ss = thin_svd(c_star);
    PerturbationCheck pc;
    pc.lhs = (sv.s - ss.s).norm();
    pc.rhs = (c - c_star).norm();
    pc.applicable = spectral_norm(Mat(c - c_star)) <= ss.s(0);
    pc.holds = pc.lhs <= pc.rhs + slack * std::max(1.0, pc.rhs);

    Index r = 0;
    while (r < ss.s.size() && ss.s(r) > 1e-12 * std::max(1.0, ss.s(0))) ++r;
    if (pc.rhs == 0.0 || r == 0) {
        pc.factor_ratio = std::numeric_limits<double>::quiet_NaN();
        return pc;
    }
    GroundTruth t;
    t.c_star = c_star;
    t.u_star = ss.u.leftCols(r);
    t.v_star = ss.v.leftCols(r);
    t.d_star = ss.s.head(r);
    t.r = r;
    const AlignedLayers al = align_layers(sv.u, sv.s, sv.v, t.u_star, t.d_star, t.v_star);
    Vec dh = Vec::Zero(al.width), dstar = Vec::Zero(al.width);
    dh.head(std::min(al.width, sv.s.size())) = sv.s.head(std::min(al.width, sv.s.size()));
    dstar.head(r) = t.d_star;
    const double da = (al.u_hat * dh.asDiagonal() - al.u_star * dstar.asDiagonal()).norm();
    const double db = (al.v_hat * dh.asDiagonal() - al.v_star * dstar.asDiagonal()).norm();
    const double eta = theory_report(t, 1).eta_n;
    pc.factor_ratio = (da + db) / (eta * pc.rhs);
    return pc;
}

inline double median(std::vector<double> v)
{
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline double mean(const std::vector<double>& v)
{
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stddev(const std::vector<double>& v)
{
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace sofar
