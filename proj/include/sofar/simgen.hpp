#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "sofar/errors.hpp"
#include "sofar/linalg.hpp"
#include "sofar/random.hpp"

namespace sofar {

enum class DesignCovariance { AR1, CompoundSymmetry };

/// Simulation scenario. `model(id)` returns the published dimensions; the
/// fields may be shrunk or grown afterwards.
struct ModelSpec {
    int model_id = 1;
    Index n = 200;
    Index p = 100;
    Index q = 40;
    Index r = 3;
    /// Rows of C1 / C2 carrying signal (models 3 and 4).
    Index p0 = 0;
    Index q0 = 0;
    DesignCovariance design_covariance = DesignCovariance::AR1;
    double correlation = 0.5;
    double snr_target = 1.0;

    static ModelSpec model(int id)
    {
        ModelSpec s;
        s.model_id = id;
        switch (id) {
        case 1: s.p = 100; s.q = 40; break;
        case 2: s.p = 400; s.q = 120; break;
        case 3:
            s.p = 100; s.q = 10; s.p0 = 10; s.q0 = 10;
            s.design_covariance = DesignCovariance::CompoundSymmetry;
            break;
        case 4:
            s.p = 400; s.q = 200; s.p0 = 10; s.q0 = 10;
            s.design_covariance = DesignCovariance::CompoundSymmetry;
            break;
        case 5: s.p = 1000; s.q = 400; break;
        default: throw InvalidArgument("ModelSpec: model id must be 1..5");
        }
        return s;
    }

    bool entrywise_recipe() const { return model_id == 1 || model_id == 2 || model_id == 5; }

    void validate() const
    {
        if (model_id < 1 || model_id > 5) throw InvalidArgument("ModelSpec: model id must be 1..5");
        if (n < 2 || p < 1 || q < 1) throw InvalidArgument("ModelSpec: bad dimensions");
        if (!(snr_target > 0.0)) throw InvalidArgument("ModelSpec: snr must be positive");
        if (entrywise_recipe()) {
            if (r != 3) throw InvalidArgument("ModelSpec: models 1, 2, 5 have rank 3");
            if (p < 25 || q < 15)
                throw InvalidArgument("ModelSpec: models 1, 2, 5 need p >= 25 and q >= 15");
        } else {
            if (p0 < r || q0 < r || p0 > p || q0 > q)
                throw InvalidArgument("ModelSpec: need r <= p0 <= p and r <= q0 <= q");
        }
    }
};

/// True coefficient matrix and its SVD.
struct GroundTruth {
    Mat c_star;
    Mat u_star;
    Mat v_star;
    Vec d_star;
    /// Error variance scale chosen to hit the target SNR.
    double sigma2 = 1.0;
    Index r = 0;
};

struct SimData {
    Mat x;
    Mat y;
    GroundTruth truth;
};

/// n rows i.i.d. N(0, Sigma) with Sigma = (rho^|i-j|), via the AR(1)
/// recursion (the lower Cholesky factor applied row by row).
inline Mat draw_ar1_rows(Index n, Index dim, double rho, RngStream& rng)
{
    Mat out(n, dim);
    const double innov = std::sqrt(1.0 - rho * rho);
    for (Index i = 0; i < n; ++i) {
        double prev = rng.normal();
        out(i, 0) = prev;
        for (Index j = 1; j < dim; ++j) {
            prev = rho * prev + innov * rng.normal();
            out(i, j) = prev;
        }
    }
    return out;
}

/// Lower Cholesky factor of the compound-symmetry matrix (1 on the diagonal,
/// rho elsewhere), written out in closed form.
inline Mat compound_symmetry_cholesky(Index dim, double rho)
{
    Mat l = Mat::Zero(dim, dim);
    // Column j: diagonal c_j, below-diagonal entries b_j, where
    // c_j^2 = 1 - sum_{k<j} b_k^2 and b_j = (rho - sum_{k<j} b_k^2) / c_j.
    double acc = 0.0;
    for (Index j = 0; j < dim; ++j) {
        const double c = std::sqrt(1.0 - acc);
        const double b = (rho - acc) / c;
        l(j, j) = c;
        for (Index i = j + 1; i < dim; ++i) l(i, j) = b;
        acc += b * b;
    }
    return l;
}

inline Mat draw_cs_rows(Index n, const Mat& chol, RngStream& rng)
{
    const Index dim = chol.rows();
    Mat z(n, dim);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < dim; ++j) z(i, j) = rng.normal();
    return z * chol.transpose();
}

inline Mat draw_design(const ModelSpec& spec, Index n, RngStream& rng)
{
    if (spec.design_covariance == DesignCovariance::AR1)
        return draw_ar1_rows(n, spec.p, spec.correlation, rng);
    return draw_cs_rows(n, compound_symmetry_cholesky(spec.p, spec.correlation), rng);
}

namespace detail {

inline double draw_su(RngStream& rng) { return rng.uniform() < 0.5 ? -1.0 : 1.0; }

// Uniform on [-1, -0.5] U [0.5, 1].
inline double draw_sv(RngStream& rng)
{
    const double mag = rng.uniform(0.5, 1.0);
    return rng.uniform() < 0.5 ? -mag : mag;
}

inline GroundTruth entrywise_truth(const ModelSpec& spec, RngStream& rng)
{
    for (;;) {
        Mat u = Mat::Zero(spec.p, 3);
        Mat v = Mat::Zero(spec.q, 3);
        for (Index i = 0; i < 5; ++i) u(i, 0) = draw_su(rng);
        u(3, 1) = -u(3, 0);
        u(4, 1) = u(4, 0);
        for (Index i = 5; i < 8; ++i) u(i, 1) = draw_su(rng);
        for (Index i = 8; i < 10; ++i) u(i, 2) = draw_su(rng);
        for (Index k = 0; k < 3; ++k)
            for (Index i = 5 * k; i < 5 * k + 5; ++i) v(i, k) = draw_sv(rng);
        for (Index k = 0; k < 3; ++k) {
            u.col(k).normalize();
            v.col(k).normalize();
        }
        if (orth_deviation(u) > 1e-10 || orth_deviation(v) > 1e-10) continue;
        GroundTruth t;
        t.u_star = u;
        t.v_star = v;
        t.d_star = Vec(3);
        t.d_star << 20.0, 15.0, 10.0;
        t.r = 3;
        t.c_star = u * t.d_star.asDiagonal() * v.transpose();
        return t;
    }
}

inline GroundTruth rowwise_truth(const ModelSpec& spec, RngStream& rng)
{
    Mat c1 = Mat::Zero(spec.p, spec.r);
    Mat c2 = Mat::Zero(spec.q, spec.r);
    for (Index j = 0; j < spec.r; ++j)
        for (Index i = 0; i < spec.p0; ++i) c1(i, j) = rng.normal();
    for (Index j = 0; j < spec.r; ++j)
        for (Index i = 0; i < spec.q0; ++i) c2(i, j) = rng.normal();
    GroundTruth t;
    t.r = spec.r;
    t.c_star = c1 * c2.transpose();
    // SVD of the nonzero block keeps exact zeros outside the support.
    const ThinSvd svd = thin_svd(Mat(t.c_star.topLeftCorner(spec.p0, spec.q0)));
    t.u_star = Mat::Zero(spec.p, spec.r);
    t.v_star = Mat::Zero(spec.q, spec.r);
    t.u_star.topRows(spec.p0) = svd.u.leftCols(spec.r);
    t.v_star.topRows(spec.q0) = svd.v.leftCols(spec.r);
    t.d_star = svd.s.head(spec.r);
    return t;
}

}  // namespace detail

/// Error rows i.i.d. N(0, sigma^2 Sigma), Sigma = (0.5^|i-j|).
inline Mat draw_errors(Index n, Index q, double sigma, RngStream& rng)
{
    return sigma * draw_ar1_rows(n, q, 0.5, rng);
}

/// Draw (X, Y, truth) for one replicate. The error scale is solved so that
/// ||d_r X u_r v_r^T||_F / ||E||_F equals the SNR target exactly.
inline SimData gen_model(const ModelSpec& spec, std::uint64_t seed, std::uint64_t stream = 0)
{
    spec.validate();
    RngStream rng(seed, stream);
    SimData out;
    out.truth = spec.entrywise_recipe() ? detail::entrywise_truth(spec, rng)
                                        : detail::rowwise_truth(spec, rng);
    out.x = draw_design(spec, spec.n, rng);
    Mat e0 = draw_errors(spec.n, spec.q, 1.0, rng);
    const Index r = out.truth.r;
    const double signal =
        out.truth.d_star(r - 1) * (out.x * out.truth.u_star.col(r - 1)).norm() *
        out.truth.v_star.col(r - 1).norm();
    const double sigma = signal / (spec.snr_target * e0.norm());
    out.truth.sigma2 = sigma * sigma;
    out.y = out.x * out.truth.c_star + sigma * e0;
    return out;
}

/// Independent sample from the same truth and error scale (validation set).
inline SimData gen_validation(const ModelSpec& spec, const GroundTruth& truth, Index n_val,
                              std::uint64_t seed, std::uint64_t stream = 0)
{
    RngStream rng(seed ^ 0xa5a5f00dcafe1234ULL, stream);
    SimData out;
    out.truth = truth;
    out.x = draw_design(spec, n_val, rng);
    out.y = out.x * truth.c_star + draw_errors(n_val, spec.q, std::sqrt(truth.sigma2), rng);
    return out;
}

/// Signal-to-noise ratio of a generated sample (for checks).
inline double realized_snr(const SimData& s)
{
    const Index r = s.truth.r;
    const Mat layer = s.truth.d_star(r - 1) * (s.x * s.truth.u_star.col(r - 1)) *
                      s.truth.v_star.col(r - 1).transpose();
    return layer.norm() / (s.y - s.x * s.truth.c_star).norm();
}

}  // namespace sofar
