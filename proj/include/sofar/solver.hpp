#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sofar/errors.hpp"
#include "sofar/lasso.hpp"
#include "sofar/linalg.hpp"
#include "sofar/penalty.hpp"
#include "sofar/random.hpp"

namespace sofar {

/// Tuning parameters and algorithm controls for one SOFAR fit.
struct SofarConfig {
    double lambda_d = 0.0;
    double lambda_a = 0.0;
    double lambda_b = 0.0;
    Penalty penalty_a = Penalty::l1();
    Penalty penalty_b = Penalty::l1();
    /// Adaptive weights on the singular values (nuclear-norm term).
    std::optional<Vec> weights_d;

    double mu0 = 1.0;
    double gamma = 1.05;
    double mu_max = 1e8;
    int inner_sweeps = 10;
    double inner_tol = 1e-4;
    double outer_tol_primal = 1e-4;
    double outer_tol_obj = 1e-6;
    int max_outer = 1000;
    int procrustes_max_iter = 50;
    double procrustes_tol = 1e-8;
    /// Extra starting frames for the U-step (0: warm start only).
    int procrustes_restarts = 0;

    void validate() const
    {
        if (lambda_d < 0.0 || lambda_a < 0.0 || lambda_b < 0.0)
            throw InvalidArgument("SofarConfig: lambdas must be nonnegative");
        if (!(gamma > 1.0)) throw InvalidArgument("SofarConfig: gamma must exceed 1");
        if (!(mu0 > 0.0) || !(mu_max > 0.0))
            throw InvalidArgument("SofarConfig: mu0 and mu_max must be positive");
        if (!(inner_tol > 0.0) || !(outer_tol_primal > 0.0) || !(outer_tol_obj > 0.0) ||
            !(procrustes_tol > 0.0))
            throw InvalidArgument("SofarConfig: tolerances must be positive");
        if (inner_sweeps < 1 || max_outer < 1 || procrustes_max_iter < 1 || procrustes_restarts < 0)
            throw InvalidArgument("SofarConfig: iteration limits must be positive");
    }
};

/// Data summaries every block update needs, computed once per fit.
struct SofarProblem {
    Mat gram;   // X^T X
    Mat cross;  // X^T Y
    double y_sq = 0.0;
    /// Upper bound on the largest eigenvalue of X^T X.
    double rho2 = 0.0;
    /// X^T X = rho2 * I, so the U-update needs a single polar step.
    bool scaled_identity = false;

    Index p() const { return gram.rows(); }
    Index q() const { return cross.cols(); }

    static SofarProblem from_data(const Mat& x, const Mat& y)
    {
        if (x.rows() != y.rows()) throw InvalidArgument("sofar: X and Y row counts differ");
        SofarProblem pr;
        pr.gram = x.transpose() * x;
        pr.cross = x.transpose() * y;
        pr.y_sq = y.squaredNorm();
        finish(pr);
        return pr;
    }

    /// Identity design of size p (X = I): gram = I, cross = Y.
    static SofarProblem identity_design(const Mat& y)
    {
        SofarProblem pr;
        pr.gram = Mat::Identity(y.rows(), y.rows());
        pr.cross = y;
        pr.y_sq = y.squaredNorm();
        finish(pr);
        return pr;
    }

private:
    static void finish(SofarProblem& pr)
    {
        if (!std::isfinite(pr.y_sq) || !pr.gram.allFinite() || !pr.cross.allFinite())
            throw NumericalError("sofar: data moments overflow");
        const EigenEstimate top = power_iteration(pr.gram);
        // Any value >= lambda_max keeps the majorization valid; pad by the
        // eigen-residual so an unconverged power iteration cannot undershoot.
        pr.rho2 = (top.value + top.residual) * (1.0 + 1e-12);
        Mat dev = pr.gram;
        dev.diagonal().array() -= pr.rho2;
        pr.scaled_identity = dev.cwiseAbs().maxCoeff() <= 1e-10 * std::max(pr.rho2, 1e-300);
    }
};

/// ALM iterate: primal blocks, multipliers and the penalty parameter.
struct SofarState {
    Mat u;
    Mat v;
    Vec d;
    Mat a;
    Mat b;
    Mat gamma_a;
    Mat gamma_b;
    double mu = 1.0;

    Index rank() const { return d.size(); }

    static SofarState from_init(const Mat& u0, const Vec& d0, const Mat& v0, double mu)
    {
        SofarState s;
        s.u = u0;
        s.v = v0;
        s.d = d0;
        s.a = u0 * d0.asDiagonal();
        s.b = v0 * d0.asDiagonal();
        s.gamma_a = Mat::Zero(u0.rows(), u0.cols());
        s.gamma_b = Mat::Zero(v0.rows(), v0.cols());
        s.mu = mu;
        return s;
    }
};

/// Penalty weights currently in force; columns follow the surviving layers.
struct LayerPenalties {
    double lambda_d = 0.0;
    double lambda_a = 0.0;
    double lambda_b = 0.0;
    Penalty penalty_a;
    Penalty penalty_b;
    Vec weights_d;

    static LayerPenalties from_config(const SofarConfig& cfg, Index m)
    {
        LayerPenalties lp{cfg.lambda_d, cfg.lambda_a, cfg.lambda_b,
                          cfg.penalty_a, cfg.penalty_b, Vec::Ones(m)};
        if (cfg.weights_d) {
            if (cfg.weights_d->size() != m)
                throw InvalidArgument("SofarConfig: weights_d length must equal rank m");
            lp.weights_d = *cfg.weights_d;
        }
        return lp;
    }

    void keep(const std::vector<Index>& cols)
    {
        penalty_a = penalty_a.select_columns(cols);
        penalty_b = penalty_b.select_columns(cols);
        weights_d = Vec(weights_d(cols));
    }
};

/// 1/2 ||Y - X U D V^T||_F^2 evaluated through X^T X and X^T Y.
inline double smooth_loss(const SofarState& s, const SofarProblem& pr)
{
    if (s.rank() == 0) return 0.5 * pr.y_sq;
    const Mat utgu = s.u.transpose() * pr.gram * s.u;
    const Mat dvvd = s.d.asDiagonal() * (s.v.transpose() * s.v) * s.d.asDiagonal();
    const Mat uxyv = s.u.transpose() * pr.cross * s.v;
    const double fit_sq = utgu.cwiseProduct(dvvd).sum();
    const double cross_term = uxyv.diagonal().dot(s.d);
    return 0.5 * (pr.y_sq - 2.0 * cross_term + fit_sq);
}

/// Penalized objective without the splitting terms.
inline double sofar_objective(const SofarState& s, const SofarProblem& pr,
                              const LayerPenalties& lp)
{
    double obj = smooth_loss(s, pr);
    if (s.rank() == 0) return obj;
    obj += lp.lambda_d * lp.weights_d.dot(s.d);
    const Mat ud = s.u * s.d.asDiagonal();
    const Mat vd = s.v * s.d.asDiagonal();
    if (lp.lambda_a > 0.0) obj += lp.lambda_a * value(lp.penalty_a, ud);
    if (lp.lambda_b > 0.0) obj += lp.lambda_b * value(lp.penalty_b, vd);
    return obj;
}

/// Augmented Lagrangian L_mu(U, V, D, A, B; Gamma).
inline double augmented_lagrangian(const SofarState& s, const SofarProblem& pr,
                                   const LayerPenalties& lp)
{
    double val = smooth_loss(s, pr);
    if (s.rank() == 0) return val;
    val += lp.lambda_d * lp.weights_d.dot(s.d);
    if (lp.lambda_a > 0.0) val += lp.lambda_a * value(lp.penalty_a, s.a);
    if (lp.lambda_b > 0.0) val += lp.lambda_b * value(lp.penalty_b, s.b);
    const Mat ra = s.u * s.d.asDiagonal() - s.a;
    const Mat rb = s.v * s.d.asDiagonal() - s.b;
    val += s.gamma_a.cwiseProduct(ra).sum() + s.gamma_b.cwiseProduct(rb).sum();
    val += 0.5 * s.mu * (ra.squaredNorm() + rb.squaredNorm());
    return val;
}

struct UUpdate {
    Mat u;
    int iterations = 0;
    bool degenerate = false;
    /// Inner iterates whose U-subproblem objective rose (should stay 0).
    int objective_increases = 0;
};

/// U-subproblem value 1/2 tr(D U^T X^T X U D) - tr(U^T base), base the fixed linear term.
inline double u_subproblem_value(const Mat& u, const Vec& d, const SofarProblem& pr,
                                 const Mat& base)
{
    const Mat ud = u * d.asDiagonal();
    return 0.5 * ud.cwiseProduct(pr.gram * ud).sum() - u.cwiseProduct(base).sum();
}

/// Weighted orthogonal Procrustes step for U by majorization with
/// Z^T Z = rho2 I - X^T X; each iterate is the polar factor of
/// C1 = (X^T Y V + mu A - Gamma_a + Z^T Z U_j D) D.
/// With procrustes_restarts = k the iteration is also run from the polar
/// factor of the linear term and from k - 1 fixed random frames; the lowest
/// subproblem value wins, the current U on ties.
inline UUpdate update_u(const SofarState& s, const SofarProblem& pr, const SofarConfig& cfg)
{
    UUpdate out;
    out.u = s.u;
    if (s.rank() == 0) return out;
    const Mat base = (pr.cross * s.v + s.mu * s.a - s.gamma_a) * s.d.asDiagonal();
    const Vec d2 = s.d.cwiseAbs2();
    if (d2.maxCoeff() == 0.0) return out;

    // G U is shared by the subproblem value and the next majorizer.
    auto value_at = [&](const Mat& u, const Mat& gu) {
        return 0.5 * (gu * d2.asDiagonal()).cwiseProduct(u).sum() - u.cwiseProduct(base).sum();
    };
    const int max_iter = pr.scaled_identity ? 1 : cfg.procrustes_max_iter;
    auto descend = [&](Mat u, UUpdate& acc) {
        Mat gu = pr.gram * u;
        double prev = value_at(u, gu);
        for (int it = 0; it < max_iter; ++it) {
            Mat c1 = base;
            if (!pr.scaled_identity) c1.noalias() += (pr.rho2 * u - gu) * d2.asDiagonal();
            if (c1.cwiseAbs().maxCoeff() == 0.0) break;
            PolarFactor pf = polar_orthogonal_factor(c1);
            acc.degenerate = acc.degenerate || pf.rank_deficient;
            ++acc.iterations;
            const double step = (pf.q - u).norm();
            u = std::move(pf.q);
            gu.noalias() = pr.gram * u;
            const double cur = value_at(u, gu);
            if (cur > prev + 1e-10 * std::max(1.0, std::abs(prev))) ++acc.objective_increases;
            prev = cur;
            if (step <= cfg.procrustes_tol) break;
        }
        return std::pair<Mat, double>(std::move(u), prev);
    };

    auto [best_u, best_val] = descend(out.u, out);
    if (!pr.scaled_identity) {
        const Index p = s.u.rows(), m = s.u.cols();
        for (int k = 0; k < cfg.procrustes_restarts; ++k) {
            Mat start;
            if (k == 0) {
                start = polar_orthogonal_factor(base).q;
            } else {
                RngStream rng(0x9e3779b97f4a7c15ULL, static_cast<std::uint64_t>(k));
                Mat g(p, m);
                for (Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
                start = polar_orthogonal_factor(g).q;
            }
            UUpdate scratch;
            auto [u, val] = descend(std::move(start), scratch);
            out.iterations += scratch.iterations;
            if (val < best_val) {
                best_val = val;
                best_u = std::move(u);
            }
        }
    }
    out.u = std::move(best_u);
    return out;
}

struct VUpdate {
    Mat v;
    bool degenerate = false;
};

/// Exact V-step: polar factor of C2 = (Y^T X U + mu B - Gamma_b) D.
inline VUpdate update_v(const SofarState& s, const SofarProblem& pr)
{
    VUpdate out;
    out.v = s.v;
    if (s.rank() == 0) return out;
    const Mat c2 = (pr.cross.transpose() * s.u + s.mu * s.b - s.gamma_b) * s.d.asDiagonal();
    if (c2.cwiseAbs().maxCoeff() == 0.0) return out;
    PolarFactor pf = polar_orthogonal_factor(c2);
    out.v = std::move(pf.q);
    out.degenerate = pf.rank_deficient;
    return out;
}

/// Closed-form nonnegative D-step (separable because U, V are orthonormal):
/// d_k = max(0, (h_k - lambda_d w_k) / (G_kk + 2 mu)).
inline Vec update_d(const SofarState& s, const SofarProblem& pr, const LayerPenalties& lp)
{
    if (!(s.mu > 0.0)) throw InvalidArgument("update_d: mu must be positive");
    const Index m = s.rank();
    Vec d(m);
    for (Index k = 0; k < m; ++k) {
        const Vec gu = pr.gram * s.u.col(k);
        const double gkk = s.u.col(k).dot(gu);
        const double h = s.u.col(k).dot(pr.cross * s.v.col(k)) +
                         s.u.col(k).dot(s.mu * s.a.col(k) - s.gamma_a.col(k)) +
                         s.v.col(k).dot(s.mu * s.b.col(k) - s.gamma_b.col(k));
        d(k) = std::max(0.0, (h - lp.lambda_d * lp.weights_d(k)) / (gkk + 2.0 * s.mu));
    }
    return d;
}

/// A-step: prox of lambda_a/mu * rho_a at U D + Gamma_a / mu.
inline Mat update_a(const SofarState& s, const LayerPenalties& lp)
{
    const Mat target = s.u * s.d.asDiagonal() + s.gamma_a / s.mu;
    if (lp.lambda_a == 0.0) return target;
    return prox(lp.penalty_a, target, lp.lambda_a / s.mu);
}

/// B-step: prox of lambda_b/mu * rho_b at V D + Gamma_b / mu.
inline Mat update_b(const SofarState& s, const LayerPenalties& lp)
{
    const Mat target = s.v * s.d.asDiagonal() + s.gamma_b / s.mu;
    if (lp.lambda_b == 0.0) return target;
    return prox(lp.penalty_b, target, lp.lambda_b / s.mu);
}

/// Multiplier ascent followed by the mu schedule mu <- min(gamma mu, mu_max).
inline void update_duals(SofarState& s, const SofarConfig& cfg)
{
    s.gamma_a += s.mu * (s.u * s.d.asDiagonal() - s.a);
    s.gamma_b += s.mu * (s.v * s.d.asDiagonal() - s.b);
    s.mu = std::min(s.mu * cfg.gamma, cfg.mu_max);
}

/// Drop the listed layers from every block.
inline void keep_layers(SofarState& s, const std::vector<Index>& cols)
{
    s.u = Mat(s.u(Eigen::all, cols));
    s.v = Mat(s.v(Eigen::all, cols));
    s.d = Vec(s.d(cols));
    s.a = Mat(s.a(Eigen::all, cols));
    s.b = Mat(s.b(Eigen::all, cols));
    s.gamma_a = Mat(s.gamma_a(Eigen::all, cols));
    s.gamma_b = Mat(s.gamma_b(Eigen::all, cols));
}

/// Estimated sparse SVD C = U diag(d) V^T plus convergence telemetry.
struct SofarFit {
    Mat u;
    Vec d;
    Mat v;
    Mat a;
    Mat b;
    Mat c;
    /// Augmented Lagrangian at the end of each outer iteration's BCD step.
    std::vector<double> objective_trace;
    double primal_residual_a = 0.0;
    double primal_residual_b = 0.0;
    int outer_iterations = 0;
    int total_sweeps = 0;
    int procrustes_steps = 0;
    bool converged = false;
    bool degenerate_polar = false;
    /// Block updates that raised L_mu within a fixed (mu, Gamma) epoch.
    int monotonicity_violations = 0;
    double max_violation = 0.0;
    /// ||U D V^T - C||_F between the last iterate and the reported estimate.
    double polish_shift = 0.0;
    /// Last iterate before support polishing; used for warm starts.
    SofarState final_state;

    Index rank() const { return d.size(); }
};

/// Sort layers by decreasing d and make the largest-|.| entry of each v column
/// positive. Leaves U D V^T unchanged.
inline void normalize_layers(SofarFit& f)
{
    const Index m = f.d.size();
    std::vector<Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index i, Index j) { return f.d(i) > f.d(j); });
    f.u = Mat(f.u(Eigen::all, order));
    f.v = Mat(f.v(Eigen::all, order));
    f.d = Vec(f.d(order));
    detail::normalize_signs(f.u, f.v);
    f.a = f.u * f.d.asDiagonal();
    f.b = f.v * f.d.asDiagonal();
}

inline SofarFit zero_fit(Index p, Index q)
{
    SofarFit f;
    f.u = Mat(p, 0);
    f.v = Mat(q, 0);
    f.d = Vec(0);
    f.a = Mat(p, 0);
    f.b = Mat(q, 0);
    f.c = Mat::Zero(p, q);
    f.converged = true;
    return f;
}

namespace detail {

// Orthonormal factor supported on the sparsity pattern of `pattern`.
inline Mat support_polish(const Mat& iterate, const Mat& pattern)
{
    Mat masked = iterate;
    for (Index j = 0; j < masked.cols(); ++j)
        for (Index i = 0; i < masked.rows(); ++i)
            if (pattern(i, j) == 0.0) masked(i, j) = 0.0;
    if (orth_deviation(masked) <= 1e-14) return masked;
    return polar_orthogonal_factor(masked).q;
}

inline std::vector<Index> positive_layers(const Vec& d)
{
    std::vector<Index> keep;
    for (Index k = 0; k < d.size(); ++k)
        if (d(k) > 0.0) keep.push_back(k);
    return keep;
}

}  // namespace detail

struct FitOptions {
    /// Start from this iterate instead of the InitState (path warm start).
    const SofarState* warm = nullptr;
};

/// Core ALM-BCD loop on a prepared problem.
inline SofarFit fit_problem(const SofarProblem& pr, const SofarConfig& cfg, SofarState st,
                            LayerPenalties lp)
{
    cfg.validate();
    const Index p = pr.p();
    const Index q = pr.q();
    SofarFit fit;

    auto prune = [&](const std::vector<Index>& keep) {
        keep_layers(st, keep);
        lp.keep(keep);
    };

    {
        auto keep = detail::positive_layers(st.d);
        if (static_cast<Index>(keep.size()) != st.rank()) prune(keep);
    }
    if (st.rank() == 0) return zero_fit(p, q);

    double epoch_ref = augmented_lagrangian(st, pr, lp);
    auto check = [&](const char*) {
        const double cur = augmented_lagrangian(st, pr, lp);
        if (!std::isfinite(cur))
            throw NumericalError("sofar: augmented Lagrangian became non-finite");
        const double excess = cur - epoch_ref;
        if (excess > 1e-10 * std::max(1.0, std::abs(epoch_ref))) {
            ++fit.monotonicity_violations;
            fit.max_violation = std::max(fit.max_violation, excess);
        }
        epoch_ref = cur;
        return cur;
    };

    double prev_outer = epoch_ref;
    for (int outer = 1; outer <= cfg.max_outer; ++outer) {
        fit.outer_iterations = outer;
        double sweep_start = epoch_ref;
        double last = epoch_ref;
        for (int sweep = 0; sweep < cfg.inner_sweeps; ++sweep) {
            ++fit.total_sweeps;
            UUpdate uu = update_u(st, pr, cfg);
            fit.procrustes_steps += uu.iterations;
            fit.degenerate_polar = fit.degenerate_polar || uu.degenerate;
            st.u = std::move(uu.u);
            check("U");

            VUpdate vu = update_v(st, pr);
            fit.degenerate_polar = fit.degenerate_polar || vu.degenerate;
            st.v = std::move(vu.v);
            check("V");

            st.d = update_d(st, pr, lp);
            check("D");
            auto keep = detail::positive_layers(st.d);
            if (static_cast<Index>(keep.size()) != st.rank()) {
                if (keep.empty()) {
                    SofarFit z = zero_fit(p, q);
                    z.outer_iterations = fit.outer_iterations;
                    z.total_sweeps = fit.total_sweeps;
                    z.monotonicity_violations = fit.monotonicity_violations;
                    z.max_violation = fit.max_violation;
                    z.objective_trace = fit.objective_trace;
                    return z;
                }
                // Removing layers changes the multiplier set: a new epoch starts.
                prune(keep);
                epoch_ref = augmented_lagrangian(st, pr, lp);
                sweep_start = epoch_ref;
            }

            st.a = update_a(st, lp);
            check("A");
            st.b = update_b(st, lp);
            last = check("B");

            const double rel = std::abs(sweep_start - last) / std::max(1.0, std::abs(sweep_start));
            sweep_start = last;
            if (rel <= cfg.inner_tol) break;
        }
        fit.objective_trace.push_back(last);

        update_duals(st, cfg);
        epoch_ref = augmented_lagrangian(st, pr, lp);

        fit.primal_residual_a = (st.u * st.d.asDiagonal() - st.a).norm();
        fit.primal_residual_b = (st.v * st.d.asDiagonal() - st.b).norm();
        const double scale = 1.0 + st.a.norm() + st.b.norm();
        const double rel_obj = std::abs(last - prev_outer) / std::max(1.0, std::abs(prev_outer));
        prev_outer = last;
        if (std::max(fit.primal_residual_a, fit.primal_residual_b) <=
                cfg.outer_tol_primal * scale &&
            rel_obj <= cfg.outer_tol_obj) {
            fit.converged = true;
            break;
        }
    }

    fit.final_state = st;

    // Report an exactly orthonormal SVD whose supports follow the sparse
    // splitting variables A and B.
    SofarFit out = fit;
    out.u = detail::support_polish(st.u, st.a);
    out.v = detail::support_polish(st.v, st.b);
    out.d = st.d;
    // A layer whose split copy vanished entirely carries no signal.
    std::vector<Index> keep;
    for (Index k = 0; k < out.d.size(); ++k)
        if (st.a.col(k).cwiseAbs().maxCoeff() > 0.0 && st.b.col(k).cwiseAbs().maxCoeff() > 0.0)
            keep.push_back(k);
    if (keep.empty()) {
        SofarFit z = zero_fit(p, q);
        z.objective_trace = fit.objective_trace;
        z.outer_iterations = fit.outer_iterations;
        z.total_sweeps = fit.total_sweeps;
        z.converged = fit.converged;
        z.monotonicity_violations = fit.monotonicity_violations;
        z.max_violation = fit.max_violation;
        z.final_state = fit.final_state;
        return z;
    }
    if (static_cast<Index>(keep.size()) != out.d.size()) {
        out.u = detail::support_polish(Mat(st.u(Eigen::all, keep)), Mat(st.a(Eigen::all, keep)));
        out.v = detail::support_polish(Mat(st.v(Eigen::all, keep)), Mat(st.b(Eigen::all, keep)));
        out.d = Vec(st.d(keep));
    }
    normalize_layers(out);
    out.c = out.u * out.d.asDiagonal() * out.v.transpose();
    out.polish_shift = (st.u * st.d.asDiagonal() * st.v.transpose() - out.c).norm();
    return out;
}

/// Embed a fit computed on kept rows/columns back into p x q.
inline SofarFit embed_fit(const SofarFit& f, const std::vector<Index>& rows,
                          const std::vector<Index>& cols, Index p, Index q)
{
    SofarFit out = f;
    out.u = Mat::Zero(p, f.u.cols());
    out.v = Mat::Zero(q, f.v.cols());
    out.u(rows, Eigen::all) = f.u;
    out.v(cols, Eigen::all) = f.v;
    out.a = out.u * out.d.asDiagonal();
    out.b = out.v * out.d.asDiagonal();
    out.c = out.u * out.d.asDiagonal() * out.v.transpose();
    normalize_layers(out);
    return out;
}

/// SOFAR estimate from an InitState (second step of the two-step procedure).
inline SofarFit fit(const Mat& x, const Mat& y, Index m, const SofarConfig& cfg,
                    const InitState& init, const FitOptions& opt = {})
{
    cfg.validate();
    const Index p = x.cols();
    const Index q = y.cols();
    if (x.rows() != y.rows()) throw InvalidArgument("fit: X and Y row counts differ");
    if (m < 1 || m > std::min(p, q)) throw InvalidArgument("fit: rank m out of range");
    if (init.u0.rows() != p || init.v0.rows() != q || init.u0.cols() != m ||
        init.v0.cols() != m || init.d0.size() != m)
        throw InvalidArgument("fit: InitState shape does not match (X, Y, m)");
    if (init.zero_fit) return zero_fit(p, q);

    const bool screened = static_cast<Index>(init.kept_rows.size()) != p ||
                          static_cast<Index>(init.kept_cols.size()) != q;
    if (!screened) {
        const SofarProblem pr = SofarProblem::from_data(x, y);
        SofarState st = opt.warm ? *opt.warm
                                 : SofarState::from_init(init.u0, init.d0, init.v0, cfg.mu0);
        LayerPenalties lp = LayerPenalties::from_config(cfg, m);
        if (opt.warm) {
            if (opt.warm->rank() != m) throw InvalidArgument("fit: warm start must have rank m");
            st.mu = cfg.mu0;
        }
        return fit_problem(pr, cfg, std::move(st), std::move(lp));
    }

    const auto& rows = init.kept_rows;
    const auto& cols = init.kept_cols;
    if (rows.empty() || cols.empty()) return zero_fit(p, q);
    const Mat xs = x(Eigen::all, rows);
    const Mat ys = y(Eigen::all, cols);
    const Index ms = std::min<Index>(m, std::min<Index>(rows.size(), cols.size()));
    std::vector<Index> layers(static_cast<std::size_t>(ms));
    std::iota(layers.begin(), layers.end(), Index{0});

    SofarConfig sub = cfg;
    if (cfg.penalty_a.weights) sub.penalty_a.weights = Mat((*cfg.penalty_a.weights)(rows, layers));
    if (cfg.penalty_b.weights) sub.penalty_b.weights = Mat((*cfg.penalty_b.weights)(cols, layers));
    if (cfg.weights_d) sub.weights_d = Vec((*cfg.weights_d)(layers));

    const Mat u0 = polar_orthogonal_factor(Mat(init.u0(rows, layers))).q;
    const Mat v0 = polar_orthogonal_factor(Mat(init.v0(cols, layers))).q;
    const SofarProblem pr = SofarProblem::from_data(xs, ys);
    SofarState st = SofarState::from_init(u0, Vec(init.d0(layers)), v0, cfg.mu0);
    SofarFit f = fit_problem(pr, sub, std::move(st), LayerPenalties::from_config(sub, ms));
    return embed_fit(f, rows, cols, p, q);
}

}  // namespace sofar
