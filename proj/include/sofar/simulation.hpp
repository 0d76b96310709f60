#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sofar/baselines.hpp"
#include "sofar/errors.hpp"
#include "sofar/lasso.hpp"
#include "sofar/metrics.hpp"
#include "sofar/simgen.hpp"
#include "sofar/solver.hpp"
#include "sofar/tuning.hpp"

namespace sofar {

enum class Method { SofarL, SofarGL, Lasso, OLS, RRR, SRRR };

inline std::string to_string(Method m)
{
    switch (m) {
    case Method::SofarL: return "sofar-l";
    case Method::SofarGL: return "sofar-gl";
    case Method::Lasso: return "lasso";
    case Method::OLS: return "ols";
    case Method::RRR: return "rrr";
    case Method::SRRR: return "srrr";
    }
    return "?";
}

inline std::optional<Method> parse_method(const std::string& s)
{
    for (Method m : {Method::SofarL, Method::SofarGL, Method::Lasso, Method::OLS, Method::RRR,
                     Method::SRRR})
        if (to_string(m) == s) return m;
    return std::nullopt;
}

struct SimulationOptions {
    /// Working rank for the factor methods (clamped to min(p, q)).
    Index m = 5;
    Index n_val = 2000;
    int grid_size = 30;
    double epsilon = 1e-4;
    InitOptions init;
    /// Algorithm controls; the lambdas and penalties are set per method.
    SofarConfig controls;
    int threads = 1;
};

struct ReplicateRecord {
    int replicate = 0;
    Method method = Method::SofarL;
    MetricsRecord metrics;
    int monotonicity_violations = 0;
    double max_orth_deviation = 0.0;
    /// ||C_hat - C*||_F and ||C~ - C*||_F.
    double error_f = 0.0;
    double init_error_f = 0.0;
    double sigma2 = 0.0;
};

namespace detail {

inline SofarConfig factor_config(const SofarConfig& controls, PenaltyKind kind)
{
    SofarConfig c = controls;
    c.penalty_a = kind == PenaltyKind::EntrywiseL1 ? Penalty::l1() : Penalty::group();
    c.penalty_b = c.penalty_a;
    c.weights_d.reset();
    return c;
}

// Runs fn(i) for i in [0, count) on up to `threads` workers. Results must be
// written to slot i only, which keeps the output independent of scheduling.
template <class F>
void parallel_for(int count, int threads, F&& fn)
{
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Draw one replicate and run every requested method on it, tuning on an
/// independent validation sample.
inline std::vector<ReplicateRecord> run_replicate(const ModelSpec& spec, std::uint64_t seed,
                                                  int replicate, const std::vector<Method>& methods,
                                                  const SimulationOptions& opt)
{
    const auto stream = static_cast<std::uint64_t>(replicate);
    const SimData data = gen_model(spec, seed, stream);
    const SimData valid = gen_validation(spec, data.truth, opt.n_val, seed, stream);
    const Mat& x = data.x;
    const Mat& y = data.y;
    const Index m = std::min<Index>(opt.m, std::min(x.cols(), y.cols()));

    std::optional<InitState> init;
    auto get_init = [&]() -> const InitState& {
        if (!init) init = initialize(x, y, m, opt.init);
        return *init;
    };

    SearchOptions so;
    so.grid_size = opt.grid_size;
    so.epsilon = opt.epsilon;
    so.criterion = Criterion::Validation;
    const CriterionData cd{&valid.x, &valid.y};

    std::vector<ReplicateRecord> out;
    for (Method method : methods) {
        ReplicateRecord rec;
        rec.replicate = replicate;
        rec.method = method;
        rec.sigma2 = data.truth.sigma2;
        Mat c_hat;
        switch (method) {
        case Method::SofarL:
        case Method::SofarGL: {
            const InitState& in = get_init();
            const auto kind =
                method == Method::SofarL ? PenaltyKind::EntrywiseL1 : PenaltyKind::RowwiseGroup;
            const SofarConfig base = with_adaptive_weights(detail::factor_config(opt.controls, kind), in);
            const TuningResult tr = search(x, y, m, base, in, so, cd);
            const SofarFit& f = tr.best_fit;
            rec.metrics = evaluate(x, f.u, f.d, f.v, data.truth);
            rec.monotonicity_violations = tr.monotonicity_violations;
            rec.max_orth_deviation = tr.max_orth_deviation;
            c_hat = f.c;
            break;
        }
        case Method::SRRR: {
            const SrrrChoice sc =
                srrr_validation(x, y, valid.x, valid.y, get_init().c_tilde, m, so, opt.controls);
            rec.metrics = evaluate(x, sc.fit.u, sc.fit.d, sc.fit.v, data.truth);
            rec.monotonicity_violations = sc.monotonicity_violations;
            rec.max_orth_deviation = sc.max_orth_deviation;
            c_hat = sc.fit.c;
            break;
        }
        case Method::Lasso:
            c_hat = adaptive_lasso_validation(x, y, valid.x, valid.y, get_init().c_tilde,
                                              opt.grid_size, opt.epsilon);
            rec.metrics = evaluate_coefficients(x, c_hat, data.truth, numerical_rank(c_hat));
            break;
        case Method::OLS:
            c_hat = ols_fit(x, y);
            rec.metrics = evaluate_coefficients(x, c_hat, data.truth, numerical_rank(c_hat));
            break;
        case Method::RRR: {
            const RankChoice rc = rrr_validation(x, y, valid.x, valid.y, m);
            c_hat = rc.c;
            rec.metrics = evaluate_coefficients(x, c_hat, data.truth, rc.rank);
            break;
        }
        }
        rec.error_f = (c_hat - data.truth.c_star).norm();
        if (init) rec.init_error_f = (init->c_tilde - data.truth.c_star).norm();
        out.push_back(rec);
    }
    return out;
}

struct MethodSummary {
    Method method = Method::SofarL;
    double mse_est_mean = 0.0, mse_est_sd = 0.0;
    double mse_pred_mean = 0.0, mse_pred_sd = 0.0;
    double fpr_mean = 0.0, fnr_mean = 0.0;
    double rank_mean = 0.0;
    double rank_pct = 0.0;
    double orth_mean = 0.0;
    int monotonicity_violations = 0;
    double max_orth_deviation = 0.0;
    int replicates = 0;
};

struct SimulationReport {
    ModelSpec spec;
    std::uint64_t seed = 0;
    int reps = 0;
    std::vector<Method> methods;
    /// Replicate-major order: records[rep * methods.size() + k].
    std::vector<ReplicateRecord> records;
    std::vector<MethodSummary> summaries;
};

inline MethodSummary summarize(Method method, const std::vector<ReplicateRecord>& records)
{
    MethodSummary s;
    s.method = method;
    std::vector<double> est, pred, fpr, fnr, rank, orth;
    int correct = 0;
    for (const auto& r : records) {
        if (r.method != method) continue;
        est.push_back(r.metrics.mse_est);
        pred.push_back(r.metrics.mse_pred);
        fpr.push_back(r.metrics.fpr_pct);
        fnr.push_back(r.metrics.fnr_pct);
        rank.push_back(static_cast<double>(r.metrics.rank_hat));
        orth.push_back(r.metrics.orth);
        correct += r.metrics.rank_correct ? 1 : 0;
        s.monotonicity_violations += r.monotonicity_violations;
        s.max_orth_deviation = std::max(s.max_orth_deviation, r.max_orth_deviation);
    }
    s.replicates = static_cast<int>(est.size());
    if (est.empty()) return s;
    s.mse_est_mean = mean(est);
    s.mse_est_sd = stddev(est);
    s.mse_pred_mean = mean(pred);
    s.mse_pred_sd = stddev(pred);
    s.fpr_mean = mean(fpr);
    s.fnr_mean = mean(fnr);
    s.rank_mean = mean(rank);
    s.rank_pct = 100.0 * correct / static_cast<double>(est.size());
    s.orth_mean = mean(orth);
    return s;
}

/// Monte Carlo study: `reps` replicates of `spec`, replicate k drawn from
/// stream k of `seed`. Output is identical for any thread count.
inline SimulationReport simulate(const ModelSpec& spec, std::uint64_t seed, int reps,
                                 const std::vector<Method>& methods,
                                 const SimulationOptions& opt = {})
{
    if (reps < 1) throw InvalidArgument("simulate: reps must be positive");
    if (methods.empty()) throw InvalidArgument("simulate: no methods requested");
    spec.validate();
    std::vector<std::vector<ReplicateRecord>> per(static_cast<std::size_t>(reps));
    detail::parallel_for(reps, opt.threads, [&](int i) {
        per[static_cast<std::size_t>(i)] = run_replicate(spec, seed, i, methods, opt);
    });
    SimulationReport rep;
    rep.spec = spec;
    rep.seed = seed;
    rep.reps = reps;
    rep.methods = methods;
    for (auto& v : per)
        for (auto& r : v) rep.records.push_back(r);
    for (Method m : methods) rep.summaries.push_back(summarize(m, rep.records));
    return rep;
}

struct RateRow {
    Index n = 0;
    double median_error = 0.0;       // ||C_hat - C*||_F
    double median_init_error = 0.0;  // ||C~ - C*||_F
    /// (s log(pq) / n)^{1/2}
    double lasso_rate = 0.0;
    /// ((r + s_a + s_b) eta_n^2 log(pq) / n)^{1/2}
    double sofar_rate = 0.0;
    double error_ratio = 0.0;
    double init_ratio = 0.0;
};

/// Empirical error of the initial and SOFAR estimates for each sample size,
/// next to the theoretical scalings (medians over replicates).
inline std::vector<RateRow> rate_diagnostic(ModelSpec spec, const std::vector<Index>& n_values,
                                            int reps, std::uint64_t seed, Method method,
                                            const SimulationOptions& opt = {})
{
    if (method != Method::SofarL && method != Method::SofarGL)
        throw InvalidArgument("rate_diagnostic: method must be sofar-l or sofar-gl");
    std::vector<RateRow> rows;
    for (Index n : n_values) {
        spec.n = n;
        spec.validate();
        std::vector<double> err(static_cast<std::size_t>(reps)), init_err(err.size());
        std::vector<TheoryReport> th(err.size());
        detail::parallel_for(reps, opt.threads, [&](int i) {
            const auto rec = run_replicate(spec, seed, i, {method}, opt);
            err[static_cast<std::size_t>(i)] = rec.front().error_f;
            init_err[static_cast<std::size_t>(i)] = rec.front().init_error_f;
            th[static_cast<std::size_t>(i)] =
                theory_report(gen_model(spec, seed, static_cast<std::uint64_t>(i)).truth, n);
        });
        RateRow row;
        row.n = n;
        row.median_error = median(err);
        row.median_init_error = median(init_err);
        std::vector<double> lr, sr;
        for (const auto& t : th) {
            lr.push_back(t.r_n);
            sr.push_back(sofar_rate(t, spec.p, spec.q, n));
        }
        row.lasso_rate = median(lr);
        row.sofar_rate = median(sr);
        row.error_ratio = row.median_error / row.sofar_rate;
        row.init_ratio = row.median_init_error / row.lasso_rate;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace sofar
