#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sofar/baselines.hpp"
#include "sofar/errors.hpp"
#include "sofar/io.hpp"
#include "sofar/lasso.hpp"
#include "sofar/metrics.hpp"
#include "sofar/simgen.hpp"
#include "sofar/simulation.hpp"
#include "sofar/solver.hpp"
#include "sofar/tuning.hpp"

namespace sofar::cli {

using json = nlohmann::ordered_json;

enum ExitCode { kOk = 0, kUsage = 2, kNumerical = 3 };

inline json to_json(const Mat& m)
{
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json to_json(const Vec& v)
{
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline json to_json(const MetricsRecord& m)
{
    return {{"mse_est", m.mse_est}, {"mse_pred", m.mse_pred}, {"fpr_pct", m.fpr_pct},
            {"fnr_pct", m.fnr_pct}, {"rank_hat", m.rank_hat}, {"rank_correct", m.rank_correct},
            {"orth", m.orth}};
}

inline json to_json(const SofarConfig& c)
{
    json j = {{"lambda_d", c.lambda_d},
              {"lambda_a", c.lambda_a},
              {"lambda_b", c.lambda_b},
              {"penalty_a", to_string(c.penalty_a.kind)},
              {"penalty_b", to_string(c.penalty_b.kind)},
              {"adaptive", c.penalty_a.weights.has_value() || c.weights_d.has_value()},
              {"mu0", c.mu0},
              {"gamma", c.gamma},
              {"mu_max", c.mu_max},
              {"inner_sweeps", c.inner_sweeps},
              {"inner_tol", c.inner_tol},
              {"outer_tol_primal", c.outer_tol_primal},
              {"outer_tol_obj", c.outer_tol_obj},
              {"max_outer", c.max_outer},
              {"procrustes_max_iter", c.procrustes_max_iter},
              {"procrustes_tol", c.procrustes_tol},
              {"procrustes_restarts", c.procrustes_restarts}};
    return j;
}

/// Where fitted matrices go: inline JSON arrays, or CSV files under a
/// directory referenced by path.
struct MatrixSink {
    std::string dir;

    json put(const std::string& name, const Mat& m) const
    {
        if (dir.empty()) return to_json(m);
        std::filesystem::create_directories(dir);
        const std::string path = (std::filesystem::path(dir) / (name + ".csv")).string();
        write_matrix_csv(path, m);
        return {{"csv", path}, {"rows", m.rows()}, {"cols", m.cols()}};
    }
};

inline json to_json(const SofarFit& f, const MatrixSink& sink, const std::string& prefix = "")
{
    return {{"rank", f.rank()},
            {"d", to_json(f.d)},
            {"u", sink.put(prefix + "u", f.u)},
            {"v", sink.put(prefix + "v", f.v)},
            {"c", sink.put(prefix + "c", f.c)},
            {"converged", f.converged},
            {"outer_iterations", f.outer_iterations},
            {"total_sweeps", f.total_sweeps},
            {"primal_residual_a", f.primal_residual_a},
            {"primal_residual_b", f.primal_residual_b},
            {"monotonicity_violations", f.monotonicity_violations},
            {"degenerate_polar", f.degenerate_polar},
            {"orth_deviation", std::max(orth_deviation(f.u), orth_deviation(f.v))},
            {"objective_trace", f.objective_trace}};
}

inline std::string utc_timestamp()
{
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline int threads_from_env(int flag_value)
{
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("SOFAR_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

inline PenaltyKind parse_penalty(const std::string& s)
{
    if (s == "l1") return PenaltyKind::EntrywiseL1;
    if (s == "group") return PenaltyKind::RowwiseGroup;
    throw InvalidArgument("penalty must be l1 or group, got '" + s + "'");
}

inline Criterion parse_criterion(const std::string& s)
{
    if (s == "gic") return Criterion::GIC;
    if (s == "cv") return Criterion::KFoldCV;
    if (s == "valid") return Criterion::Validation;
    throw InvalidArgument("criterion must be gic, cv or valid, got '" + s + "'");
}

/// Options shared by the subcommands that build a SofarConfig.
struct SolverFlags {
    std::string penalty_a = "l1";
    std::string penalty_b = "l1";
    bool adaptive = false;
    SofarConfig cfg;

    void add_penalties(CLI::App* app)
    {
        app->add_option("--penalty-a", penalty_a, "l1 or group")->check(CLI::IsMember({"l1", "group"}));
        app->add_option("--penalty-b", penalty_b, "l1 or group")->check(CLI::IsMember({"l1", "group"}));
        app->add_flag("--adaptive", adaptive, "weights from the initial estimate");
    }
    void add_lambdas(CLI::App* app)
    {
        app->add_option("--lambda-d", cfg.lambda_d)->check(CLI::NonNegativeNumber);
        app->add_option("--lambda-a", cfg.lambda_a)->check(CLI::NonNegativeNumber);
        app->add_option("--lambda-b", cfg.lambda_b)->check(CLI::NonNegativeNumber);
    }
    void add_controls(CLI::App* app)
    {
        app->add_option("--mu0", cfg.mu0);
        app->add_option("--gamma", cfg.gamma);
        app->add_option("--mu-max", cfg.mu_max);
        app->add_option("--inner-sweeps", cfg.inner_sweeps);
        app->add_option("--inner-tol", cfg.inner_tol);
        app->add_option("--outer-tol-primal", cfg.outer_tol_primal);
        app->add_option("--outer-tol-obj", cfg.outer_tol_obj);
        app->add_option("--max-outer", cfg.max_outer);
        app->add_option("--procrustes-max-iter", cfg.procrustes_max_iter);
        app->add_option("--procrustes-tol", cfg.procrustes_tol);
        app->add_option("--procrustes-restarts", cfg.procrustes_restarts);
    }
    SofarConfig build(const InitState* init) const
    {
        SofarConfig c = cfg;
        c.penalty_a = Penalty{parse_penalty(penalty_a), std::nullopt};
        c.penalty_b = Penalty{parse_penalty(penalty_b), std::nullopt};
        if (adaptive && init) c = with_adaptive_weights(c, *init);
        return c;
    }
};

namespace detail {

inline void emit(const json& j, const std::string& out_path, std::ostream& out)
{
    const std::string text = j.dump(2) + "\n";
    if (out_path.empty()) {
        out << text;
        return;
    }
    std::ofstream f(out_path);
    if (!f) throw InvalidArgument("cannot write " + out_path);
    f << text;
}

inline json envelope(const std::string& command, std::uint64_t seed, int threads)
{
    return {{"command", command},
            {"seed", seed},
            {"runtime", {{"timestamp", utc_timestamp()}, {"threads", threads}}}};
}

inline std::vector<Index> parse_index_list(const std::string& s)
{
    std::vector<Index> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            out.push_back(std::stoll(tok));
        } catch (const std::exception&) {
            throw InvalidArgument("not an integer list: '" + s + "'");
        }
    }
    if (out.empty()) throw InvalidArgument("empty integer list");
    return out;
}

inline void check_rows(const Mat& x, const Mat& y)
{
    if (x.rows() != y.rows())
        throw InvalidArgument("X has " + std::to_string(x.rows()) + " rows but Y has " +
                              std::to_string(y.rows()));
}

inline json summary_json(const MethodSummary& s)
{
    return {{"method", to_string(s.method)},
            {"replicates", s.replicates},
            {"mse_est", {{"mean", s.mse_est_mean}, {"sd", s.mse_est_sd}}},
            {"mse_pred", {{"mean", s.mse_pred_mean}, {"sd", s.mse_pred_sd}}},
            {"fpr_pct", s.fpr_mean},
            {"fnr_pct", s.fnr_mean},
            {"rank", s.rank_mean},
            {"rank_pct", s.rank_pct},
            {"orth", s.orth_mean},
            {"monotonicity_violations", s.monotonicity_violations},
            {"max_orth_deviation", s.max_orth_deviation}};
}

}  // namespace detail

/// Entry point of the `sofar` tool. Returns 0 on success, 2 on usage or
/// input errors, 3 on numerical failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr)
{
    CLI::App app{"Sparse orthogonal factor regression"};
    app.require_subcommand(1);
    std::string out_path;
    std::string factors_dir;
    int threads_flag = 0;
    std::uint64_t seed = 1;
    app.add_option("--out", out_path, "write JSON here instead of stdout");
    app.add_option("--factors-dir", factors_dir, "write matrices as CSV files here");
    app.add_option("--threads", threads_flag, "worker threads (default: SOFAR_THREADS or 1)");
    app.add_option("--seed", seed);
    app.fallthrough();

    std::string x_path, y_path, xv_path, yv_path;
    Index rank = 0;
    bool header = false;
    SolverFlags flags;
    InitOptions init_opt;

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit SOFAR at a fixed lambda triple");
    fit_cmd->add_option("--x", x_path)->required()->check(CLI::ExistingFile);
    fit_cmd->add_option("--y", y_path)->required()->check(CLI::ExistingFile);
    fit_cmd->add_option("--rank", rank)->required()->check(CLI::PositiveNumber);
    flags.add_penalties(fit_cmd);
    flags.add_lambdas(fit_cmd);
    flags.add_controls(fit_cmd);
    fit_cmd->add_option("--cv-folds", init_opt.k_folds);
    fit_cmd->add_option("--cv-grid", init_opt.grid_size);
    fit_cmd->add_flag("--screening", init_opt.screening);

    // tune
    std::string criterion = "gic";
    SearchOptions search_opt;
    int folds = 5;
    auto* tune_cmd = app.add_subcommand("tune", "search the lambda ray and select a fit");
    tune_cmd->add_option("--x", x_path)->required()->check(CLI::ExistingFile);
    tune_cmd->add_option("--y", y_path)->required()->check(CLI::ExistingFile);
    tune_cmd->add_option("--rank", rank)->required()->check(CLI::PositiveNumber);
    tune_cmd->add_option("--criterion", criterion)->check(CLI::IsMember({"gic", "cv", "valid"}));
    tune_cmd->add_option("--x-valid", xv_path)->check(CLI::ExistingFile);
    tune_cmd->add_option("--y-valid", yv_path)->check(CLI::ExistingFile);
    tune_cmd->add_option("--grid", search_opt.grid_size);
    tune_cmd->add_option("--epsilon", search_opt.epsilon);
    tune_cmd->add_option("--folds", folds);
    tune_cmd->add_option("--ratio-d", search_opt.ratios[0]);
    tune_cmd->add_option("--ratio-a", search_opt.ratios[1]);
    tune_cmd->add_option("--ratio-b", search_opt.ratios[2]);
    flags.add_penalties(tune_cmd);
    flags.add_controls(tune_cmd);
    tune_cmd->add_flag("--screening", init_opt.screening);

    // simulate
    int model_id = 1, reps = 1;
    std::vector<std::string> method_names{"sofar-l"};
    SimulationOptions sim_opt;
    std::optional<Index> n_override, p_override, q_override;
    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo study on a simulation model");
    sim_cmd->add_option("--model", model_id)->check(CLI::Range(1, 5));
    sim_cmd->add_option("--reps", reps)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--method", method_names)->delimiter(',')
        ->check(CLI::IsMember({"sofar-l", "sofar-gl", "lasso", "ols", "rrr", "srrr"}));
    sim_cmd->add_option("--rank", sim_opt.m);
    sim_cmd->add_option("--n-valid", sim_opt.n_val);
    sim_cmd->add_option("--grid", sim_opt.grid_size);
    sim_cmd->add_option("--epsilon", sim_opt.epsilon);
    sim_cmd->add_option("--n", n_override);
    sim_cmd->add_option("--p", p_override);
    sim_cmd->add_option("--q", q_override);
    bool per_replicate = true;
    sim_cmd->add_flag("--per-replicate,!--no-per-replicate", per_replicate);
    flags.add_controls(sim_cmd);

    // applications
    std::string variant = "regression";
    auto* pca_cmd = app.add_subcommand("pca", "sparse principal components");
    pca_cmd->add_option("--x", x_path)->required()->check(CLI::ExistingFile);
    pca_cmd->add_option("--rank", rank)->required()->check(CLI::PositiveNumber);
    pca_cmd->add_option("--variant", variant)->check(CLI::IsMember({"regression", "approx"}));
    auto* bic_cmd = app.add_subcommand("bicluster", "sparse SVD biclustering");
    bic_cmd->add_option("--x", x_path)->required()->check(CLI::ExistingFile);
    bic_cmd->add_option("--rank", rank)->required()->check(CLI::PositiveNumber);
    auto* fac_cmd = app.add_subcommand("factor", "sparse factor analysis");
    fac_cmd->add_option("--x", x_path)->required()->check(CLI::ExistingFile);
    fac_cmd->add_option("--rank", rank)->required()->check(CLI::PositiveNumber);
    std::string yaug_path;
    auto* var_cmd = app.add_subcommand("var", "two-step sparse factor-augmented VAR");
    var_cmd->add_option("--x", x_path)->required()->check(CLI::ExistingFile);
    var_cmd->add_option("--y-aug", yaug_path)->required()->check(CLI::ExistingFile);
    var_cmd->add_option("--rank", rank)->required()->check(CLI::PositiveNumber);
    for (auto* c : {pca_cmd, bic_cmd, fac_cmd, var_cmd}) {
        flags.add_penalties(c);
        flags.add_lambdas(c);
        flags.add_controls(c);
        c->add_flag("--header", header, "first CSV line is a header");
    }
    for (auto* c : {fit_cmd, tune_cmd}) c->add_flag("--header", header, "first CSV line is a header");

    // diagnostics
    auto* diag_cmd = app.add_subcommand("diag", "theory diagnostics");
    diag_cmd->require_subcommand(1);
    double spark_c = 0.5;
    int k_max = 4;
    auto* spark_cmd = diag_cmd->add_subcommand("spark", "robust spark by subset enumeration");
    spark_cmd->add_option("--x", x_path)->required()->check(CLI::ExistingFile);
    spark_cmd->add_option("--c", spark_c)->check(CLI::PositiveNumber);
    spark_cmd->add_option("--k-max", k_max)->check(CLI::PositiveNumber);
    std::string c_path, cstar_path;
    int pairs = 100;
    Index pert_p = 8, pert_q = 6, pert_r = 2;
    double pert_scale = 0.1;
    auto* pert_cmd = diag_cmd->add_subcommand("perturb", "singular value perturbation bound");
    pert_cmd->add_option("--c", c_path)->check(CLI::ExistingFile);
    pert_cmd->add_option("--c-star", cstar_path)->check(CLI::ExistingFile);
    pert_cmd->add_option("--pairs", pairs)->check(CLI::PositiveNumber);
    pert_cmd->add_option("--p", pert_p);
    pert_cmd->add_option("--q", pert_q);
    pert_cmd->add_option("--r", pert_r);
    pert_cmd->add_option("--scale", pert_scale);
    std::string n_values = "100,200,400";
    std::string rate_method = "sofar-l";
    auto* rate_cmd = diag_cmd->add_subcommand("rate", "empirical error rates against sample size");
    rate_cmd->add_option("--model", model_id)->check(CLI::Range(1, 5));
    rate_cmd->add_option("--n-values", n_values);
    rate_cmd->add_option("--reps", reps)->check(CLI::PositiveNumber);
    rate_cmd->add_option("--method", rate_method)->check(CLI::IsMember({"sofar-l", "sofar-gl"}));
    rate_cmd->add_option("--p", p_override);
    rate_cmd->add_option("--q", q_override);
    rate_cmd->add_option("--rank", sim_opt.m);
    rate_cmd->add_option("--epsilon", sim_opt.epsilon);
    rate_cmd->add_option("--grid", sim_opt.grid_size);

    try {
        std::vector<std::string> args;
        for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    const int threads = threads_from_env(threads_flag);
    const MatrixSink sink{factors_dir};

    try {
        if (fit_cmd->parsed()) {
            const Mat x = read_matrix_csv(x_path, header);
            const Mat y = read_matrix_csv(y_path, header);
            detail::check_rows(x, y);
            init_opt.seed = seed;
            const InitState init = initialize(x, y, rank, init_opt);
            const SofarConfig cfg = flags.build(&init);
            const SofarFit f = fit(x, y, rank, cfg, init);
            json j = detail::envelope("fit", seed, threads);
            j["config"] = to_json(cfg);
            j["config"]["rank"] = rank;
            j["init"] = {{"lambda0", init.lambda0}, {"zero_fit", init.zero_fit}};
            j["result"] = to_json(f, sink);
            detail::emit(j, out_path, out);
        } else if (tune_cmd->parsed()) {
            const Mat x = read_matrix_csv(x_path, header);
            const Mat y = read_matrix_csv(y_path, header);
            detail::check_rows(x, y);
            search_opt.criterion = parse_criterion(criterion);
            search_opt.seed = seed;
            init_opt.seed = seed;
            CriterionData data;
            data.k_folds = folds;
            Mat xv, yv;
            if (search_opt.criterion == Criterion::Validation) {
                if (xv_path.empty() || yv_path.empty())
                    throw InvalidArgument("--criterion valid needs --x-valid and --y-valid");
                xv = read_matrix_csv(xv_path, header);
                yv = read_matrix_csv(yv_path, header);
                detail::check_rows(xv, yv);
                if (xv.cols() != x.cols() || yv.cols() != y.cols())
                    throw InvalidArgument("validation data dimensions differ from training data");
                data.x_valid = &xv;
                data.y_valid = &yv;
            }
            const InitState init = initialize(x, y, rank, init_opt);
            const SofarConfig base = flags.build(&init);
            const TuningResult tr = search(x, y, rank, base, init, search_opt, data);
            json j = detail::envelope("tune", seed, threads);
            j["config"] = to_json(base);
            j["config"]["rank"] = rank;
            j["config"]["criterion"] = to_string(search_opt.criterion);
            j["config"]["grid"] = search_opt.grid_size;
            j["config"]["epsilon"] = search_opt.epsilon;
            j["config"]["ratios"] = search_opt.ratios;
            json grid = json::array();
            for (std::size_t g = 0; g < tr.grid.size(); ++g)
                grid.push_back({{"t", tr.grid[g].t},
                                {"lambda_d", tr.grid[g].lambda_d},
                                {"lambda_a", tr.grid[g].lambda_a},
                                {"lambda_b", tr.grid[g].lambda_b},
                                {"score", tr.scores[g]},
                                {"rank", tr.ranks[g]}});
            j["result"] = {{"bounds",
                            {{"lambda_d", tr.bounds.lambda_d},
                             {"lambda_a", tr.bounds.lambda_a},
                             {"lambda_b", tr.bounds.lambda_b}}},
                           {"null_at_top", tr.null_at_top},
                           {"best_index", tr.best_index},
                           {"grid", grid},
                           {"fit", to_json(tr.best_fit, sink)}};
            detail::emit(j, out_path, out);
        } else if (sim_cmd->parsed()) {
            ModelSpec spec = ModelSpec::model(model_id);
            if (n_override) spec.n = *n_override;
            if (p_override) spec.p = *p_override;
            if (q_override) spec.q = *q_override;
            std::vector<Method> methods;
            for (const auto& name : method_names) methods.push_back(*parse_method(name));
            sim_opt.threads = threads;
            sim_opt.controls = flags.cfg;
            sim_opt.init.seed = seed;
            const SimulationReport rep = simulate(spec, seed, reps, methods, sim_opt);
            json j = detail::envelope("simulate", seed, threads);
            j["config"] = {{"model", spec.model_id}, {"n", spec.n},           {"p", spec.p},
                           {"q", spec.q},            {"r", spec.r},           {"reps", reps},
                           {"rank", sim_opt.m},      {"n_valid", sim_opt.n_val},
                           {"grid", sim_opt.grid_size}, {"epsilon", sim_opt.epsilon},
                           {"methods", method_names}, {"controls", to_json(flags.cfg)}};
            json summaries = json::array();
            for (const auto& s : rep.summaries) summaries.push_back(detail::summary_json(s));
            j["result"] = {{"summary", summaries}};
            if (per_replicate) {
                json recs = json::array();
                for (const auto& r : rep.records) {
                    json rj = to_json(r.metrics);
                    rj["replicate"] = r.replicate;
                    rj["method"] = to_string(r.method);
                    rj["sigma2"] = r.sigma2;
                    rj["error_f"] = r.error_f;
                    rj["monotonicity_violations"] = r.monotonicity_violations;
                    rj["max_orth_deviation"] = r.max_orth_deviation;
                    recs.push_back(rj);
                }
                j["result"]["replicates"] = recs;
            }
            detail::emit(j, out_path, out);
        } else if (pca_cmd->parsed() || bic_cmd->parsed() || fac_cmd->parsed() ||
                   var_cmd->parsed()) {
            const Mat x = read_matrix_csv(x_path, header);
            const SofarConfig cfg = flags.build(nullptr);
            AppResult r;
            std::string name;
            if (pca_cmd->parsed()) {
                name = "pca";
                r = variant == "regression" ? sparse_pca_regression(x, rank, cfg)
                                            : sparse_pca_approx(x, rank, cfg);
            } else if (bic_cmd->parsed()) {
                name = "bicluster";
                r = bicluster(x, rank, cfg);
            } else if (fac_cmd->parsed()) {
                name = "factor";
                r = sparse_factor_analysis(x, rank, cfg);
            } else {
                name = "var";
                const Mat yaug = read_matrix_csv(yaug_path, header);
                init_opt.seed = seed;
                r = sparse_var(x, yaug, rank, cfg, init_opt);
            }
            json j = detail::envelope(name, seed, threads);
            j["config"] = to_json(cfg);
            j["config"]["rank"] = rank;
            if (pca_cmd->parsed()) j["config"]["variant"] = variant;
            j["result"] = {{"fit", to_json(r.fit, sink)}};
            json derived = json::object();
            for (const auto& [k, m] : r.derived) derived[k] = sink.put(k, m);
            j["result"]["derived"] = derived;
            detail::emit(j, out_path, out);
        } else if (spark_cmd->parsed()) {
            const Mat x = read_matrix_csv(x_path, header);
            const auto k = robust_spark_bruteforce(x, spark_c, k_max);
            json j = detail::envelope("diag spark", seed, threads);
            j["config"] = {{"c", spark_c}, {"k_max", k_max}};
            j["result"] = {{"spark", k ? json(*k) : json(nullptr)}};
            detail::emit(j, out_path, out);
        } else if (pert_cmd->parsed()) {
            json checks = json::array();
            bool all_hold = true;
            auto record = [&](const PerturbationCheck& pc) {
                all_hold = all_hold && (!pc.applicable || pc.holds);
                checks.push_back({{"lhs", pc.lhs},
                                  {"rhs", pc.rhs},
                                  {"applicable", pc.applicable},
                                  {"holds", pc.holds},
                                  {"factor_ratio", std::isnan(pc.factor_ratio)
                                                       ? json(nullptr)
                                                       : json(pc.factor_ratio)}});
            };
            if (!c_path.empty() || !cstar_path.empty()) {
                if (c_path.empty() || cstar_path.empty())
                    throw InvalidArgument("diag perturb needs both --c and --c-star");
                record(perturbation_check(read_matrix_csv(c_path, header),
                                          read_matrix_csv(cstar_path, header)));
            } else {
                if (pert_r < 1 || pert_r > std::min(pert_p, pert_q))
                    throw InvalidArgument("diag perturb: need 1 <= r <= min(p, q)");
                for (int i = 0; i < pairs; ++i) {
                    RngStream rng(seed, static_cast<std::uint64_t>(i));
                    Mat a(pert_p, pert_r), b(pert_q, pert_r), e(pert_p, pert_q);
                    for (Index jj = 0; jj < a.size(); ++jj) a.data()[jj] = rng.normal();
                    for (Index jj = 0; jj < b.size(); ++jj) b.data()[jj] = rng.normal();
                    for (Index jj = 0; jj < e.size(); ++jj) e.data()[jj] = rng.normal();
                    const Mat cs = a * b.transpose();
                    record(perturbation_check(Mat(cs + pert_scale * e), cs));
                }
            }
            json j = detail::envelope("diag perturb", seed, threads);
            j["config"] = {{"pairs", checks.size()}, {"scale", pert_scale}};
            j["result"] = {{"all_hold", all_hold}, {"checks", checks}};
            detail::emit(j, out_path, out);
        } else if (rate_cmd->parsed()) {
            ModelSpec spec = ModelSpec::model(model_id);
            if (p_override) spec.p = *p_override;
            if (q_override) spec.q = *q_override;
            sim_opt.threads = threads;
            sim_opt.init.seed = seed;
            const auto ns = detail::parse_index_list(n_values);
            const auto rows =
                rate_diagnostic(spec, ns, reps, seed, *parse_method(rate_method), sim_opt);
            json table = json::array();
            for (const auto& r : rows)
                table.push_back({{"n", r.n},
                                 {"median_error", r.median_error},
                                 {"median_init_error", r.median_init_error},
                                 {"lasso_rate", r.lasso_rate},
                                 {"sofar_rate", r.sofar_rate},
                                 {"error_ratio", r.error_ratio},
                                 {"init_ratio", r.init_ratio}});
            json j = detail::envelope("diag rate", seed, threads);
            j["config"] = {{"model", model_id}, {"p", spec.p}, {"q", spec.q},
                           {"reps", reps},      {"n_values", ns}, {"method", rate_method}};
            j["result"] = {{"rows", table}};
            detail::emit(j, out_path, out);
        }
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const ParseError& e) {
        err << "input error: " << e.what() << "\n";
        return kUsage;
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kOk;
}

}  // namespace sofar::cli
