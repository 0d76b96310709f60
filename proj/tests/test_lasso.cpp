#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "sofar/lasso.hpp"
#include "sofar/metrics.hpp"
#include "sofar/random.hpp"
#include "sofar/simgen.hpp"

using namespace sofar;

namespace {

Mat gaussian(Index r, Index c, RngStream& rng)
{
    Mat m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

// Columns rescaled to squared norm n so the internal standardization is the identity.
Mat standardized(Mat x)
{
    const double n = static_cast<double>(x.rows());
    for (Index j = 0; j < x.cols(); ++j) x.col(j) *= std::sqrt(n) / x.col(j).norm();
    return x;
}

double lasso_objective(const Mat& x, const Vec& y, const Vec& b, double lam)
{
    return (y - x * b).squaredNorm() / (2.0 * static_cast<double>(x.rows())) + lam * b.cwiseAbs().sum();
}

// KKT residual of the Lasso on the original scale with per-column penalty
// lam / scale_j (equivalent to the standardized problem).
double kkt_residual(const Mat& x, const Vec& y, const Vec& beta, double lam)
{
    const double n = static_cast<double>(x.rows());
    const Vec r = y - x * beta;
    double worst = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
        const double s = std::sqrt(n) / x.col(j).norm();
        const double g = s * x.col(j).dot(r) / n;
        if (beta(j) != 0.0) worst = std::max(worst, std::abs(g - std::copysign(lam, beta(j))));
        else worst = std::max(worst, std::abs(g) - lam);
    }
    return worst;
}

}  // namespace

TEST(LassoColumn, HandSolvedScalarCase)
{
    const Mat x = Mat::Ones(4, 1);
    const Vec y = Vec::Constant(4, 2.0);
    EXPECT_NEAR(lasso_column(x, y, 1.0)(0), 1.0, 1e-12);
    // 1-D grid oracle on the same objective.
    double best = 1e300, arg = 0.0;
    for (int i = -50000; i <= 50000; ++i) {
        const double b = i * 1e-4;
        const double v = lasso_objective(x, y, Vec::Constant(1, b), 1.0);
        if (v < best) best = v, arg = b;
    }
    EXPECT_NEAR(arg, 1.0, 1e-4);
}

TEST(LassoColumn, NullAboveLambdaMax)
{
    // +-1 entries with n = 16 make the internal column scaling exactly one.
    RngStream rng(201, 0);
    Mat x(16, 4);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const Vec y = gaussian(16, 1, rng).col(0);
    const double lmax = (x.transpose() * y).cwiseAbs().maxCoeff() / 16.0;
    EXPECT_EQ(lasso_column(x, y, lmax).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT(lasso_column(x, y, 0.99 * lmax).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_THROW(lasso_column(x, y, -1.0), InvalidArgument);
}

TEST(LassoColumn, MatchesTwoDimensionalGridOracle)
{
    for (int t = 0; t < 100; ++t) {
        RngStream rng(202, t);
        const Mat x = standardized(gaussian(12, 2, rng));
        Vec y = x * Vec::Constant(2, 1.0) + gaussian(12, 1, rng).col(0);
        const double lam = 0.05 + 0.4 * rng.uniform();
        const Vec b = lasso_column(x, y, lam);
        // Objective as a quadratic in b: precompute moments.
        const Mat g = x.transpose() * x / 12.0;
        const Vec c = x.transpose() * y / 12.0;
        const double yy = y.squaredNorm() / 12.0;
        const Vec arg = oracle::lasso2_grid(g, c, yy, lam);
        EXPECT_LE((b - arg).cwiseAbs().maxCoeff(), 2e-3) << "instance " << t;
    }
}

TEST(LassoColumn, KktAndMonotoneSweeps)
{
    for (int t = 0; t < 100; ++t) {
        RngStream rng(203, t);
        const Mat x = gaussian(20, 5, rng);
        const Vec y = gaussian(20, 1, rng).col(0);
        const LassoDesign d(x);
        const double lmax = LassoDesign::lambda_max(d.correlations(y).col(0));
        const LassoSolution sol = d.solve_response(y, lmax * (0.05 + 0.9 * rng.uniform()));
        EXPECT_LE(sol.kkt_residual, 1e-8);
        EXPECT_EQ(sol.objective_increases, 0);
    }
}

TEST(LassoMatrix, SeparableAndKkt)
{
    for (int t = 0; t < 100; ++t) {
        RngStream rng(204, t);
        const Mat x = gaussian(20, 5, rng);
        const Mat y = gaussian(20, 3, rng);
        const double lam = 0.02 + 0.2 * rng.uniform();
        const Mat c = lasso_matrix(x, y, lam);
        for (Index j = 0; j < 3; ++j) {
            EXPECT_EQ(c.col(j), lasso_column(x, y.col(j), lam));
            EXPECT_LE(kkt_residual(x, y.col(j), c.col(j), lam), 1e-8);
        }
    }
}

TEST(LassoMatrix, ZeroAboveThreshold)
{
    RngStream rng(205, 0);
    Mat x(25, 6);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const Mat y = gaussian(25, 4, rng);
    // Just above: the library sums column by column, so an exact tie can round either way.
    const double lmax = (x.transpose() * y).cwiseAbs().maxCoeff() / 25.0 * (1.0 + 1e-12);
    EXPECT_EQ(lasso_matrix(x, y, lmax).cwiseAbs().maxCoeff(), 0.0);
}

TEST(LogGrid, EndpointsAndSpacing)
{
    const auto g = log_grid(10.0, 1e-3, 4);
    ASSERT_EQ(g.size(), 4u);
    EXPECT_DOUBLE_EQ(g[0], 10.0);
    EXPECT_NEAR(g[1], 1.0, 1e-12);
    EXPECT_NEAR(g[3], 1e-2, 1e-15);
}

TEST(Folds, PartitionRows)
{
    const auto folds = make_folds(23, 5, 3);
    std::vector<int> seen(23, 0);
    for (const auto& f : folds) {
        EXPECT_GE(f.size(), 4u);
        for (Index i : f) ++seen[static_cast<std::size_t>(i)];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
    EXPECT_EQ(make_folds(23, 5, 3), folds);
    EXPECT_THROW(make_folds(3, 5, 1), InvalidArgument);
    EXPECT_THROW(make_folds(10, 1, 1), InvalidArgument);
}

TEST(CrossValidation, NoiselessSparseTruthPicksSmallLambda)
{
    RngStream rng(206, 0);
    const Mat x = gaussian(80, 10, rng);
    Mat c = Mat::Zero(10, 2);
    c(0, 0) = 2;
    c(3, 1) = -1.5;
    const Mat y = x * c;
    const LambdaCv cv = cross_validate_lambda0(x, y);
    EXPECT_GE(cv.best_index, cv.grid.size() - 3);
    EXPECT_LT(cv.cv_error[cv.best_index], 1e-3 * y.squaredNorm());
}

TEST(CrossValidation, IndependentResponseUsuallyPicksNull)
{
    // Pure noise: the null model should win most draws; chance correlation
    // in a minority of draws is expected.
    int null_wins = 0;
    for (int seed = 0; seed < 20; ++seed) {
        RngStream rng(207, seed);
        const Mat x = gaussian(100, 5, rng);
        const Mat y = gaussian(100, 40, rng);
        const LambdaCv cv = cross_validate_lambda0(x, y, 5, 30, 4);
        if (cv.best_index == 0) {
            ++null_wins;
            EXPECT_EQ(cv.lambda, cv.grid.front());
        }
    }
    EXPECT_GE(null_wins, 15);
}

TEST(Initialize, DiagonalEstimate)
{
    Mat c = Mat::Zero(2, 2);
    c(0, 0) = 5;
    c(1, 1) = 3;
    const InitState s = init_from_estimate(c, 2);
    EXPECT_NEAR(s.d0(0), 5.0, 1e-14);
    EXPECT_NEAR(s.d0(1), 3.0, 1e-14);
    EXPECT_LE((s.u0.cwiseAbs() - Mat::Identity(2, 2)).norm(), 1e-14);
    EXPECT_LE((s.v0.cwiseAbs() - Mat::Identity(2, 2)).norm(), 1e-14);
    EXPECT_FALSE(s.zero_fit);
    EXPECT_LE((s.a0() * s.v0.transpose() - c).norm(), 1e-13);
}

TEST(Initialize, ZeroEstimateFlagsZeroFit)
{
    EXPECT_TRUE(init_from_estimate(Mat::Zero(3, 2), 1).zero_fit);
    RngStream rng(208, 0);
    const Mat x = gaussian(40, 4, rng);
    EXPECT_TRUE(initialize(x, Mat::Zero(40, 3), 2).zero_fit);
}

TEST(Initialize, RankOutOfRange)
{
    EXPECT_THROW(init_from_estimate(Mat::Ones(3, 2), 3), InvalidArgument);
    EXPECT_THROW(init_from_estimate(Mat::Ones(3, 2), 0), InvalidArgument);
}

TEST(Initialize, ScreeningKeepsSupport)
{
    Mat c = Mat::Zero(4, 3);
    c(1, 2) = 1.0;
    c(3, 0) = -2.0;
    const InitState s = init_from_estimate(c, 1, 0.0, true);
    EXPECT_EQ(s.kept_rows, (std::vector<Index>{1, 3}));
    EXPECT_EQ(s.kept_cols, (std::vector<Index>{0, 2}));
    EXPECT_EQ(init_from_estimate(c, 1).kept_rows.size(), 4u);
}

TEST(Initialize, ModelOneEstimate)
{
    const SimData d = gen_model(ModelSpec::model(1), 7, 0);
    const InitState s = initialize(d.x, d.y, 5);
    EXPECT_LT((s.c_tilde - d.truth.c_star).norm() / d.truth.c_star.norm(), 0.5);
    EXPECT_GT(s.d0(0), s.d0(1));
    EXPECT_GT(s.d0(1), s.d0(2));
    // The three leading values carry the signal and dominate the tail.
    EXPECT_GT(s.d0(2), 3.0 * s.d0(3));
    EXPECT_NEAR(s.d0(0), 20.0, 5.0);
    EXPECT_NEAR(s.d0(1), 15.0, 5.0);
    EXPECT_NEAR(s.d0(2), 10.0, 5.0);
}

TEST(Initialize, ErrorRatioToRateNonincreasingInN)
{
    ModelSpec spec = ModelSpec::model(1);
    spec.p = 40;
    spec.q = 20;
    std::vector<double> ratios;
    for (Index n : {100, 200, 400}) {
        spec.n = n;
        std::vector<double> r;
        for (int rep = 0; rep < 5; ++rep) {
            const SimData d = gen_model(spec, 31, static_cast<std::uint64_t>(rep));
            const InitState s = initialize(d.x, d.y, 3);
            r.push_back((s.c_tilde - d.truth.c_star).norm() / theory_report(d.truth, n).r_n);
        }
        ratios.push_back(median(r));
    }
    EXPECT_LE(ratios[1], 1.2 * ratios[0]);
    EXPECT_LE(ratios[2], 1.2 * ratios[1]);
}
