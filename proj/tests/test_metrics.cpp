#include <gtest/gtest.h>

#include <cmath>
#include <optional>

#include "oracles.hpp"
#include "sofar/linalg.hpp"
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

GroundTruth diag_truth()
{
    GroundTruth t;
    t.u_star = Mat::Zero(4, 2);
    t.v_star = Mat::Zero(3, 2);
    t.u_star(0, 0) = t.u_star(1, 1) = 1.0;
    t.v_star(0, 0) = t.v_star(1, 1) = 1.0;
    t.d_star = Vec(2);
    t.d_star << 4.0, 2.0;
    t.r = 2;
    t.c_star = t.u_star * t.d_star.asDiagonal() * t.v_star.transpose();
    return t;
}

// Spark by enumerating column bitmasks and the inertia oracle.
std::optional<int> spark_oracle(const Mat& x, double c, int k_max)
{
    const Index p = x.cols();
    const Mat g = x.transpose() * x / double(x.rows());
    int best = 0;
    for (unsigned mask = 1; mask < (1u << p); ++mask) {
        const int k = __builtin_popcount(mask);
        if (k > k_max || (best && k >= best)) continue;
        std::vector<Index> s;
        for (Index j = 0; j < p; ++j)
            if (mask & (1u << j)) s.push_back(j);
        if (oracle::sym_min_eigenvalue(g(s, s)) < c) best = k;
    }
    return best ? std::optional<int>(best) : std::nullopt;
}

}  // namespace

TEST(Metrics, AlignReordersBySingularValue)
{
    const GroundTruth t = diag_truth();
    Mat u = Mat::Zero(4, 2), v = Mat::Zero(3, 2);
    u(1, 0) = u(0, 1) = 1.0;
    v(1, 0) = v(0, 1) = 1.0;
    Vec d(2);
    d << 5.0, 9.0;
    const AlignedLayers al = align_layers(u, d, v, t.u_star, t.d_star, t.v_star);
    EXPECT_EQ(al.width, 2);
    EXPECT_EQ(al.u_hat.col(0), u.col(1));
    EXPECT_EQ(al.v_hat.col(1), v.col(0));
}

TEST(Metrics, AlignPadsMissingLayers)
{
    const GroundTruth t = diag_truth();
    Mat u = t.u_star.leftCols(1), v = t.v_star.leftCols(1);
    Vec d(1);
    d << 4.0;
    const AlignedLayers al = align_layers(u, d, v, t.u_star, t.d_star, t.v_star);
    EXPECT_EQ(al.width, 2);
    EXPECT_EQ(al.u_hat.col(1).squaredNorm(), 0.0);
    EXPECT_EQ(al.v_hat.col(1).squaredNorm(), 0.0);
    const MetricsRecord m = evaluate(Mat::Identity(4, 4), u, d, v, t);
    EXPECT_EQ(m.rank_hat, 1);
    EXPECT_FALSE(m.rank_correct);
    EXPECT_DOUBLE_EQ(m.fnr_pct, 50.0);
}

TEST(Metrics, AlignFixesSignsWithoutChangingProduct)
{
    RngStream rng(4, 0);
    const SimData s = gen_model(ModelSpec::model(1), 4);
    Mat u = s.truth.u_star, v = s.truth.v_star;
    u.col(1) *= -1.0;
    v.col(1) *= -1.0;
    Vec d = s.truth.d_star;
    // Permute the layers as well.
    std::swap(d(0), d(2));
    u.col(0).swap(u.col(2));
    v.col(0).swap(v.col(2));
    const AlignedLayers al = align_layers(u, d, v, s.truth.u_star, s.truth.d_star, s.truth.v_star);
    EXPECT_LE((al.u_hat - al.u_star).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE((al.v_hat - al.v_star).cwiseAbs().maxCoeff(), 1e-15);
    const Mat before = u * d.asDiagonal() * v.transpose();
    const Mat after = al.u_hat * s.truth.d_star.asDiagonal() * al.v_hat.transpose();
    EXPECT_LE((before - after).cwiseAbs().maxCoeff(), 1e-12);
    const MetricsRecord m = evaluate(s.x, u, d, v, s.truth);
    EXPECT_LE(m.mse_est, 1e-28);
    EXPECT_EQ(m.fpr_pct, 0.0);
    EXPECT_EQ(m.fnr_pct, 0.0);
}

TEST(Metrics, ExactRecoveryIsPerfect)
{
    const SimData s = gen_model(ModelSpec::model(1), 1);
    const GroundTruth& t = s.truth;
    const MetricsRecord m = evaluate(s.x, t.u_star, t.d_star, t.v_star, t);
    EXPECT_EQ(m.mse_est, 0.0);
    EXPECT_EQ(m.mse_pred, 0.0);
    EXPECT_EQ(m.fpr_pct, 0.0);
    EXPECT_EQ(m.fnr_pct, 0.0);
    EXPECT_TRUE(m.rank_correct);
    EXPECT_NEAR(m.orth, 0.0, 1e-10);
}

TEST(Metrics, OrthCountsOffDiagonalMass)
{
    const SimData s = gen_model(ModelSpec::model(1), 2);
    const GroundTruth& t = s.truth;
    Mat g = Mat::Identity(3, 3);
    g(0, 1) = g(1, 0) = 0.01;
    const Mat l = g.llt().matrixL();
    const Mat u = t.u_star * l.transpose();
    EXPECT_LE((u.transpose() * u - g).cwiseAbs().maxCoeff(), 1e-14);
    const MetricsRecord m = evaluate(s.x, u, t.d_star, t.v_star, t);
    EXPECT_NEAR(m.orth, 2.0, 1e-10);
}

TEST(Metrics, FalsePositiveAndNegativeRates)
{
    const SimData s = gen_model(ModelSpec::model(1), 3);
    const GroundTruth& t = s.truth;
    // 3 (p + q) = 420 stacked entries, 12 + 15 = 27 of them nonzero.
    Mat u = t.u_star, v = t.v_star;
    u(50, 0) = 0.3;
    u(60, 1) = -0.2;
    v(0, 0) = 0.0;
    const MetricsRecord m = evaluate(s.x, u, t.d_star, v, t);
    EXPECT_NEAR(m.fpr_pct, 100.0 * 2.0 / 393.0, 1e-12);
    EXPECT_NEAR(m.fnr_pct, 100.0 / 27.0, 1e-12);
    // Float dust below the threshold is not a selection.
    u = t.u_star;
    u(70, 2) = 1e-12;
    EXPECT_EQ(evaluate(s.x, u, t.d_star, t.v_star, t).fpr_pct, 0.0);
}

TEST(Metrics, CoefficientMetrics)
{
    const GroundTruth t = diag_truth();
    Mat c = t.c_star;
    c(3, 2) = 1.0;
    const MetricsRecord m = evaluate_coefficients(Mat::Identity(4, 4), c, t, numerical_rank(c));
    EXPECT_NEAR(m.mse_est, 1.0 / 12.0, 1e-15);
    EXPECT_NEAR(m.mse_pred, 1.0 / 12.0, 1e-15);
    EXPECT_NEAR(m.fpr_pct, 10.0, 1e-12);
    EXPECT_EQ(m.fnr_pct, 0.0);
    EXPECT_EQ(m.rank_hat, 3);
    EXPECT_FALSE(m.rank_correct);
    EXPECT_THROW(evaluate_coefficients(Mat::Identity(4, 4), Mat::Zero(3, 3), t, 0), InvalidArgument);
}

TEST(Metrics, NumericalRank)
{
    EXPECT_EQ(numerical_rank(Mat::Zero(3, 4)), 0);
    RngStream rng(2, 0);
    const Mat a = gaussian(6, 2, rng) * gaussian(2, 5, rng);
    EXPECT_EQ(numerical_rank(a), 2);
    EXPECT_EQ(numerical_rank(gaussian(6, 5, rng)), 5);
}

TEST(Metrics, TheoryReportHandExample)
{
    const GroundTruth t = diag_truth();
    const TheoryReport r = theory_report(t, 100);
    EXPECT_EQ(r.s, 2);
    EXPECT_EQ(r.s_a, 2);
    EXPECT_EQ(r.s_b, 2);
    EXPECT_EQ(r.r, 2);
    // 1 - 4/16 = 0.75 so delta = 0.5625.
    EXPECT_NEAR(r.delta, 0.5625, 1e-15);
    EXPECT_NEAR(r.eta_n, 1.0 + std::sqrt(5.0) / 0.75, 1e-12);
    EXPECT_NEAR(r.tau, 2.0, 1e-15);
    EXPECT_NEAR(r.r_n, std::sqrt(2.0 * std::log(12.0) / 100.0), 1e-15);
}

TEST(Metrics, TheoryScalingsHalveWithFourfoldN)
{
    const SimData s = gen_model(ModelSpec::model(1), 0);
    const TheoryReport a = theory_report(s.truth, 200);
    const TheoryReport b = theory_report(s.truth, 400);
    EXPECT_NEAR(a.r_n / b.r_n, std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(sofar_rate(a, 100, 40, 200) / sofar_rate(a, 100, 40, 400), std::sqrt(2.0), 1e-12);
    // Disjoint right supports keep every block product nonzero.
    EXPECT_EQ(a.s, 60);
    EXPECT_EQ(a.s_a, 12);
    EXPECT_EQ(a.s_b, 15);
    EXPECT_LE(a.delta, 1.0);
}

TEST(Metrics, SparkOfScaledIdentity)
{
    const Mat x = std::sqrt(3.0) * Mat::Identity(3, 3);
    EXPECT_FALSE(robust_spark_bruteforce(x, 0.5, 3).has_value());
    EXPECT_FALSE(robust_spark_bruteforce(x, 0.999, 3).has_value());
    EXPECT_EQ(robust_spark_bruteforce(x, 1.0 + 1e-9, 3), 1);
}

TEST(Metrics, SparkOfDuplicatedColumn)
{
    RngStream rng(8, 0);
    Mat x = gaussian(10, 5, rng);
    x.col(3) = x.col(1);
    for (double c : {1e-6, 0.1, 0.3}) {
        const auto k = robust_spark_bruteforce(x, c, 5);
        ASSERT_TRUE(k.has_value());
        EXPECT_LE(*k, 2);
    }
    EXPECT_EQ(robust_spark_bruteforce(x, 1e-6, 5), 2);
}

TEST(Metrics, SparkMatchesSubsetOracle)
{
    RngStream rng(31, 0);
    for (int inst = 0; inst < 120; ++inst) {
        const Mat x = gaussian(8, 6, rng);
        const double c = rng.uniform(0.05, 0.8);
        EXPECT_EQ(robust_spark_bruteforce(x, c, 6), spark_oracle(x, c, 6)) << inst;
    }
}

TEST(Metrics, SparkMonotoneInThreshold)
{
    RngStream rng(32, 0);
    const Mat x = gaussian(8, 6, rng);
    int prev = 7;
    for (double c = 0.05; c < 2.0; c += 0.05) {
        const int k = robust_spark_bruteforce(x, c, 6).value_or(7);
        EXPECT_LE(k, prev);
        prev = k;
    }
    EXPECT_THROW(robust_spark_bruteforce(gaussian(5, 21, rng), 0.5, 13), InvalidArgument);
    EXPECT_THROW(robust_spark_bruteforce(x, 0.0, 3), InvalidArgument);
}

TEST(Metrics, PerturbationIdentity)
{
    const SimData s = gen_model(ModelSpec::model(1), 0);
    const PerturbationCheck pc = perturbation_check(s.truth.c_star, s.truth.c_star);
    EXPECT_NEAR(pc.lhs, 0.0, 1e-12);
    EXPECT_EQ(pc.rhs, 0.0);
    EXPECT_TRUE(pc.applicable);
    EXPECT_TRUE(pc.holds);
}

TEST(Metrics, PerturbationRankOneShift)
{
    RngStream rng(3, 0);
    const Vec u = gaussian(6, 1, rng).col(0).normalized();
    const Vec v = gaussian(4, 1, rng).col(0).normalized();
    const Mat c_star = 3.0 * u * v.transpose();
    const Mat c = 3.7 * u * v.transpose();
    const PerturbationCheck pc = perturbation_check(c, c_star);
    EXPECT_NEAR(pc.lhs, 0.7, 1e-12);
    EXPECT_NEAR(pc.rhs, 0.7, 1e-12);
    EXPECT_TRUE(pc.holds);
    EXPECT_TRUE(pc.applicable);
}

TEST(Metrics, MirskyOnRandomPairs)
{
    RngStream rng(44, 0);
    int tested = 0;
    for (int inst = 0; inst < 200; ++inst) {
        Mat c_star = gaussian(7, 5, rng) * gaussian(5, 5, rng);
        const Mat c = c_star + rng.uniform(0.01, 1.5) * gaussian(7, 5, rng);
        const PerturbationCheck pc = perturbation_check(c, c_star);
        EXPECT_EQ(pc.applicable, spectral_norm(Mat(c - c_star)) <= thin_svd(c_star).s(0));
        if (!pc.applicable) continue;
        ++tested;
        EXPECT_TRUE(pc.holds) << inst;
        EXPECT_TRUE(std::isfinite(pc.factor_ratio));
    }
    EXPECT_GE(tested, 100);
}

TEST(Metrics, SummaryStatistics)
{
    EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
    EXPECT_DOUBLE_EQ(mean({1.0, 2.0, 6.0}), 3.0);
    EXPECT_NEAR(stddev({1.0, 2.0, 6.0}), std::sqrt(7.0), 1e-15);
    EXPECT_EQ(stddev({5.0}), 0.0);
    EXPECT_TRUE(std::isnan(median({})));
}
