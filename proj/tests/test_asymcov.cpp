#include "smm/asymcov.hpp"
#include "smm/sampler.hpp"

#include "oracles.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

using namespace smm;

namespace {

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

Domain square() { return Domain::rectangle(v2(-1, -1), v2(1, 1)); }

SampleMatrix draw(const TNParams& t, const Domain& D, Eigen::Index n, std::uint64_t seed)
{
    RngStream rng(seed);
    return sample_truncated(t, D, n, rng);
}

SampleMatrix repeat(const SampleMatrix& s, int k)
{
    SampleMatrix out;
    out.x.resize(s.n() * k, s.dim());
    for (int j = 0; j < k; ++j)
        out.x.middleRows(j * s.n(), s.n()) = s.x;
    return out;
}

} // namespace

TEST(EvalG, PopulationMomentsRecoverTruth)
{
    // Population moments by tensor Gauss-Legendre: G at E[Y] is exactly (Sigma0, mu0).
    Matrix S(2, 2);
    S << 0.8, 0.2, 0.2, 0.6;
    const TNParams t(v2(0.3, -0.2), S);
    const auto tf = tn_test_functions(square());
    const Vector lo = v2(-1, -1), hi = v2(1, 1);
    auto w = [&](const Vector& x) { return std::exp(tn_log_kernel(t, x)); };
    const double c = oracle::tensor_gl(w, lo, hi);
    Vector Ey(MomentVector::stacked_size(2));
    for (Eigen::Index k = 0; k < Ey.size(); ++k)
        Ey[k] = oracle::tensor_gl([&](const Vector& x) { return moment_contribution(x, tf)[k] * w(x); }, lo, hi) / c;
    const GValue g = eval_G(MomentVector::unstack(Ey, 2));
    EXPECT_LT((g.G1 - S).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((g.G2 - t.mu()).norm(), 1e-8);
}

TEST(EvalG, SolvesTheMomentEquations)
{
    RngStream rng(1);
    for (int rep = 0; rep < 50; ++rep) {
        Vector y(MomentVector::stacked_size(2));
        for (Eigen::Index k = 0; k < y.size(); ++k)
            y[k] = rng.normal();
        y[y.size() - 1] = 1.0 + rng.uniform();
        const MomentVector Z = MomentVector::unstack(y, 2);
        const GValue g = eval_G(Z);
        const Matrix lhs = g.G1 * (Z.Z2 * Z.z - Z.z3 * Z.z2.transpose());
        const Matrix rhs = Z.Z1 * Z.z - Z.z1 * Z.z2.transpose();
        EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, rhs.cwiseAbs().maxCoeff()));
        EXPECT_LT((g.G2 * Z.z + g.G1 * Z.z3 - Z.z1).norm(), 1e-9 * std::max(1.0, Z.z1.norm()));
    }
}

TEST(EvalG, HandExample)
{
    // Z2 = I, z = 1, z1 = z2 = z3 = 0: G1 = Z1, G2 = 0.
    MomentVector Z;
    Z.Z1 = (Matrix(2, 2) << 2, 1, 0, 3).finished();
    Z.Z2 = Matrix::Identity(2, 2);
    Z.z1 = Z.z2 = Z.z3 = Vector::Zero(2);
    Z.z = 1.0;
    const GValue g = eval_G(Z);
    EXPECT_EQ(g.G1, Z.Z1);
    EXPECT_EQ(g.G2, Vector::Zero(2));
    const Vector t = eval_G_tilde(Z);
    EXPECT_EQ(t, (Vector(6) << 2, 0.5, 0.5, 3, 0, 0).finished());
    Z.z = 0.0;
    EXPECT_THROW(eval_G(Z), std::domain_error);
}

TEST(EvalG, AgreesWithSteinEstimator)
{
    const auto s = draw(TNParams(v2(0.2, 0.1), Matrix::Identity(2, 2)), square(), 400, 2);
    const auto tf = tn_test_functions(square());
    const TNResult r = tn_stein_estimate(s, tf);
    ASSERT_TRUE(r.eligible());
    const GValue g = eval_G(empirical_moments(s, tf));
    EXPECT_LT((g.G1 - r.diagnostics.sigma_tilde).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((g.G2 - r.diagnostics.mu_tilde).norm(), 1e-10);
    const Vector gt = eval_G_tilde(empirical_moments(s, tf));
    EXPECT_LT((gt.head(4) - r.raw.head(4)).norm(), 1e-10);
    EXPECT_LT((gt.tail(2) - r.diagnostics.mu_tilde).norm(), 1e-10);
}

TEST(JacobianG, MatchesFiniteDifferences)
{
    const Domain cube = Domain::rectangle(Vector::Constant(3, -1), Vector::Constant(3, 1));
    Matrix S3 = Matrix::Identity(3, 3);
    S3(0, 1) = S3(1, 0) = 0.3;
    const std::vector<std::pair<Domain, TNParams>> cases = {
        {square(), TNParams(v2(0.1, -0.3), Matrix::Identity(2, 2))},
        {Domain::ball(v2(0, 0), 1.0), TNParams(v2(0.4, 0.2), 0.5 * Matrix::Identity(2, 2))},
        {cube, TNParams(Vector::Constant(3, 0.1), S3)},
    };
    std::uint64_t seed = 10;
    for (const auto& [D, t] : cases) {
        const auto s = draw(t, D, 300, seed++);
        const MomentVector Z = empirical_moments(s, tn_test_functions(D));
        const int d = Z.dim();
        const Vector y = Z.stack();
        const Matrix fd = oracle::fd_jacobian(
            [&](const Vector& u) { return eval_G_tilde(MomentVector::unstack(u, d)); }, y, 1e-6);
        const Matrix J = jacobian_G(Z);
        ASSERT_EQ(J.rows(), d * d + d);
        ASSERT_EQ(J.cols(), MomentVector::stacked_size(d));
        EXPECT_LT((J - fd).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, J.cwiseAbs().maxCoeff())) << "d=" << d;
    }
}

TEST(Sandwich, CovarianceIsSymmetricPsd)
{
    const auto s = draw(TNParams(v2(0, 0), 2.0 * Matrix::Identity(2, 2)), square(), 1000, 3);
    const SandwichCovariance c = sandwich_cov(s, square());
    EXPECT_EQ(c.cov, c.cov.transpose());
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(c.cov).eigenvalues();
    EXPECT_GE(ev.minCoeff(), -1e-10 * ev.maxCoeff());
    EXPECT_EQ(c.n, 1000);
    for (Eigen::Index i = 0; i < c.std_errors.size(); ++i)
        EXPECT_DOUBLE_EQ(c.std_errors[i], std::sqrt(c.cov(i, i) / 1000.0));
}

TEST(Sandwich, MatchesExplicitFormula)
{
    const auto s = draw(TNParams(v2(0, 0), Matrix::Identity(2, 2)), square(), 200, 4);
    const auto tf = tn_test_functions(square());
    const Matrix Y = moment_contributions(s, tf);
    const Vector mean = Y.colwise().mean().transpose();
    Matrix V = Matrix::Zero(Y.cols(), Y.cols());
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
        const Vector r = Y.row(i).transpose() - mean;
        V += r * r.transpose();
    }
    V /= static_cast<double>(Y.rows() - 1);
    const Matrix J = oracle::fd_jacobian([&](const Vector& u) { return eval_G_tilde(MomentVector::unstack(u, 2)); },
                                         mean, 1e-6);
    const Matrix expect = J * V * J.transpose();
    const SandwichCovariance c = sandwich_cov(s, tf);
    EXPECT_LT((c.var_y - V).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, V.cwiseAbs().maxCoeff()));
    EXPECT_LT((c.cov - expect).cwiseAbs().maxCoeff(), 1e-4 * expect.cwiseAbs().maxCoeff());
}

TEST(Sandwich, DuplicatedSampleOnlyRescalesDivisor)
{
    const auto s = draw(TNParams(v2(0.5, 0.5), 0.5 * Matrix::Identity(2, 2)), square(), 300, 5);
    const SandwichCovariance a = sandwich_cov(s, square());
    const SandwichCovariance b = sandwich_cov(repeat(s, 2), square());
    const double n = 300.0;
    const double factor = (n - 1.0) / n * (2.0 * n) / (2.0 * n - 1.0);
    EXPECT_LT((b.jacobian - a.jacobian).cwiseAbs().maxCoeff(), 1e-9 * a.jacobian.cwiseAbs().maxCoeff());
    EXPECT_LT((b.cov - factor * a.cov).cwiseAbs().maxCoeff(), 1e-9 * a.cov.cwiseAbs().maxCoeff());
}

TEST(Sandwich, RejectsTinyOrOutsideSamples)
{
    SampleMatrix one;
    one.x = Matrix::Zero(1, 2);
    EXPECT_THROW(sandwich_cov(one, square()), std::invalid_argument);
    SampleMatrix out;
    out.x = Matrix::Constant(3, 2, 5.0);
    EXPECT_THROW(sandwich_cov(out, square()), std::domain_error);
    EXPECT_THROW(sample_covariance(Matrix::Zero(1, 3)), std::invalid_argument);
}

TEST(NormalQuantile, KnownValuesAndInverse)
{
    EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-12);
    EXPECT_NEAR(normal_quantile(0.5), 0.0, 1e-15);
    EXPECT_NEAR(normal_quantile(0.841344746068543), 1.0, 1e-10);
    for (double p : {1e-12, 1e-6, 0.01, 0.02425, 0.1, 0.3, 0.7, 0.9, 0.99, 1 - 1e-6}) {
        const double x = normal_quantile(p);
        EXPECT_NEAR(0.5 * std::erfc(-x / std::sqrt(2.0)) / p, 1.0, 1e-12) << p;
        if (p >= 1e-6) {
            EXPECT_NEAR(normal_quantile(1.0 - p), -x, 1e-8 * std::max(1.0, std::abs(x)));
        }
    }
    EXPECT_THROW(normal_quantile(0.0), std::invalid_argument);
    EXPECT_THROW(normal_quantile(1.0), std::invalid_argument);
}

TEST(ConfidenceIntervals, WidthsFollowStandardErrors)
{
    const auto s = draw(TNParams(v2(0, 0), Matrix::Identity(2, 2)), square(), 2000, 6);
    const TNResult r = tn_stein_estimate(s, square());
    ASSERT_TRUE(r.eligible());
    const SandwichCovariance c = sandwich_cov(s, square());
    const auto ci = confidence_intervals(r, c, 0.95);
    ASSERT_EQ(ci.size(), 6u);
    for (std::size_t i = 0; i < ci.size(); ++i) {
        EXPECT_NEAR(ci[i].upper - ci[i].lower, 2.0 * 1.959963984540054 * c.std_errors[i], 1e-12);
        EXPECT_NEAR(0.5 * (ci[i].upper + ci[i].lower), r.raw[i], 1e-12);
    }
    for (const auto& iv : confidence_intervals(r, c, 0.0))
        EXPECT_EQ(iv.lower, iv.upper);
    EXPECT_THROW(confidence_intervals(r, c, 1.0), std::invalid_argument);

    // four copies: widths shrink by sqrt(4) up to the n-1 divisor
    const SandwichCovariance c4 = sandwich_cov(repeat(s, 4), square());
    const auto ci4 = confidence_intervals(tn_stein_estimate(repeat(s, 4), square()), c4, 0.95);
    for (std::size_t i = 0; i < ci.size(); ++i)
        EXPECT_NEAR((ci4[i].upper - ci4[i].lower) / (ci[i].upper - ci[i].lower), 0.5, 1e-3);
}

TEST(ConfidenceIntervals, RejectIneligible)
{
    TNResult bad;
    bad.reason = Reason::non_pd_sigma;
    SandwichCovariance c;
    EXPECT_THROW(confidence_intervals(bad, c, 0.95), std::invalid_argument);
}
