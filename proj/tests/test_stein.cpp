#include "smm/sampler.hpp"
#include "smm/stein.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace smm;

namespace {

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

Domain square() { return Domain::rectangle(v2(-1, -1), v2(1, 1)); }
Domain ng_disc() { return Domain::ball(v2(0, 2), 1.0, {Support::reals, Support::positive_halfline}); }
Domain nb_disc() { return Domain::ball(v2(0, 0.5), 0.5, {Support::reals, Support::unit_interval}); }

SampleMatrix from_rows(std::initializer_list<std::pair<double, double>> rows)
{
    SampleMatrix s;
    s.x.resize(static_cast<Eigen::Index>(rows.size()), 2);
    Eigen::Index i = 0;
    for (auto [a, b] : rows) {
        s.x(i, 0) = a;
        s.x(i, 1) = b;
        ++i;
    }
    s.proposals = rows.size();
    return s;
}

/// Stacked empirical TN Stein equations in (mu, vec Sigma), Sigma unconstrained.
Vector tn_equations(const Vector& p, const SampleMatrix& s, const TestFunctionPair& tf, int d)
{
    const Vector mu = p.head(d);
    const Matrix sigma = unvec(p.tail(d * d), d, d);
    return vec(tn_stein_residual(mu, sigma, s, tf).mean);
}

} // namespace

TEST(TestFunctions, TruncatedNormalExamples)
{
    const auto tf = tn_test_functions(square());
    EXPECT_DOUBLE_EQ(tf.f1(v2(0, 0)).value, 1.0);
    EXPECT_EQ(tf.f2(v2(0, 0)).value, v2(0, 0));
    EXPECT_EQ(tf.f1(v2(1, 0.3)).value, 0.0);
    EXPECT_LT(tf.f2(v2(1, 0.3)).value.norm(), 1e-15);
}

TEST(TestFunctions, JacobiansMatchFiniteDifferences)
{
    RngStream rng(1);
    for (const Domain& D : {square(), Domain::union_of_balls({v2(-0.4, 0), v2(0.4, 0.1)}, 0.7)}) {
        const auto tf = tn_test_functions(D);
        for (int i = 0; i < 100; ++i) {
            const Vector x = v2(1.6 * rng.uniform() - 0.8, 1.6 * rng.uniform() - 0.8);
            const Matrix fd = oracle::fd_jacobian([&](const Vector& y) { return tf.f2(y).value; }, x);
            const Matrix J = tf.f2(x).jacobian;
            EXPECT_LE((fd - J).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, J.cwiseAbs().maxCoeff()));
            const Vector g1 = oracle::fd_gradient([&](const Vector& y) { return tf.f1(y).value; }, x);
            EXPECT_LE((g1 - tf.f1(x).grad).norm(), 1e-6 * std::max(1.0, g1.norm()));
        }
    }
}

TEST(TestFunctions, ProductPartialsHaveClosedForm)
{
    const Domain D = ng_disc();
    const auto tf = product_test_functions(D);
    RngStream rng(2);
    for (int i = 0; i < 100; ++i) {
        const Vector x = v2(rng.uniform() - 0.5, 1.5 + rng.uniform());
        const double k = D.kappa(x), s = x[0] + x[1];
        const Vector g = tf.f2(x).grad;
        EXPECT_NEAR(g[0], 2 * (x[0] - 0) * s + k, 1e-14);
        EXPECT_NEAR(g[1], 2 * (x[1] - 2) * s + k, 1e-14);
        const Vector fd = oracle::fd_gradient([&](const Vector& y) { return tf.f2(y).value; }, x);
        EXPECT_LE((fd - g).norm(), 1e-6);
    }
}

TEST(TestFunctions, VanishOnBoundaryKappaSet)
{
    RngStream rng(3);
    for (const Domain& D : {square(), ng_disc(), nb_disc()}) {
        const auto tn = tn_test_functions(D);
        const auto pr = product_test_functions(D);
        for (const auto& p : D.boundary_points(200, rng)) {
            if (!p.on_kappa_set)
                continue;
            EXPECT_LE(std::abs(tn.f1(p.x).value), 1e-9);
            EXPECT_LE(tn.f2(p.x).value.norm(), 1e-9);
            EXPECT_LE(std::abs(pr.f2(p.x).value), 1e-9);
        }
    }
}

TEST(TnStein, UntruncatedHookGivesSampleMoments)
{
    RngStream rng(4);
    Matrix S(3, 3);
    S << 1, 0.3, 0.1, 0.3, 2, -0.4, 0.1, -0.4, 0.5;
    const TNParams t(Vector::LinSpaced(3, -1, 1), S);
    SampleMatrix s;
    s.x.resize(200, 3);
    for (int i = 0; i < 200; ++i)
        s.x.row(i) = sample_mvn(t, rng).transpose();
    const TNResult r = tn_stein_estimate(s, test_hooks::untruncated_test_functions(3));
    ASSERT_TRUE(r.eligible());
    const Vector mean = s.x.colwise().mean().transpose();
    const Matrix C = s.x.rowwise() - mean.transpose();
    const Matrix biased = C.transpose() * C / 200.0;
    EXPECT_LT((r.theta_hat->mu() - mean).norm(), 1e-12);
    EXPECT_LT((r.theta_hat->sigma() - biased).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TnStein, RootPropertyAtUnsymmetrisedSolution)
{
    RngStream rng(5);
    const Domain D = square();
    const auto tf = tn_test_functions(D);
    int eligible = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const auto s = sample_truncated(TNParams(v2(0.2, -0.1), Matrix::Identity(2, 2)), D, 100, rng);
        const TNResult r = tn_stein_estimate(s, D);
        if (!r.eligible())
            continue;
        ++eligible;
        const auto res = tn_stein_residual(r.diagnostics.mu_tilde, r.diagnostics.sigma_tilde, s, tf);
        EXPECT_LT(res.max_relative(), 1e-8);
    }
    EXPECT_GT(eligible, 40);
}

TEST(TnStein, SixPointDatasetMatchesRootFinder)
{
    const auto s = from_rows({{0.1, 0.2}, {-0.5, 0.3}, {0.7, -0.6}, {-0.2, -0.8}, {0.4, 0.9}, {-0.9, 0.05}});
    const auto tf = tn_test_functions(square());
    const TNResult r = tn_stein_estimate(s, square());
    ASSERT_TRUE(r.diagnostics.sigma_tilde.size() == 4);

    Vector start(6);
    start << 0, 0, 1, 0, 0, 1;  // mu = 0, Sigma = I
    const auto [root, ok] = oracle::newton([&](const Vector& p) { return tn_equations(p, s, tf, 2); }, start);
    ASSERT_TRUE(ok);
    EXPECT_LT((root.head(2) - r.diagnostics.mu_tilde).norm(), 1e-9);
    EXPECT_LT((unvec(root.tail(4), 2, 2) - r.diagnostics.sigma_tilde).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(TnStein, SigmaSymmetricAndEligibleImpliesPd)
{
    RngStream rng(6);
    const Domain D = square();
    int non_pd = 0;
    for (int rep = 0; rep < 300; ++rep) {
        const auto s = sample_truncated(TNParams(v2(0, 0), 2.0 * Matrix::Identity(2, 2)), D, 8, rng);
        const TNResult r = tn_stein_estimate(s, D);
        if (r.reason == Reason::singular_system || r.reason == Reason::zero_mean_f1)
            continue;
        const Matrix sig = unvec(r.raw.head(4), 2, 2);
        EXPECT_EQ(sig, sig.transpose());
        EXPECT_EQ(r.eligible(), is_positive_definite(sig));
        non_pd += r.reason == Reason::non_pd_sigma;
        if (r.eligible()) {
            ASSERT_TRUE(r.theta_hat.has_value());
        } else {
            EXPECT_FALSE(r.theta_hat.has_value());
        }
    }
    EXPECT_GT(non_pd, 0);
}

TEST(TnStein, TranslationEquivariance)
{
    RngStream rng(7);
    const auto s = sample_truncated(TNParams(v2(0.3, 0.1), Matrix::Identity(2, 2)), square(), 500, rng);
    const TNResult a = tn_stein_estimate(s, square());
    const Vector t = v2(3.5, -2.25);
    SampleMatrix shifted = s;
    shifted.x.rowwise() += t.transpose();
    const Domain moved = Domain::rectangle(v2(-1, -1) + t, v2(1, 1) + t);
    const TNResult b = tn_stein_estimate(shifted, moved);
    ASSERT_TRUE(a.eligible() && b.eligible());
    EXPECT_LT((b.theta_hat->mu() - a.theta_hat->mu() - t).norm(), 1e-9);
    EXPECT_LT((b.theta_hat->sigma() - a.theta_hat->sigma()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(TnStein, IneligibilityReasons)
{
    // identical points leave no spread for Sigma
    const auto same = from_rows({{0.1, 0.2}, {0.1, 0.2}, {0.1, 0.2}, {0.1, 0.2}});
    const TNResult r = tn_stein_estimate(same, square());
    EXPECT_FALSE(r.eligible());
    EXPECT_FALSE(r.theta_hat.has_value());

    // f2 identically zero: singular moment system
    TestFunctionPair flat = tn_test_functions(square());
    flat.f2 = [](const Vector&) { return VectorEval{Vector::Zero(2), Matrix::Zero(2, 2)}; };
    EXPECT_EQ(tn_stein_estimate(same, flat).reason, Reason::singular_system);

    // f1 with exactly zero mean
    TestFunctionPair tf = tn_test_functions(square());
    tf.f1 = [](const Vector& x) { return ScalarEval{x[0] > 0 ? 1.0 : -1.0, Vector::Zero(2)}; };
    const auto sym = from_rows({{0.5, 0.1}, {-0.5, 0.2}, {0.3, -0.4}, {-0.3, 0.6}});
    EXPECT_EQ(tn_stein_estimate(sym, tf).reason, Reason::zero_mean_f1);

    EXPECT_THROW(tn_stein_estimate(from_rows({{2.0, 0.0}}), square()), std::domain_error);
    EXPECT_THROW(tn_stein_estimate(SampleMatrix{}, square()), std::invalid_argument);
}

TEST(TnStein, ResidualAtTruthIsCentredAndHasPower)
{
    RngStream rng(8);
    const TNParams t0(v2(0, 0), Matrix::Identity(2, 2));
    const auto s = sample_truncated(t0, square(), 1000000, rng);
    const auto tf = tn_test_functions(square());
    EXPECT_LT(stein_residual(t0, s, tf).max_z(), 3.0);
    const TNParams wrong(v2(1, 0), Matrix::Identity(2, 2));
    EXPECT_GT(stein_residual(wrong, s, tf).max_z(), 3.0);
}

TEST(NgStein, EightPointDatasetMatchesRootFinder)
{
    const auto s = from_rows({{0.1, 1.5}, {-0.3, 2.2}, {0.5, 2.6}, {-0.6, 1.9},
                              {0.2, 2.9}, {0.0, 1.2}, {0.7, 2.1}, {-0.1, 2.4}});
    const auto tf = product_test_functions(ng_disc());
    const NGResult r = ng_stein_estimate(s, ng_disc());
    ASSERT_TRUE(r.raw.allFinite());
    const auto [root, ok] = oracle::newton(
        [&](const Vector& p) { return vec(ng_stein_residual(p, s, tf).mean); }, (Vector(4) << 0, 1, 1, 1).finished());
    ASSERT_TRUE(ok);
    EXPECT_LT((root - r.raw).norm() / r.raw.norm(), 1e-9);
}

TEST(NbStein, EightPointDatasetMatchesRootFinder)
{
    const auto s = from_rows({{0.1, 0.5}, {-0.2, 0.3}, {0.3, 0.7}, {-0.35, 0.6},
                              {0.05, 0.15}, {0.0, 0.85}, {0.2, 0.4}, {-0.1, 0.55}});
    const auto tf = product_test_functions(nb_disc());
    const NBResult r = nb_stein_estimate(s, nb_disc());
    ASSERT_TRUE(r.raw.allFinite());
    const auto [root, ok] = oracle::newton(
        [&](const Vector& p) { return vec(nb_stein_residual(p, s, tf).mean); }, (Vector(4) << 0, 0.1, 1, 1).finished());
    ASSERT_TRUE(ok);
    EXPECT_LT((root - r.raw).norm() / r.raw.norm(), 1e-9);
}

TEST(ProductStein, RootPropertyOnSimulatedSamples)
{
    RngStream rng(9);
    const auto tg = product_test_functions(ng_disc());
    const auto tb = product_test_functions(nb_disc());
    for (int rep = 0; rep < 30; ++rep) {
        const auto sg = sample_truncated(NormalGammaParams(0, 1, 1, 1), ng_disc(), 200, rng);
        const NGResult g = ng_stein_estimate(sg, ng_disc());
        if (g.eligible()) {
            EXPECT_LT(stein_residual(*g.theta_hat, sg, tg).max_relative(), 1e-8);
        }
        const auto sb = sample_truncated(NormalBetaParams(0, 1, 1, 1.5), nb_disc(), 200, rng);
        const NBResult b = nb_stein_estimate(sb, nb_disc());
        if (b.eligible()) {
            EXPECT_LT(stein_residual(*b.theta_hat, sb, tb).max_relative(), 1e-8);
        }
    }
}

TEST(ProductStein, ResidualAtTruthIsCentred)
{
    RngStream rng(10);
    const NormalGammaParams g(0, 1, 1, 1);
    const NormalBetaParams b(0, 1, 1, 1.5);
    EXPECT_LT(stein_residual(g, sample_truncated(g, ng_disc(), 1000000, rng), product_test_functions(ng_disc()))
                  .max_z(),
              3.0);
    EXPECT_LT(stein_residual(b, sample_truncated(b, nb_disc(), 1000000, rng), product_test_functions(nb_disc()))
                  .max_z(),
              3.0);
}

TEST(ProductStein, NegativeParameterIsIneligible)
{
    // With a tiny noisy sample some estimate leaves the parameter space.
    RngStream rng(11);
    int negative = 0;
    for (int rep = 0; rep < 200; ++rep) {
        const auto s = sample_truncated(NormalGammaParams(0, 0.1, 0.5, 3), ng_disc(), 10, rng);
        const NGResult r = ng_stein_estimate(s, ng_disc());
        if (r.reason == Reason::negative_scalar_param) {
            ++negative;
            EXPECT_FALSE(r.theta_hat.has_value());
            EXPECT_FALSE(r.raw[1] > 0 && r.raw[2] > 0 && r.raw[3] > 0);
        }
    }
    EXPECT_GT(negative, 0);
}

TEST(ProductStein, RejectsRowsOutsideSupport)
{
    EXPECT_THROW(ng_stein_estimate(from_rows({{0.0, 5.0}}), ng_disc()), std::domain_error);
    EXPECT_THROW(nb_stein_estimate(from_rows({{0.0, 1.0}}), nb_disc()), std::domain_error);
}
