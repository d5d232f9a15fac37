// Stein's method of moments for truncated models.
//
// For the truncated normal the density-approach operator is
//     A f(x) = grad f(x)^T - Sigma^{-1} (x - mu) f(x)^T,
// and for the two product models the tau-weighted operator
//     A f(x) = grad(p(x) tau(x) f(x)) / p(x)
// with tau(x) = x2 (gamma) or x2 (1 - x2) (beta). Both have mean zero under
// the model whenever f vanishes on the kappa zero set, so with the test
// functions f1 = kappa, f2 = x kappa (resp. kappa (x1 + x2)) the empirical
// equations can be solved for the parameters in closed form.

#pragma once

#include "smm/domain.hpp"
#include "smm/matkit.hpp"
#include "smm/model.hpp"
#include "smm/sampler.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

namespace smm {

enum class Reason {
    ok,
    non_pd_sigma,
    singular_system,
    zero_mean_f1,
    negative_scalar_param,
    optimizer_failure,
};

inline const char* to_string(Reason r)
{
    switch (r) {
    case Reason::ok: return "ok";
    case Reason::non_pd_sigma: return "non_pd_sigma";
    case Reason::singular_system: return "singular_system";
    case Reason::zero_mean_f1: return "zero_mean_f1";
    case Reason::negative_scalar_param: return "negative_scalar_param";
    case Reason::optimizer_failure: return "optimizer_failure";
    }
    return "?";
}

struct Diagnostics {
    double rcond = std::numeric_limits<double>::quiet_NaN();  // linear system condition
    double det_location = std::numeric_limits<double>::quiet_NaN();  // D1 / M-denominator
    double det_shape = std::numeric_limits<double>::quiet_NaN();     // D2 / O-denominator
    double mean_f1 = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    double objective = std::numeric_limits<double>::quiet_NaN();
    std::string note;
    // Truncated normal only: the unsymmetrised covariance solution and the
    // location that solves the f1 equation together with it.
    Matrix sigma_tilde;
    Vector mu_tilde;
};

/// Estimate plus eligibility. `raw` always holds the computed numbers, also for
/// ineligible runs: (vec Sigma, mu) for the truncated normal, (mu, sigma2,
/// alpha, beta) for the product models. `theta_hat` is set iff eligible.
template <class Params>
struct EstimationResult {
    std::optional<Params> theta_hat;
    Vector raw;
    Reason reason = Reason::ok;
    Diagnostics diagnostics;

    bool eligible() const { return reason == Reason::ok; }
};

using TNResult = EstimationResult<TNParams>;
using NGResult = EstimationResult<NormalGammaParams>;
using NBResult = EstimationResult<NormalBetaParams>;

// --- test functions ---------------------------------------------------------

struct ScalarEval {
    double value;
    Vector grad;
};

struct VectorEval {
    Vector value;
    Matrix jacobian;  // (i, j) = d f_i / d x_j
};

using ScalarTestFn = std::function<ScalarEval(const Vector&)>;
using VectorTestFn = std::function<VectorEval(const Vector&)>;

/// Scalar f1 and vector f2 for the truncated normal.
struct TestFunctionPair {
    ScalarTestFn f1;
    VectorTestFn f2;
};

/// Two scalar test functions for the product models.
struct ProductTestPair {
    ScalarTestFn f1;
    ScalarTestFn f2;
};

/// f1 = kappa, f2 = x kappa, with Jacobian kappa I + x grad(kappa)^T.
inline TestFunctionPair tn_test_functions(const Domain& domain)
{
    TestFunctionPair p;
    p.f1 = [domain](const Vector& x) { return ScalarEval{domain.kappa(x), domain.grad_kappa(x)}; };
    p.f2 = [domain](const Vector& x) {
        const double k = domain.kappa(x);
        const Vector g = domain.grad_kappa(x);
        Matrix J = x * g.transpose();
        J.diagonal().array() += k;
        return VectorEval{x * k, J};
    };
    return p;
}

/// f1 = kappa, f2 = kappa (x1 + x2).
inline ProductTestPair product_test_functions(const Domain& domain)
{
    if (domain.dim() != 2)
        throw std::invalid_argument("product test functions need a two-dimensional domain");
    ProductTestPair p;
    p.f1 = [domain](const Vector& x) { return ScalarEval{domain.kappa(x), domain.grad_kappa(x)}; };
    p.f2 = [domain](const Vector& x) {
        const double k = domain.kappa(x);
        const double s = x[0] + x[1];
        Vector g = domain.grad_kappa(x) * s;
        g.array() += k;
        return ScalarEval{k * s, g};
    };
    return p;
}

namespace test_hooks {
/// f1 = 1, f2 = x: turns the TN estimator into the untruncated MLE.
inline TestFunctionPair untruncated_test_functions(int d)
{
    TestFunctionPair p;
    p.f1 = [d](const Vector&) { return ScalarEval{1.0, Vector::Zero(d)}; };
    p.f2 = [d](const Vector& x) { return VectorEval{x, Matrix::Identity(d, d)}; };
    return p;
}
} // namespace test_hooks

// --- truncated normal moments -------------------------------------------------

/// Sample means entering the truncated-normal estimator:
///   Z1 = mean(X f2^T), Z2 = mean(grad f2)^T, z1 = mean(X f1),
///   z2 = mean(f2),     z3 = mean(grad f1),   z  = mean(f1).
/// Stacked order: (vec Z1, vec Z2, z1, z2, z3, z), length 2d^2 + 3d + 1.
struct MomentVector {
    Matrix Z1, Z2;
    Vector z1, z2, z3;
    double z = 0.0;

    int dim() const { return static_cast<int>(z1.size()); }

    static Eigen::Index stacked_size(int d) { return 2 * d * d + 3 * d + 1; }

    Vector stack() const
    {
        const int d = dim();
        Vector y(stacked_size(d));
        y << vec(Z1), vec(Z2), z1, z2, z3, z;
        return y;
    }

    static MomentVector unstack(const Vector& y, int d)
    {
        if (y.size() != stacked_size(d))
            throw std::invalid_argument("MomentVector: stacked length does not match dimension");
        MomentVector m;
        Eigen::Index o = 0;
        m.Z1 = unvec(y.segment(o, d * d), d, d);
        o += d * d;
        m.Z2 = unvec(y.segment(o, d * d), d, d);
        o += d * d;
        m.z1 = y.segment(o, d);
        o += d;
        m.z2 = y.segment(o, d);
        o += d;
        m.z3 = y.segment(o, d);
        o += d;
        m.z = y[o];
        return m;
    }
};

/// Per-observation contribution Y_i (stacked layout of MomentVector).
inline Vector moment_contribution(const Vector& x, const TestFunctionPair& tf)
{
    const int d = static_cast<int>(x.size());
    const ScalarEval a = tf.f1(x);
    const VectorEval b = tf.f2(x);
    Vector y(MomentVector::stacked_size(d));
    const Matrix xf2 = x * b.value.transpose();
    const Matrix jt = b.jacobian.transpose();
    y << vec(xf2), vec(jt), x * a.value, b.value, a.grad, a.value;
    return y;
}

/// n x (2d^2+3d+1) matrix of per-observation moment contributions.
inline Matrix moment_contributions(const SampleMatrix& s, const TestFunctionPair& tf)
{
    const int d = static_cast<int>(s.dim());
    Matrix Y(s.n(), MomentVector::stacked_size(d));
    for (Eigen::Index i = 0; i < s.n(); ++i)
        Y.row(i) = moment_contribution(s.row(i), tf).transpose();
    return Y;
}

inline MomentVector empirical_moments(const SampleMatrix& s, const TestFunctionPair& tf,
                                      double* mean_abs_f1 = nullptr)
{
    const int d = static_cast<int>(s.dim());
    Vector acc = Vector::Zero(MomentVector::stacked_size(d));
    double abs_f1 = 0.0;
    for (Eigen::Index i = 0; i < s.n(); ++i) {
        const Vector y = moment_contribution(s.row(i), tf);
        acc += y;
        abs_f1 += std::abs(y[y.size() - 1]);
    }
    const double n = static_cast<double>(s.n());
    if (mean_abs_f1)
        *mean_abs_f1 = abs_f1 / n;
    return MomentVector::unstack(acc / n, d);
}

/// |mean f1| below this fraction of mean |f1| counts as a zero mean.
inline constexpr double kZeroMeanF1 = 1e-10;

inline TNResult tn_stein_estimate(const SampleMatrix& sample, const TestFunctionPair& tf)
{
    if (sample.n() < 1)
        throw std::invalid_argument("tn_stein_estimate: empty sample");
    const int d = static_cast<int>(sample.dim());
    double mean_abs_f1 = 0.0;
    const MomentVector m = empirical_moments(sample, tf, &mean_abs_f1);

    TNResult r;
    r.raw = Vector::Constant(d * d + d, std::numeric_limits<double>::quiet_NaN());
    r.diagnostics.mean_f1 = m.z;
    if (!(std::abs(m.z) > kZeroMeanF1 * mean_abs_f1)) {
        r.reason = Reason::zero_mean_f1;
        return r;
    }

    const Matrix lhs = m.Z1 * m.z - m.z1 * m.z2.transpose();
    const Matrix rhs = m.Z2 * m.z - m.z3 * m.z2.transpose();
    const LinearSolve sol = solve_right(lhs, rhs);
    r.diagnostics.rcond = sol.rcond;
    if (sol.singular) {
        r.reason = Reason::singular_system;
        return r;
    }

    const Matrix& sigma_tilde = sol.x;
    const Matrix sigma_hat = symmetrize(sigma_tilde);
    const Vector mu_hat = (m.z1 - sigma_hat * m.z3) / m.z;
    r.diagnostics.sigma_tilde = sigma_tilde;
    r.diagnostics.mu_tilde = (m.z1 - sigma_tilde * m.z3) / m.z;
    r.raw << vec(sigma_hat), mu_hat;

    if (!r.raw.allFinite() || !is_positive_definite(sigma_hat)) {
        r.reason = Reason::non_pd_sigma;
        return r;
    }
    r.theta_hat.emplace(mu_hat, sigma_hat);
    return r;
}

namespace detail {
inline void require_members(const SampleMatrix& s, const Domain& domain, const char* who)
{
    if (s.n() < 1)
        throw std::invalid_argument(std::string(who) + ": empty sample");
    if (s.dim() != domain.dim())
        throw std::invalid_argument(std::string(who) + ": sample and domain dimensions differ");
    for (Eigen::Index i = 0; i < s.n(); ++i)
        if (!domain.contains(s.row(i)))
            throw std::domain_error(std::string(who) + ": row " + std::to_string(i) +
                                    " lies outside the domain");
}

/// Near-cancellation test for a 2x2 determinant a*b - c*e.
inline bool degenerate_det(double det, double ab, double ce)
{
    return !std::isfinite(det) || std::abs(det) <= 1e-12 * (std::abs(ab) + std::abs(ce));
}
} // namespace detail

inline TNResult tn_stein_estimate(const SampleMatrix& sample, const Domain& domain)
{
    detail::require_members(sample, domain, "tn_stein_estimate");
    return tn_stein_estimate(sample, tn_test_functions(domain));
}

// --- product models -----------------------------------------------------------

namespace detail {

template <class Params>
EstimationResult<Params> finish_product(double mu, double sigma2, double alpha, double beta,
                                        bool singular, Diagnostics diag)
{
    EstimationResult<Params> r;
    r.raw = (Vector(4) << mu, sigma2, alpha, beta).finished();
    r.diagnostics = std::move(diag);
    if (singular) {
        r.reason = Reason::singular_system;
        return r;
    }
    if (!r.raw.allFinite()) {
        r.reason = Reason::singular_system;
        return r;
    }
    if (!(sigma2 > 0.0 && alpha > 0.0 && beta > 0.0)) {
        r.reason = Reason::negative_scalar_param;
        return r;
    }
    r.theta_hat.emplace(mu, sigma2, alpha, beta);
    return r;
}

} // namespace detail

/// Normal x gamma estimator (tau = x2).
inline NGResult ng_stein_estimate(const SampleMatrix& sample, const ProductTestPair& tf)
{
    // means of: x2 f, x2 x1 f, x2 d1 f, x2 d2 f, f   for f = f1, f2
    double a[2] = {0, 0}, b[2] = {0, 0}, c[2] = {0, 0}, e[2] = {0, 0}, p[2] = {0, 0};
    for (Eigen::Index i = 0; i < sample.n(); ++i) {
        const Vector x = sample.row(i);
        const ScalarEval fs[2] = {tf.f1(x), tf.f2(x)};
        for (int j = 0; j < 2; ++j) {
            a[j] += x[1] * fs[j].value;
            b[j] += x[1] * x[0] * fs[j].value;
            c[j] += x[1] * fs[j].grad[0];
            e[j] += x[1] * fs[j].grad[1];
            p[j] += fs[j].value;
        }
    }
    const double n = static_cast<double>(sample.n());
    for (int j = 0; j < 2; ++j) {
        a[j] /= n; b[j] /= n; c[j] /= n; e[j] /= n; p[j] /= n;
    }

    Diagnostics diag;
    diag.mean_f1 = p[0];
    const double D1 = a[0] * c[1] - c[0] * a[1];
    const double D2 = a[0] * p[1] - p[0] * a[1];
    diag.det_location = D1;
    diag.det_shape = D2;
    const bool singular = detail::degenerate_det(D1, a[0] * c[1], c[0] * a[1]) ||
                          detail::degenerate_det(D2, a[0] * p[1], p[0] * a[1]);

    const double mu = (c[1] * b[0] - c[0] * b[1]) / D1;
    const double sigma2 = (a[0] * b[1] - a[1] * b[0]) / D1;
    const double alpha = (a[1] * e[0] - a[0] * e[1]) / D2;
    const double beta = (p[1] * e[0] - p[0] * e[1]) / D2;
    return detail::finish_product<NormalGammaParams>(mu, sigma2, alpha, beta, singular, diag);
}

inline NGResult ng_stein_estimate(const SampleMatrix& sample, const Domain& domain)
{
    detail::require_members(sample, domain, "ng_stein_estimate");
    for (Eigen::Index i = 0; i < sample.n(); ++i)
        if (!(sample.x(i, 1) > 0.0))
            throw std::domain_error("ng_stein_estimate: x2 must be positive");
    return ng_stein_estimate(sample, product_test_functions(domain));
}

/// Normal x beta estimator (tau = x2 (1 - x2)).
inline NBResult nb_stein_estimate(const SampleMatrix& sample, const ProductTestPair& tf)
{
    double M[7] = {0, 0, 0, 0, 0, 0, 0};
    double O[7] = {0, 0, 0, 0, 0, 0, 0};
    for (Eigen::Index i = 0; i < sample.n(); ++i) {
        const Vector x = sample.row(i);
        const ScalarEval f1 = tf.f1(x);
        const ScalarEval f2 = tf.f2(x);
        const double w = (1.0 - x[1]) * x[1];
        M[1] += w * f2.grad[0];
        M[2] += w * x[0] * f1.value;
        M[3] += w * f1.grad[0];
        M[4] += w * x[0] * f2.value;
        M[5] += w * f1.value;
        M[6] += w * f2.value;
        O[1] += x[1] * f1.value;
        O[2] += w * f2.grad[1];
        O[3] += x[1] * f2.value;
        O[4] += w * f1.grad[1];
        O[5] += (x[1] - 1.0) * f2.value;
        O[6] += (x[1] - 1.0) * f1.value;
    }
    const double n = static_cast<double>(sample.n());
    for (int k = 1; k <= 6; ++k) {
        M[k] /= n;
        O[k] /= n;
    }

    Diagnostics diag;
    diag.mean_f1 = O[6] + O[1];  // mean of f1
    const double DM = M[5] * M[1] - M[3] * M[6];
    const double DO = O[5] * O[1] - O[3] * O[6];
    diag.det_location = DM;
    diag.det_shape = DO;
    const bool singular = detail::degenerate_det(DM, M[5] * M[1], M[3] * M[6]) ||
                          detail::degenerate_det(DO, O[5] * O[1], O[3] * O[6]);

    const double mu = (M[1] * M[2] - M[3] * M[4]) / DM;
    const double sigma2 = (M[5] * M[4] - M[6] * M[2]) / DM;
    const double alpha = (O[1] * O[2] - O[3] * O[4]) / DO;
    const double beta = (O[5] * O[4] - O[6] * O[2]) / DO;
    return detail::finish_product<NormalBetaParams>(mu, sigma2, alpha, beta, singular, diag);
}

inline NBResult nb_stein_estimate(const SampleMatrix& sample, const Domain& domain)
{
    detail::require_members(sample, domain, "nb_stein_estimate");
    for (Eigen::Index i = 0; i < sample.n(); ++i)
        if (!(sample.x(i, 1) > 0.0 && sample.x(i, 1) < 1.0))
            throw std::domain_error("nb_stein_estimate: x2 must lie in (0, 1)");
    return nb_stein_estimate(sample, product_test_functions(domain));
}

// --- Stein residuals ------------------------------------------------------------

/// Sample mean of the Stein operator applied to the test functions, with the
/// standard error of each entry and a magnitude scale (mean of the absolute
/// values of the operator's two terms) for relative comparisons.
struct ResidualBlock {
    Matrix mean;
    Matrix std_error;
    Matrix scale;

    /// max |mean| / scale over entries.
    double max_relative() const
    {
        return (mean.array().abs() / scale.array().max(std::numeric_limits<double>::min())).maxCoeff();
    }
    /// max |mean| / std_error over entries.
    double max_z() const
    {
        return (mean.array().abs() / std_error.array().max(std::numeric_limits<double>::min())).maxCoeff();
    }
};

namespace detail {

/// Accumulates per-observation operator values (two terms each) into a block.
class ResidualAccumulator {
public:
    ResidualAccumulator(Eigen::Index rows, Eigen::Index cols)
        : sum_(Matrix::Zero(rows, cols)), sum_sq_(Matrix::Zero(rows, cols)),
          abs_terms_(Matrix::Zero(rows, cols))
    {}

    void add(const Matrix& derivative_term, const Matrix& score_term)
    {
        const Matrix v = derivative_term + score_term;
        sum_ += v;
        sum_sq_ += v.cwiseProduct(v);
        abs_terms_ += derivative_term.cwiseAbs() + score_term.cwiseAbs();
        ++n_;
    }

    ResidualBlock finish() const
    {
        const double n = static_cast<double>(n_);
        ResidualBlock b;
        b.mean = sum_ / n;
        const Matrix var = (sum_sq_ / n - b.mean.cwiseProduct(b.mean)).cwiseMax(0.0) * (n / std::max(n - 1.0, 1.0));
        b.std_error = (var / n).cwiseSqrt();
        b.scale = abs_terms_ / n;
        return b;
    }

private:
    Matrix sum_, sum_sq_, abs_terms_;
    std::size_t n_ = 0;
};

} // namespace detail

/// Truncated normal: d x (d+1) block, column 0 for f1 and columns 1..d for the
/// components of f2. `sigma` may be any invertible matrix (the unsymmetrised
/// solution is accepted).
inline ResidualBlock tn_stein_residual(const Vector& mu, const Matrix& sigma, const SampleMatrix& s,
                                       const TestFunctionPair& tf)
{
    const int d = static_cast<int>(mu.size());
    if (sigma.rows() != d || sigma.cols() != d || s.dim() != d)
        throw std::invalid_argument("tn_stein_residual: dimension mismatch");
    Eigen::PartialPivLU<Matrix> lu(sigma);
    detail::ResidualAccumulator acc(d, d + 1);
    Matrix dterm(d, d + 1), sterm(d, d + 1);
    for (Eigen::Index i = 0; i < s.n(); ++i) {
        const Vector x = s.row(i);
        const ScalarEval a = tf.f1(x);
        const VectorEval b = tf.f2(x);
        const Vector q = -lu.solve(Vector(x - mu));
        dterm.col(0) = a.grad;
        dterm.rightCols(d) = b.jacobian.transpose();
        sterm.col(0) = q * a.value;
        sterm.rightCols(d) = q * b.value.transpose();
        acc.add(dterm, sterm);
    }
    return acc.finish();
}

inline ResidualBlock stein_residual(const TNParams& theta, const SampleMatrix& s, const TestFunctionPair& tf)
{
    return tn_stein_residual(theta.mu(), theta.sigma(), s, tf);
}

/// Normal x gamma: 2 x 2 block, column j holds A f_j (two components).
/// theta = (mu, sigma2, alpha, beta), unconstrained.
inline ResidualBlock ng_stein_residual(const Vector& theta, const SampleMatrix& s, const ProductTestPair& tf)
{
    const double mu = theta[0], s2 = theta[1], al = theta[2], be = theta[3];
    detail::ResidualAccumulator acc(2, 2);
    Matrix dterm(2, 2), sterm(2, 2);
    for (Eigen::Index i = 0; i < s.n(); ++i) {
        const Vector x = s.row(i);
        const ScalarEval fs[2] = {tf.f1(x), tf.f2(x)};
        for (int j = 0; j < 2; ++j) {
            dterm(0, j) = x[1] * fs[j].grad[0];
            dterm(1, j) = x[1] * fs[j].grad[1];
            sterm(0, j) = x[1] * (mu - x[0]) / s2 * fs[j].value;
            sterm(1, j) = (al - be * x[1]) * fs[j].value;
        }
        acc.add(dterm, sterm);
    }
    return acc.finish();
}

/// Normal x beta: 2 x 2 block as for ng_stein_residual.
inline ResidualBlock nb_stein_residual(const Vector& theta, const SampleMatrix& s, const ProductTestPair& tf)
{
    const double mu = theta[0], s2 = theta[1], al = theta[2], be = theta[3];
    detail::ResidualAccumulator acc(2, 2);
    Matrix dterm(2, 2), sterm(2, 2);
    for (Eigen::Index i = 0; i < s.n(); ++i) {
        const Vector x = s.row(i);
        const double w = x[1] * (1.0 - x[1]);
        const ScalarEval fs[2] = {tf.f1(x), tf.f2(x)};
        for (int j = 0; j < 2; ++j) {
            dterm(0, j) = w * fs[j].grad[0];
            dterm(1, j) = w * fs[j].grad[1];
            sterm(0, j) = w * (mu - x[0]) / s2 * fs[j].value;
            sterm(1, j) = (al - (al + be) * x[1]) * fs[j].value;
        }
        acc.add(dterm, sterm);
    }
    return acc.finish();
}

inline ResidualBlock stein_residual(const NormalGammaParams& t, const SampleMatrix& s, const ProductTestPair& tf)
{
    return ng_stein_residual(t.as_vector(), s, tf);
}

inline ResidualBlock stein_residual(const NormalBetaParams& t, const SampleMatrix& s, const ProductTestPair& tf)
{
    return nb_stein_residual(t.as_vector(), s, tf);
}

} // namespace smm
