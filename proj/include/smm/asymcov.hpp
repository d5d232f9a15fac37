// Plug-in asymptotic covariance of the truncated-normal Stein estimator.
//
// With Z = (Z1, Z2, z1, z2, z3, z) the sample moments (see MomentVector),
//     G1(Z) = (Z1 z - z1 z2^T)(Z2 z - z3 z2^T)^{-1},   G2(Z) = (z1 - G1 z3) / z,
// the estimator is (sym(G1), G2) evaluated at the sample moments, and by the
// delta method
//     sqrt(n) (theta_hat - theta0) -> N(0, J Var[Y1] J^T),  J = d(sym G1, G2)/dZ.
// Rows of J follow (vec Sigma, mu); columns follow the stacked moment vector.

#pragma once

#include "smm/matkit.hpp"
#include "smm/stein.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace smm {

struct GValue {
    Matrix G1;  // d x d, unsymmetrised
    Vector G2;  // d
};

namespace detail {
struct GParts {
    Matrix M;       // Z2 z - z3 z2^T
    Matrix Minv;
    GValue g;
};

inline GParts g_parts(const MomentVector& Z)
{
    if (!(Z.z != 0.0) || !std::isfinite(Z.z))
        throw std::domain_error("eval_G: mean of f1 is zero");
    GParts p;
    p.M = Z.Z2 * Z.z - Z.z3 * Z.z2.transpose();
    const Matrix A = Z.Z1 * Z.z - Z.z1 * Z.z2.transpose();
    const int d = Z.dim();
    const LinearSolve inv = solve_linear(p.M, Matrix::Identity(d, d));
    if (inv.singular)
        throw std::domain_error("eval_G: moment system is singular");
    p.Minv = inv.x;
    p.g.G1 = A * p.Minv;
    p.g.G2 = (Z.z1 - p.g.G1 * Z.z3) / Z.z;
    return p;
}
} // namespace detail

inline GValue eval_G(const MomentVector& Z)
{
    return detail::g_parts(Z).g;
}

/// Stacked (vec sym(G1), G2) -- the quantity whose Jacobian jacobian_G returns.
inline Vector eval_G_tilde(const MomentVector& Z)
{
    const GValue g = eval_G(Z);
    Vector out(g.G1.size() + g.G2.size());
    out << vec(symmetrize(g.G1)), g.G2;
    return out;
}

/// Analytic Jacobian of (vec sym(G1), G2) with respect to the stacked moments,
/// (d^2 + d) x (2d^2 + 3d + 1).
inline Matrix jacobian_G(const MomentVector& Z)
{
    const int d = Z.dim();
    const detail::GParts p = detail::g_parts(Z);
    const Matrix& G1 = p.g.G1;
    const Matrix MinvT = p.Minv.transpose();
    const Matrix I = Matrix::Identity(d, d);
    const double z = Z.z;

    // d vec(G1) = (M^{-T} (x) I) d vec(A) - (M^{-T} (x) G1) d vec(M)
    const Matrix dZ1 = z * kron(MinvT, I);
    const Matrix dZ2 = -z * kron(MinvT, G1);
    const Vector MinvT_z2 = MinvT * Z.z2;
    const Matrix dz1 = -kron(MinvT_z2, I);
    const Matrix dz2 = -kron(MinvT, Matrix(Z.z1 - G1 * Z.z3));
    const Matrix dz3 = kron(MinvT_z2, G1);
    const Vector dz = kron(MinvT, I) * vec(Z.Z1) - kron(MinvT, G1) * vec(Z.Z2);

    const Eigen::Index cols = MomentVector::stacked_size(d);
    Matrix dG1(d * d, cols);
    dG1 << dZ1, dZ2, dz1, dz2, dz3, dz;

    // G2 = (z1 - G1 z3)/z:  d G2 = -(1/z)(z3^T (x) I) d vec(G1) + direct terms
    const Matrix chain = -(1.0 / z) * kron(Z.z3.transpose(), I);
    Matrix dG2 = chain * dG1;
    const Eigen::Index o_z1 = 2 * d * d, o_z3 = 2 * d * d + 2 * d, o_z = cols - 1;
    dG2.block(0, o_z1, d, d) += I / z;
    dG2.block(0, o_z3, d, d) -= G1 / z;
    dG2.col(o_z) -= (Z.z1 - G1 * Z.z3) / (z * z);

    Matrix J(d * d + d, cols);
    J.topRows(d * d) = 0.5 * (dG1 + commutation_matrix(d, d) * dG1);
    J.bottomRows(d) = dG2;
    return J;
}

struct SandwichCovariance {
    Matrix cov;       // (d^2+d) x (d^2+d), asymptotic covariance of sqrt(n)(theta_hat - theta0)
    Matrix jacobian;  // (d^2+d) x (2d^2+3d+1)
    Matrix var_y;     // covariance of one moment contribution
    Vector std_errors;  // sqrt(diag(cov) / n), ordered (vec Sigma, mu)
    Eigen::Index n = 0;
};

/// Unbiased sample covariance of the rows of Y.
inline Matrix sample_covariance(const Matrix& Y)
{
    if (Y.rows() < 2)
        throw std::invalid_argument("sample_covariance: need at least two rows");
    const Eigen::RowVectorXd mean = Y.colwise().mean();
    const Matrix C = Y.rowwise() - mean;
    return (C.transpose() * C) / static_cast<double>(Y.rows() - 1);
}

inline SandwichCovariance sandwich_cov(const SampleMatrix& sample, const TestFunctionPair& tf)
{
    if (sample.n() < 2)
        throw std::invalid_argument("sandwich_cov: need at least two observations");
    const int d = static_cast<int>(sample.dim());
    const Matrix Y = moment_contributions(sample, tf);
    const Vector ybar = Y.colwise().mean().transpose();
    SandwichCovariance out;
    out.n = sample.n();
    out.var_y = sample_covariance(Y);
    out.jacobian = jacobian_G(MomentVector::unstack(ybar, d));
    out.cov = symmetrize(out.jacobian * out.var_y * out.jacobian.transpose());
    out.std_errors = (out.cov.diagonal().cwiseMax(0.0) / static_cast<double>(out.n)).cwiseSqrt();
    return out;
}

inline SandwichCovariance sandwich_cov(const SampleMatrix& sample, const Domain& domain)
{
    detail::require_members(sample, domain, "sandwich_cov");
    return sandwich_cov(sample, tn_test_functions(domain));
}

/// Standard normal quantile (Acklam's rational approximation, refined by one
/// Halley step against erfc).
inline double normal_quantile(double p)
{
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("normal_quantile: p must lie in (0, 1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                               1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                               6.680131188771972e+01, -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                               -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
    static const double e[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                               3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((e[0] * q + e[1]) * q + e[2]) * q + e[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        const double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((e[0] * q + e[1]) * q + e[2]) * q + e[3]) * q + 1.0);
    }
    const double err = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
    const double u = err * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

struct Interval {
    double lower, upper;
};

/// theta_i +- q_{(1+level)/2} se_i over (vec Sigma, mu). level = 0 gives points.
inline std::vector<Interval> confidence_intervals(const TNResult& result, const SandwichCovariance& cov,
                                                  double level)
{
    if (!result.eligible())
        throw std::invalid_argument("confidence_intervals: estimate is not eligible");
    if (!(level >= 0.0 && level < 1.0))
        throw std::invalid_argument("confidence_intervals: level must lie in [0, 1)");
    if (cov.std_errors.size() != result.raw.size())
        throw std::invalid_argument("confidence_intervals: covariance does not match the estimate");
    const double q = level == 0.0 ? 0.0 : normal_quantile(0.5 * (1.0 + level));
    std::vector<Interval> out;
    for (Eigen::Index i = 0; i < result.raw.size(); ++i)
        out.push_back({result.raw[i] - q * cov.std_errors[i], result.raw[i] + q * cov.std_errors[i]});
    return out;
}

} // namespace smm
