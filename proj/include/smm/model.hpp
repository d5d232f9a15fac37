// Parameter types, unnormalised log-densities and score functions for the
// three model families: truncated multivariate normal, normal x gamma and
// normal x beta. Normalising constants never appear here.

#pragma once

#include "smm/matkit.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace smm {

enum class ModelKind { truncated_normal, normal_gamma, normal_beta };

inline const char* to_string(ModelKind m)
{
    switch (m) {
    case ModelKind::truncated_normal: return "tn";
    case ModelKind::normal_gamma: return "normal-gamma";
    case ModelKind::normal_beta: return "normal-beta";
    }
    return "?";
}

inline ModelKind parse_model(const std::string& s)
{
    if (s == "tn" || s == "truncated_normal" || s == "truncated-normal")
        return ModelKind::truncated_normal;
    if (s == "normal-gamma" || s == "normal_gamma" || s == "ng")
        return ModelKind::normal_gamma;
    if (s == "normal-beta" || s == "normal_beta" || s == "nb")
        return ModelKind::normal_beta;
    throw std::invalid_argument("unknown model '" + s + "'");
}

/// (mu, Sigma) with Sigma exactly symmetric and positive definite.
class TNParams {
public:
    TNParams(Vector mu, Matrix sigma) : mu_(std::move(mu)), sigma_(std::move(sigma))
    {
        if (mu_.size() < 1 || !mu_.allFinite())
            throw std::invalid_argument("TNParams: mu must be finite and non-empty");
        if (sigma_.rows() != mu_.size() || sigma_.cols() != mu_.size())
            throw std::invalid_argument("TNParams: sigma must be d x d");
        if (!(sigma_ - sigma_.transpose()).isZero(0.0))
            throw std::invalid_argument("TNParams: sigma must be symmetric");
        if (!is_positive_definite(sigma_))
            throw std::invalid_argument("TNParams: sigma must be positive definite");
        llt_.compute(sigma_);
    }

    int dim() const { return static_cast<int>(mu_.size()); }
    const Vector& mu() const { return mu_; }
    const Matrix& sigma() const { return sigma_; }
    /// Lower Cholesky factor of sigma.
    Matrix cholesky() const { return llt_.matrixL(); }
    Vector precision_times(const Vector& v) const { return llt_.solve(v); }
    Matrix precision() const { return llt_.solve(Matrix::Identity(dim(), dim())); }

private:
    Vector mu_;
    Matrix sigma_;
    Eigen::LLT<Matrix> llt_;
};

namespace detail {
inline void check_scalar_params(const char* who, double mu, double sigma2, double alpha, double beta)
{
    if (!std::isfinite(mu))
        throw std::invalid_argument(std::string(who) + ": mu must be finite");
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
        throw std::invalid_argument(std::string(who) + ": sigma2 must be positive");
    if (!(alpha > 0.0) || !std::isfinite(alpha))
        throw std::invalid_argument(std::string(who) + ": alpha must be positive");
    if (!(beta > 0.0) || !std::isfinite(beta))
        throw std::invalid_argument(std::string(who) + ": beta must be positive");
}
} // namespace detail

/// Normal(mu, sigma2) x Gamma(alpha, rate beta).
struct NormalGammaParams {
    double mu, sigma2, alpha, beta;

    NormalGammaParams(double mu_, double sigma2_, double alpha_, double beta_)
        : mu(mu_), sigma2(sigma2_), alpha(alpha_), beta(beta_)
    {
        detail::check_scalar_params("NormalGammaParams", mu, sigma2, alpha, beta);
    }
    Vector as_vector() const { return (Vector(4) << mu, sigma2, alpha, beta).finished(); }
};

/// Normal(mu, sigma2) x Beta(alpha, beta).
struct NormalBetaParams {
    double mu, sigma2, alpha, beta;

    NormalBetaParams(double mu_, double sigma2_, double alpha_, double beta_)
        : mu(mu_), sigma2(sigma2_), alpha(alpha_), beta(beta_)
    {
        detail::check_scalar_params("NormalBetaParams", mu, sigma2, alpha, beta);
    }
    Vector as_vector() const { return (Vector(4) << mu, sigma2, alpha, beta).finished(); }
};

// --- truncated normal -------------------------------------------------------

inline double tn_log_kernel(const TNParams& theta, const Vector& x)
{
    const Vector r = x - theta.mu();
    return -0.5 * r.dot(theta.precision_times(r));
}

inline Vector tn_score(const TNParams& theta, const Vector& x)
{
    return -theta.precision_times(x - theta.mu());
}

// --- normal x gamma ---------------------------------------------------------

inline void require_positive_x2(const Vector& x)
{
    if (x.size() != 2)
        throw std::invalid_argument("product models are two-dimensional");
    if (!(x[1] > 0.0))
        throw std::domain_error("x2 must be positive");
}

inline double ng_log_kernel(const NormalGammaParams& t, const Vector& x)
{
    require_positive_x2(x);
    const double r = x[0] - t.mu;
    return -r * r / (2.0 * t.sigma2) + (t.alpha - 1.0) * std::log(x[1]) - t.beta * x[1];
}

inline Vector ng_score(const NormalGammaParams& t, const Vector& x)
{
    require_positive_x2(x);
    Vector s(2);
    s[0] = (t.mu - x[0]) / t.sigma2;
    s[1] = (t.alpha - 1.0) / x[1] - t.beta;
    return s;
}

// --- normal x beta ----------------------------------------------------------

inline void require_unit_x2(const Vector& x)
{
    if (x.size() != 2)
        throw std::invalid_argument("product models are two-dimensional");
    if (!(x[1] > 0.0 && x[1] < 1.0))
        throw std::domain_error("x2 must lie in (0, 1)");
}

inline double nb_log_kernel(const NormalBetaParams& t, const Vector& x)
{
    require_unit_x2(x);
    const double r = x[0] - t.mu;
    return -r * r / (2.0 * t.sigma2) + (t.alpha - 1.0) * std::log(x[1]) +
           (t.beta - 1.0) * std::log1p(-x[1]);
}

inline Vector nb_score(const NormalBetaParams& t, const Vector& x)
{
    require_unit_x2(x);
    Vector s(2);
    s[0] = (t.mu - x[0]) / t.sigma2;
    s[1] = (t.alpha - 1.0) / x[1] - (t.beta - 1.0) / (1.0 - x[1]);
    return s;
}

} // namespace smm
