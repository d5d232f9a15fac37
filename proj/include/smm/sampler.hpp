// Exact i.i.d. sampling from the truncated models by rejection from the
// untruncated product law.

#pragma once

#include "smm/domain.hpp"
#include "smm/model.hpp"
#include "smm/rng.hpp"

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>

namespace smm {

/// n observations in d dimensions, one row per observation.
struct SampleMatrix {
    Matrix x;
    std::size_t proposals = 0;

    Eigen::Index n() const { return x.rows(); }
    Eigen::Index dim() const { return x.cols(); }
    Vector row(Eigen::Index i) const { return x.row(i).transpose(); }
    double acceptance_rate() const
    {
        return proposals == 0 ? 1.0 : static_cast<double>(x.rows()) / static_cast<double>(proposals);
    }
};

class SamplerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Rejection is abandoned when, after this many proposals, the acceptance
/// rate is still below kMinAcceptance.
inline constexpr std::size_t kProposalBudget = 1'000'000;
inline constexpr double kMinAcceptance = 1e-4;

/// One draw from N(mu, Sigma) as mu + L z.
inline Vector sample_mvn(const TNParams& theta, RngStream& rng)
{
    Vector z(theta.dim());
    for (int i = 0; i < theta.dim(); ++i)
        z[i] = rng.normal();
    return theta.mu() + theta.cholesky().triangularView<Eigen::Lower>() * z;
}

/// Gamma(alpha, rate beta) by Marsaglia-Tsang; alpha < 1 is boosted from alpha + 1.
inline double sample_gamma(double alpha, double beta, RngStream& rng)
{
    if (!(alpha > 0.0) || !(beta > 0.0) || !std::isfinite(alpha) || !std::isfinite(beta))
        throw std::invalid_argument("sample_gamma: parameters must be positive");
    double log_boost = 0.0;
    double a = alpha;
    if (a < 1.0) {
        log_boost = std::log(rng.uniform()) / alpha;
        a += 1.0;
    }
    const double d = a - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double z, v;
        do {
            z = rng.normal();
            v = 1.0 + c * z;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        const double z2 = z * z;
        if (u < 1.0 - 0.0331 * z2 * z2 || std::log(u) < 0.5 * z2 + d * (1.0 - v + std::log(v)))
            return std::exp(std::log(d * v) + log_boost) / beta;
    }
}

inline double sample_beta(double alpha, double beta, RngStream& rng)
{
    if (!(alpha > 0.0) || !(beta > 0.0) || !std::isfinite(alpha) || !std::isfinite(beta))
        throw std::invalid_argument("sample_beta: parameters must be positive");
    const double x = sample_gamma(alpha, 1.0, rng);
    const double y = sample_gamma(beta, 1.0, rng);
    return x / (x + y);
}

namespace detail {

template <class Propose>
SampleMatrix rejection_sample(const Domain& domain, Eigen::Index n, int d, Propose&& propose,
                              const std::string& what)
{
    if (n < 1)
        throw std::invalid_argument("sample_truncated: n must be at least 1");
    if (domain.dim() != d)
        throw std::invalid_argument("sample_truncated: domain dimension does not match the model");
    SampleMatrix out;
    out.x.resize(n, d);
    Eigen::Index accepted = 0;
    while (accepted < n) {
        Vector x = propose();
        ++out.proposals;
        if (domain.contains(x))
            out.x.row(accepted++) = x.transpose();
        if (out.proposals >= kProposalBudget &&
            static_cast<double>(accepted) < kMinAcceptance * static_cast<double>(out.proposals)) {
            std::ostringstream msg;
            msg << "sampler: acceptance rate " << static_cast<double>(accepted) / out.proposals
                << " after " << out.proposals << " proposals for " << what << " on a "
                << to_string(domain.kind()) << " domain; parameters and domain barely overlap";
            throw SamplerError(msg.str());
        }
    }
    return out;
}

} // namespace detail

inline SampleMatrix sample_truncated(const TNParams& theta, const Domain& domain, Eigen::Index n,
                                     RngStream& rng)
{
    const Matrix L = theta.cholesky();
    const int d = theta.dim();
    Vector z(d);
    return detail::rejection_sample(domain, n, d, [&] {
        for (int i = 0; i < d; ++i)
            z[i] = rng.normal();
        return Vector(theta.mu() + L.triangularView<Eigen::Lower>() * z);
    }, "TN");
}

inline SampleMatrix sample_truncated(const NormalGammaParams& theta, const Domain& domain,
                                     Eigen::Index n, RngStream& rng)
{
    const double sd = std::sqrt(theta.sigma2);
    return detail::rejection_sample(domain, n, 2, [&] {
        Vector x(2);
        x[0] = theta.mu + sd * rng.normal();
        x[1] = sample_gamma(theta.alpha, theta.beta, rng);
        return x;
    }, "normal x gamma");
}

inline SampleMatrix sample_truncated(const NormalBetaParams& theta, const Domain& domain,
                                     Eigen::Index n, RngStream& rng)
{
    const double sd = std::sqrt(theta.sigma2);
    return detail::rejection_sample(domain, n, 2, [&] {
        Vector x(2);
        x[0] = theta.mu + sd * rng.normal();
        x[1] = sample_beta(theta.alpha, theta.beta, rng);
        return x;
    }, "normal x beta");
}

} // namespace smm
