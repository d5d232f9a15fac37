// Competitor estimators: truncated maximum likelihood (normalising constant
// by cubature, box-constrained quasi-Newton) and truncated score matching
// with the boundary distance as weight.

#pragma once

#include "smm/domain.hpp"
#include "smm/matkit.hpp"
#include "smm/model.hpp"
#include "smm/optim.hpp"
#include "smm/quad.hpp"
#include "smm/sampler.hpp"
#include "smm/stein.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace smm {

// --- maximum likelihood -------------------------------------------------------

struct MleOptions {
    OptimizerOptions optimizer;
    double quad_tol = kMleQuadTol;
    /// false: every likelihood evaluation integrates C(theta) afresh (cached per
    /// theta). true: probes around an iterate reuse that iterate's adaptive
    /// partition, which keeps finite-difference gradients free of cubature jitter.
    bool reuse_partition = false;
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kParamFloor = 1e-6;
inline constexpr std::size_t kMleQuadBudget = 1'000'000;

inline void require_product_support(const SampleMatrix& s, ModelKind model, const char* who)
{
    if (s.dim() != 2)
        throw std::invalid_argument(std::string(who) + ": product models are two-dimensional");
    for (Eigen::Index i = 0; i < s.n(); ++i) {
        const double x2 = s.x(i, 1);
        const bool ok = model == ModelKind::normal_gamma ? x2 > 0.0 : (x2 > 0.0 && x2 < 1.0);
        if (!ok)
            throw std::domain_error(std::string(who) + ": row " + std::to_string(i) +
                                    " is outside the model support");
    }
}

/// Truncated normal in (mu, row-wise lower-triangular L) coordinates.
class TnLikelihood {
public:
    TnLikelihood(const SampleMatrix& s) : d_(static_cast<int>(s.dim())), n_(static_cast<double>(s.n()))
    {
        sum_ = s.x.colwise().sum().transpose();
        sxx_ = s.x.transpose() * s.x;
        data_ = s.x.transpose();
    }

    int params() const { return d_ + d_ * (d_ + 1) / 2; }

    Matrix lower(const Vector& p) const
    {
        Matrix L = Matrix::Zero(d_, d_);
        int k = d_;
        for (int i = 0; i < d_; ++i)
            for (int j = 0; j <= i; ++j)
                L(i, j) = p[k++];
        return L;
    }

    Vector pack(const Vector& mu, const Matrix& L) const
    {
        Vector p(params());
        p.head(d_) = mu;
        int k = d_;
        for (int i = 0; i < d_; ++i)
            for (int j = 0; j <= i; ++j)
                p[k++] = L(i, j);
        return p;
    }

    Vector lower_bounds() const
    {
        Vector lo = Vector::Constant(params(), -kInf);
        int k = d_;
        for (int i = 0; i < d_; ++i)
            for (int j = 0; j <= i; ++j, ++k)
                if (i == j)
                    lo[k] = kParamFloor;
        return lo;
    }

    struct Prepared {
        Vector mu;
        Matrix L;
    };
    Prepared prepare(const Vector& p) const { return {p.head(d_), lower(p)}; }

    double log_kernel(const Prepared& q, const Eigen::Ref<const Vector>& x) const
    {
        const Vector y = q.L.triangularView<Eigen::Lower>().solve(x - q.mu);
        return -0.5 * y.squaredNorm();
    }

    /// -sum_i log k(x_i)
    double data_term(const Prepared& q) const
    {
        const Matrix S = sxx_ - sum_ * q.mu.transpose() - q.mu * sum_.transpose() + n_ * q.mu * q.mu.transpose();
        const Matrix A = q.L.triangularView<Eigen::Lower>().solve(S);
        const Matrix B = q.L.triangularView<Eigen::Lower>().solve(A.transpose());
        return 0.5 * B.trace();
    }

    double max_data_log_kernel(const Prepared& q) const
    {
        double m = -kInf;
        for (Eigen::Index i = 0; i < data_.cols(); ++i)
            m = std::max(m, log_kernel(q, data_.col(i)));
        return m;
    }

    double n() const { return n_; }

private:
    int d_;
    double n_;
    Vector sum_;
    Matrix sxx_;
    Matrix data_;  // d x n
};

/// Normal x gamma / normal x beta in (mu, sigma2, alpha, beta).
class ProductLikelihood {
public:
    ProductLikelihood(const SampleMatrix& s, ModelKind model) : beta_model_(model == ModelKind::normal_beta)
    {
        n_ = static_cast<double>(s.n());
        for (Eigen::Index i = 0; i < s.n(); ++i) {
            const double x1 = s.x(i, 0), x2 = s.x(i, 1);
            s1_ += x1;
            s11_ += x1 * x1;
            slog_ += std::log(x2);
            s2_ += beta_model_ ? std::log1p(-x2) : x2;
        }
        data_ = s.x.transpose();
    }

    int params() const { return 4; }
    Vector lower_bounds() const { return (Vector(4) << -kInf, kParamFloor, kParamFloor, kParamFloor).finished(); }

    using Prepared = Vector;
    Prepared prepare(const Vector& p) const { return p; }

    double log_kernel(const Prepared& p, const Eigen::Ref<const Vector>& x) const
    {
        const double r = x[0] - p[0];
        const double tail = beta_model_ ? (p[3] - 1.0) * std::log1p(-x[1]) : -p[3] * x[1];
        return -r * r / (2.0 * p[1]) + (p[2] - 1.0) * std::log(x[1]) + tail;
    }

    double data_term(const Prepared& p) const
    {
        const double ss = s11_ - 2.0 * p[0] * s1_ + n_ * p[0] * p[0];
        const double tail = beta_model_ ? (p[3] - 1.0) * s2_ : -p[3] * s2_;
        return ss / (2.0 * p[1]) - (p[2] - 1.0) * slog_ - tail;
    }

    double max_data_log_kernel(const Prepared& p) const
    {
        double m = -kInf;
        for (Eigen::Index i = 0; i < data_.cols(); ++i)
            m = std::max(m, log_kernel(p, data_.col(i)));
        return m;
    }

    double n() const { return n_; }

private:
    bool beta_model_;
    double n_ = 0.0, s1_ = 0.0, s11_ = 0.0, slog_ = 0.0, s2_ = 0.0;
    Matrix data_;
};

inline bool same_point(const Vector& a, const Vector& b)
{
    return a.size() == b.size() && (a.array() == b.array()).all();
}

/// Negative log-likelihood n log C(theta) - sum log k(x_i), C(theta) by
/// adaptive cubature with the log kernel shifted by its maximum over the
/// data. With partition reuse, the partition found at each accepted iterate
/// is frozen and applied to all probes until the next iterate.
template <class Model>
class TruncatedNll {
public:
    TruncatedNll(const Model& model, const Domain& domain, double quad_tol, bool reuse_partition)
        : model_(model), domain_(domain), tol_(quad_tol), reuse_(reuse_partition)
    {
    }

    /// Adaptive log C at p; also refreshes the fixed rule. Returns false when
    /// the cubature does not converge.
    bool anchor(const Vector& p)
    {
        if (!reuse_) {
            anchor_p_ = p;
            anchor_log_c_ = adaptive_log_c(p, anchor_ok_);
            return anchor_ok_;
        }
        const auto q = model_.prepare(p);
        const double shift = model_.max_data_log_kernel(q);
        FixedRule rule;
        const QuadResult r = integrate_and_freeze(
            [&](const Vector& x) { return std::exp(model_.log_kernel(q, x) - shift); }, domain_, rule, tol_,
            kMleQuadBudget);
        anchor_ok_ = r.converged && r.value > 0.0;
        anchor_log_c_ = anchor_ok_ ? shift + std::log(r.value) : kInf;
        anchor_p_ = p;
        nodes_ = rule.nodes.transpose();
        weights_ = rule.weights;
        logk_.resize(weights_.size());
        return anchor_ok_;
    }

    bool anchor_ok() const { return anchor_ok_; }

    double log_c_fixed(const Vector& p)
    {
        if (same_point(p, anchor_p_))
            return anchor_log_c_;
        if (!reuse_) {
            if (same_point(p, cache_p_))
                return cache_log_c_;
            bool ok = false;
            cache_p_ = p;
            cache_log_c_ = adaptive_log_c(p, ok);
            return cache_log_c_;
        }
        const auto q = model_.prepare(p);
        double m = -kInf;
        for (Eigen::Index i = 0; i < nodes_.cols(); ++i) {
            logk_[i] = model_.log_kernel(q, nodes_.col(i));
            m = std::max(m, logk_[i]);
        }
        if (!std::isfinite(m))
            return kInf;
        double s = 0.0;
        for (Eigen::Index i = 0; i < nodes_.cols(); ++i)
            s += weights_[i] * std::exp(logk_[i] - m);
        return s > 0.0 ? m + std::log(s) : kInf;
    }

    double operator()(const Vector& p)
    {
        const double lc = log_c_fixed(p);
        if (!std::isfinite(lc))
            return kInf;
        const double v = model_.n() * lc + model_.data_term(model_.prepare(p));
        return std::isfinite(v) ? v : kInf;
    }

    /// NLL with a fresh adaptive constant (no fixed-rule reuse).
    double exact(const Vector& p)
    {
        bool ok = false;
        const double lc = adaptive_log_c(p, ok);
        if (!std::isfinite(lc))
            return kInf;
        return model_.n() * lc + model_.data_term(model_.prepare(p));
    }

private:
    double adaptive_log_c(const Vector& p, bool& converged) const
    {
        const auto q = model_.prepare(p);
        const double shift = model_.max_data_log_kernel(q);
        const QuadResult r = integrate([&](const Vector& x) { return std::exp(model_.log_kernel(q, x) - shift); },
                                       domain_, tol_, kMleQuadBudget);
        converged = r.converged && r.value > 0.0;
        return r.value > 0.0 ? shift + std::log(r.value) : kInf;
    }

    const Model& model_;
    const Domain& domain_;
    double tol_;
    bool reuse_;
    Vector cache_p_;
    double cache_log_c_ = kInf;
    bool anchor_ok_ = false;
    double anchor_log_c_ = kInf;
    Vector anchor_p_;
    Matrix nodes_;
    Vector weights_;
    Vector logk_;
};

template <class Model>
OptimizerResult run_mle(TruncatedNll<Model>& nll, const Vector& start, OptimizerOptions opts, bool& quad_failed)
{
    quad_failed = false;
    Objective obj;
    obj.value = [&](const Vector& p) { return nll(p); };
    obj.anchor = [&](const Vector& p) {
        if (!nll.anchor(p))
            quad_failed = true;
    };
    return minimize_box(obj, start, opts);
}

template <class Params>
void mark_optimizer(EstimationResult<Params>& r, const OptimizerResult& o, bool quad_failed)
{
    r.diagnostics.iterations = o.iterations;
    r.diagnostics.objective = o.value;
    r.diagnostics.note = quad_failed ? "normalising-constant cubature did not converge" : o.message;
    if (!o.converged || quad_failed)
        r.reason = Reason::optimizer_failure;
}

} // namespace detail

/// Negative log-likelihood of the truncated normal, C(theta) by adaptive cubature.
inline double tn_negative_log_likelihood(const TNParams& theta, const SampleMatrix& sample, const Domain& domain,
                                         double quad_tol = kMleQuadTol)
{
    detail::TnLikelihood model(sample);
    detail::TruncatedNll<detail::TnLikelihood> nll(model, domain, quad_tol, false);
    return nll.exact(model.pack(theta.mu(), theta.cholesky()));
}

inline double product_negative_log_likelihood(const Vector& theta, ModelKind kind, const SampleMatrix& sample,
                                              const Domain& domain, double quad_tol = kMleQuadTol)
{
    detail::ProductLikelihood model(sample, kind);
    detail::TruncatedNll<detail::ProductLikelihood> nll(model, domain, quad_tol, false);
    return nll.exact(theta);
}

/// Truncated-normal MLE over (mu, L), Sigma = L L^T, started from the sample
/// mean and the Cholesky factor of the sample covariance.
inline TNResult tn_mle(const SampleMatrix& sample, const Domain& domain, MleOptions mo = {})
{
    OptimizerOptions& opts = mo.optimizer;
    detail::require_members(sample, domain, "tn_mle");
    const int d = static_cast<int>(sample.dim());
    if (sample.n() < d + 1)
        throw std::invalid_argument("tn_mle: need at least d + 1 observations");
    if (d > 3)
        throw std::invalid_argument("tn_mle: supported for d <= 3 only");

    detail::TnLikelihood model(sample);
    const Vector mean = sample.x.colwise().mean().transpose();
    const Matrix centered = sample.x.rowwise() - mean.transpose();
    const Matrix cov = centered.transpose() * centered / static_cast<double>(sample.n() - 1);
    Eigen::LLT<Matrix> llt(cov);
    Matrix L0 = llt.info() == Eigen::Success ? Matrix(llt.matrixL()) : Matrix::Identity(d, d);
    const Vector start = model.pack(mean, L0);
    if (!opts.box_lower)
        opts.box_lower = model.lower_bounds();

    detail::TruncatedNll<detail::TnLikelihood> nll(model, domain, mo.quad_tol, mo.reuse_partition);
    bool quad_failed = false;
    const OptimizerResult o = detail::run_mle(nll, start, opts, quad_failed);

    TNResult r;
    const Vector mu = o.x.head(d);
    const Matrix L = model.lower(o.x);
    const Matrix sigma = symmetrize(L * L.transpose());
    r.raw.resize(d * d + d);
    r.raw << vec(sigma), mu;
    detail::mark_optimizer(r, o, quad_failed);
    if (r.reason == Reason::ok && !(r.raw.allFinite() && is_positive_definite(sigma)))
        r.reason = Reason::non_pd_sigma;
    if (r.reason == Reason::ok)
        r.theta_hat.emplace(mu, sigma);
    return r;
}

/// Product-model MLE over (mu, sigma2, alpha, beta) from the fixed start
/// (0, 1, 1, 1) with lower bounds (-inf, 1e-6, 1e-6, 1e-6).
template <class Params>
EstimationResult<Params> product_mle(const SampleMatrix& sample, ModelKind kind, const Domain& domain,
                                     MleOptions mo = {})
{
    OptimizerOptions& opts = mo.optimizer;
    detail::require_members(sample, domain, "product_mle");
    detail::require_product_support(sample, kind, "product_mle");
    detail::ProductLikelihood model(sample, kind);
    if (!opts.box_lower)
        opts.box_lower = model.lower_bounds();
    const Vector start = (Vector(4) << 0.0, 1.0, 1.0, 1.0).finished();

    detail::TruncatedNll<detail::ProductLikelihood> nll(model, domain, mo.quad_tol, mo.reuse_partition);
    bool quad_failed = false;
    const OptimizerResult o = detail::run_mle(nll, start, opts, quad_failed);

    EstimationResult<Params> r;
    r.raw = o.x;
    detail::mark_optimizer(r, o, quad_failed);
    if (r.reason == Reason::ok && !(o.x.allFinite() && o.x[1] > 0.0 && o.x[2] > 0.0 && o.x[3] > 0.0))
        r.reason = Reason::negative_scalar_param;
    if (r.reason == Reason::ok)
        r.theta_hat.emplace(o.x[0], o.x[1], o.x[2], o.x[3]);
    return r;
}

inline NGResult ng_mle(const SampleMatrix& sample, const Domain& domain, const MleOptions& mo = {})
{
    return product_mle<NormalGammaParams>(sample, ModelKind::normal_gamma, domain, mo);
}

inline NBResult nb_mle(const SampleMatrix& sample, const Domain& domain, const MleOptions& mo = {})
{
    return product_mle<NormalBetaParams>(sample, ModelKind::normal_beta, domain, mo);
}

// --- score matching -------------------------------------------------------------
//
// With the model score linear in natural parameters, s(x) = A(x) eta + c(x),
// the weighted objective
//     J(eta) = mean[ g (|s|^2 / 2 + div s) + grad g . s ]
// equals eta^T H eta / 2 + b^T eta + const with
//     H = mean[g A^T A],  b = mean[g A^T c + g a + A^T grad g],
// where div s = a^T eta + div c. The minimiser solves H eta = -b.

struct ScoreMatchingSystem {
    Matrix H;
    Vector b;
    double constant = 0.0;

    double objective(const Vector& eta) const { return 0.5 * eta.dot(H * eta) + b.dot(eta) + constant; }
    Vector gradient(const Vector& eta) const { return H * eta + b; }
};

/// Natural parametrisation: truncated normal eta = (upper-triangle entries of
/// P = Sigma^{-1} in row order, P mu); products eta = (1/sigma2, mu/sigma2, alpha, beta).
struct LinearScore {
    Matrix A;     // d x k
    Vector c;     // d
    Vector a;     // k, divergence coefficients
    double div_c = 0.0;
};

inline LinearScore tn_linear_score(const Vector& x)
{
    const int d = static_cast<int>(x.size());
    const int m = d * (d + 1) / 2;
    LinearScore s;
    s.A = Matrix::Zero(d, m + d);
    s.a = Vector::Zero(m + d);
    s.c = Vector::Zero(d);
    int k = 0;
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j, ++k) {
            if (i == j) {
                s.A(i, k) = -x[i];
                s.a[k] = -1.0;
            } else {
                s.A(i, k) = -x[j];
                s.A(j, k) = -x[i];
            }
        }
    s.A.rightCols(d).setIdentity();
    return s;
}

inline LinearScore product_linear_score(const Vector& x, ModelKind kind)
{
    LinearScore s;
    s.A = Matrix::Zero(2, 4);
    s.a = Vector::Zero(4);
    s.c = Vector::Zero(2);
    const double x2 = x[1];
    s.A(0, 0) = -x[0];
    s.A(0, 1) = 1.0;
    s.A(1, 2) = 1.0 / x2;
    s.a[0] = -1.0;
    s.a[2] = -1.0 / (x2 * x2);
    if (kind == ModelKind::normal_gamma) {
        s.A(1, 3) = -1.0;
        s.c[1] = -1.0 / x2;
        s.div_c = 1.0 / (x2 * x2);
    } else {
        const double y = 1.0 - x2;
        s.A(1, 3) = -1.0 / y;
        s.a[3] = -1.0 / (y * y);
        s.c[1] = -1.0 / x2 + 1.0 / y;
        s.div_c = 1.0 / (x2 * x2) + 1.0 / (y * y);
    }
    return s;
}

inline ScoreMatchingSystem score_matching_system(const SampleMatrix& sample, ModelKind kind, const Domain& domain)
{
    ScoreMatchingSystem sys;
    for (Eigen::Index i = 0; i < sample.n(); ++i) {
        const Vector x = sample.row(i);
        const LinearScore s =
            kind == ModelKind::truncated_normal ? tn_linear_score(x) : product_linear_score(x, kind);
        const auto [g, dg] = domain.distance_and_gradient(x);
        if (i == 0) {
            sys.H = Matrix::Zero(s.A.cols(), s.A.cols());
            sys.b = Vector::Zero(s.A.cols());
        }
        sys.H.noalias() += g * s.A.transpose() * s.A;
        sys.b.noalias() += g * (s.A.transpose() * s.c + s.a) + s.A.transpose() * dg;
        sys.constant += g * (0.5 * s.c.squaredNorm() + s.div_c) + dg.dot(s.c);
    }
    const double n = static_cast<double>(sample.n());
    sys.H /= n;
    sys.b /= n;
    sys.constant /= n;
    return sys;
}

namespace detail {

struct SmSolution {
    Vector eta;
    double rcond = 0.0;
    bool singular = true;
    double objective = std::numeric_limits<double>::quiet_NaN();
};

inline SmSolution solve_score_matching(const ScoreMatchingSystem& sys)
{
    SmSolution out;
    const LinearSolve ls = solve_linear(sys.H, -sys.b);
    out.rcond = ls.rcond;
    out.singular = ls.singular || !ls.x.allFinite();
    out.eta = ls.x;
    if (!out.singular)
        out.objective = sys.objective(out.eta);
    return out;
}

} // namespace detail

inline TNResult tn_score_matching(const SampleMatrix& sample, const Domain& domain)
{
    detail::require_members(sample, domain, "tn_score_matching");
    const int d = static_cast<int>(sample.dim());
    const detail::SmSolution sol =
        detail::solve_score_matching(score_matching_system(sample, ModelKind::truncated_normal, domain));
    TNResult r;
    r.diagnostics.rcond = sol.rcond;
    r.diagnostics.objective = sol.objective;
    r.raw = Vector::Constant(d * d + d, std::numeric_limits<double>::quiet_NaN());
    if (sol.singular) {
        r.reason = Reason::singular_system;
        return r;
    }
    Matrix P(d, d);
    int k = 0;
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j, ++k)
            P(i, j) = P(j, i) = sol.eta[k];
    const Vector h = sol.eta.tail(d);
    if (!is_positive_definite(P)) {
        // report the raw inverse when it exists so the failure can be inspected
        const LinearSolve inv = solve_linear(P, Matrix::Identity(d, d));
        if (!inv.singular) {
            const Matrix S = symmetrize(inv.x);
            r.raw << vec(S), S * h;
        }
        r.reason = Reason::non_pd_sigma;
        return r;
    }
    const Matrix sigma = symmetrize(Eigen::LLT<Matrix>(P).solve(Matrix::Identity(d, d)));
    const Vector mu = sigma * h;
    r.raw << vec(sigma), mu;
    if (!is_positive_definite(sigma)) {
        r.reason = Reason::non_pd_sigma;
        return r;
    }
    r.theta_hat.emplace(mu, sigma);
    return r;
}

namespace detail {

template <class Params>
EstimationResult<Params> product_score_matching(const SampleMatrix& sample, ModelKind kind, const Domain& domain,
                                                const char* who)
{
    require_members(sample, domain, who);
    require_product_support(sample, kind, who);
    const SmSolution sol = solve_score_matching(score_matching_system(sample, kind, domain));
    Diagnostics diag;
    diag.rcond = sol.rcond;
    diag.objective = sol.objective;
    const Vector& e = sol.eta;
    return finish_product<Params>(e[1] / e[0], 1.0 / e[0], e[2], e[3], sol.singular, std::move(diag));
}

} // namespace detail

inline NGResult ng_score_matching(const SampleMatrix& sample, const Domain& domain)
{
    return detail::product_score_matching<NormalGammaParams>(sample, ModelKind::normal_gamma, domain,
                                                             "ng_score_matching");
}

inline NBResult nb_score_matching(const SampleMatrix& sample, const Domain& domain)
{
    return detail::product_score_matching<NormalBetaParams>(sample, ModelKind::normal_beta, domain,
                                                            "nb_score_matching");
}

} // namespace smm
