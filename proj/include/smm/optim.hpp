// Box-constrained quasi-Newton minimisation (projected BFGS) with
// central-difference gradients.

#pragma once

#include "smm/matkit.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

namespace smm {

struct OptimizerOptions {
    int max_iterations = 100;
    /// Stop when the sup-norm of the projected gradient falls below this.
    double gradient_tolerance = 1e-5;
    /// Stop when (f_k - f_{k+1}) / max(|f_k|, |f_{k+1}|, 1) falls below this.
    double step_tolerance = 1e7 * std::numeric_limits<double>::epsilon();
    std::optional<Vector> box_lower;

    void validate() const
    {
        if (max_iterations < 1)
            throw std::invalid_argument("OptimizerOptions: max_iterations must be positive");
        if (!(gradient_tolerance > 0.0) || !(step_tolerance > 0.0))
            throw std::invalid_argument("OptimizerOptions: tolerances must be positive");
    }
};

struct OptimizerResult {
    Vector x;
    double value = std::numeric_limits<double>::infinity();
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    std::string message;
};

struct Objective {
    std::function<double(const Vector&)> value;
    /// Called once for every accepted iterate before it is evaluated; lets the
    /// objective re-anchor internal approximations (may be empty).
    std::function<void(const Vector&)> anchor;
};

namespace detail {

inline Vector project(const Vector& x, const Vector& lo)
{
    return x.cwiseMax(lo);
}

inline Vector fd_gradient(const Objective& obj, const Vector& x, const Vector& lo, int& evals)
{
    Vector g(x.size());
    Vector y = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = 1e-6 * (1.0 + std::abs(x[i]));
        const double down = x[i] - h;
        if (down >= lo[i]) {
            y[i] = x[i] + h;
            const double fp = obj.value(y);
            y[i] = down;
            const double fm = obj.value(y);
            g[i] = (fp - fm) / (2.0 * h);
            evals += 2;
        } else {
            y[i] = x[i] + h;
            const double fp = obj.value(y);
            y[i] = x[i];
            g[i] = (fp - obj.value(y)) / h;
            evals += 2;
        }
        y[i] = x[i];
    }
    return g;
}

} // namespace detail

inline OptimizerResult minimize_box(const Objective& obj, const Vector& x0, const OptimizerOptions& opt)
{
    opt.validate();
    const Eigen::Index p = x0.size();
    const Vector lo = opt.box_lower ? *opt.box_lower
                                    : Vector::Constant(p, -std::numeric_limits<double>::infinity());
    if (lo.size() != p)
        throw std::invalid_argument("minimize_box: box_lower has the wrong length");

    OptimizerResult res;
    Vector x = detail::project(x0, lo);
    if (obj.anchor)
        obj.anchor(x);
    double f = obj.value(x);
    ++res.evaluations;
    res.x = x;
    res.value = f;
    if (!std::isfinite(f)) {
        res.message = "objective is not finite at the initial point";
        return res;
    }
    Vector g = detail::fd_gradient(obj, x, lo, res.evaluations);
    Matrix H = Matrix::Identity(p, p);
    bool fresh_h = true;

    auto at_bound = [&](const Vector& z, Eigen::Index i) {
        return std::isfinite(lo[i]) && z[i] <= lo[i] + 1e-12 * (1.0 + std::abs(lo[i]));
    };

    for (int it = 1; it <= opt.max_iterations; ++it) {
        res.iterations = it;
        Vector pg = g;
        for (Eigen::Index i = 0; i < p; ++i)
            if (at_bound(x, i) && g[i] > 0.0)
                pg[i] = 0.0;
        if (!g.allFinite()) {
            res.message = "gradient is not finite";
            return res;
        }
        if (pg.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance) {
            res.converged = true;
            res.message = "projected gradient below tolerance";
            return res;
        }

        bool accepted = false;
        Vector xt;
        double ft = 0.0;
        for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
            Vector d = -(H * pg);
            for (Eigen::Index i = 0; i < p; ++i)
                if (pg[i] == 0.0)
                    d[i] = 0.0;
            if (!(g.dot(d) < 0.0)) {
                H.setIdentity();
                fresh_h = true;
                d = -pg;
            }
            double t = 1.0;
            if (fresh_h)
                t = std::min(1.0, 1.0 / std::max(1.0, d.lpNorm<Eigen::Infinity>()));
            for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
                xt = detail::project(x + t * d, lo);
                if ((xt - x).lpNorm<Eigen::Infinity>() == 0.0)
                    break;
                ft = obj.value(xt);
                ++res.evaluations;
                if (std::isfinite(ft) && ft <= f + 1e-4 * g.dot(xt - x)) {
                    accepted = true;
                    break;
                }
            }
            if (!accepted && !fresh_h) {
                H.setIdentity();
                fresh_h = true;
            } else {
                break;
            }
        }
        if (!accepted) {
            res.message = "line search failed";
            return res;
        }

        const double reduction = (f - ft) / std::max({std::abs(f), std::abs(ft), 1.0});
        if (obj.anchor)
            obj.anchor(xt);
        const double f_new = obj.value(xt);
        ++res.evaluations;
        const Vector g_new = detail::fd_gradient(obj, xt, lo, res.evaluations);
        const Vector s = xt - x;
        const Vector y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-10 * s.norm() * y.norm()) {
            if (fresh_h)
                H *= sy / y.squaredNorm();
            const double rho = 1.0 / sy;
            const Matrix I = Matrix::Identity(p, p);
            H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
            fresh_h = false;
        }
        x = xt;
        f = f_new;
        g = g_new;
        res.x = x;
        res.value = f;
        if (!std::isfinite(f)) {
            res.message = "objective is not finite";
            return res;
        }
        if (reduction <= opt.step_tolerance) {
            res.converged = true;
            res.message = "relative reduction below tolerance";
            return res;
        }
    }
    res.message = "iteration limit reached";
    return res;
}

} // namespace smm
