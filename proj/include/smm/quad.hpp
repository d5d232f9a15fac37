// Deterministic adaptive cubature over truncation domains.
//
// Boxes are integrated with the degree-7/degree-5 embedded Genz-Malik rule
// under global adaptive subdivision (one-dimensional problems use
// Gauss-Kronrod 7-15). Two-dimensional discs, possibly clipped by a base
// support, are mapped to polar coordinates around the disc centre so the
// integrand seen by the rule is smooth; other domains fall back to
// integrating the membership-masked integrand over the bounding box.

#pragma once

#include "smm/domain.hpp"
#include "smm/matkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <queue>
#include <stdexcept>
#include <vector>

namespace smm {

struct QuadResult {
    double value = 0.0;
    double abs_error_estimate = 0.0;
    std::size_t evaluations = 0;
    bool converged = false;
};

struct QuadOptions {
    double rel_tol = 1e-9;
    double abs_tol = 0.0;
    std::size_t max_evaluations = 10'000'000;
};

using Integrand = std::function<double(const Vector&)>;

/// Default tolerance for normalising constants inside likelihood evaluations.
inline constexpr double kMleQuadTol = 1e-7;

namespace detail {

struct Region {
    Vector center, half;
    double value = 0.0, error = 0.0;
    int split_dim = 0;
    bool operator<(const Region& o) const { return error < o.error; }
};

class GenzMalik {
public:
    explicit GenzMalik(int n) : n_(n)
    {
        if (n < 2)
            throw std::invalid_argument("GenzMalik: dimension must be at least 2");
        const double dn = n;
        w1_ = (12824.0 - 9120.0 * dn + 400.0 * dn * dn) / 19683.0;
        w2_ = 980.0 / 6561.0;
        w3_ = (1820.0 - 400.0 * dn) / 19683.0;
        w4_ = 200.0 / 19683.0;
        w5_ = 6859.0 / 19683.0 / std::ldexp(1.0, n);
        v1_ = (729.0 - 950.0 * dn + 50.0 * dn * dn) / 729.0;
        v2_ = 245.0 / 486.0;
        v3_ = (265.0 - 100.0 * dn) / 1458.0;
        v4_ = 25.0 / 729.0;
    }

    std::size_t points() const
    {
        const std::size_t n = n_;
        return 1 + 4 * n + 2 * n * (n - 1) + (std::size_t{1} << n);
    }

    void apply(const Integrand& f, Region& R) const
    {
        static const double l2 = std::sqrt(9.0 / 70.0);
        static const double l4 = std::sqrt(9.0 / 10.0);
        static const double l5 = std::sqrt(9.0 / 19.0);
        const Vector& c = R.center;
        const Vector& h = R.half;
        Vector x = c;
        const double f0 = f(x);
        double s2 = 0.0, s3 = 0.0, s4 = 0.0, s5 = 0.0;
        double best_diff = -1.0;
        R.split_dim = 0;
        for (int i = 0; i < n_; ++i) {
            x[i] = c[i] + l2 * h[i];
            const double a = f(x);
            x[i] = c[i] - l2 * h[i];
            const double b = f(x);
            x[i] = c[i] + l4 * h[i];
            const double p = f(x);
            x[i] = c[i] - l4 * h[i];
            const double q = f(x);
            x[i] = c[i];
            s2 += a + b;
            s3 += p + q;
            const double diff = std::abs(a + b - 2.0 * f0 - (l2 * l2 / (l4 * l4)) * (p + q - 2.0 * f0));
            // ties go to the widest side so degenerate integrands still get bisected sensibly
            if (diff > best_diff * (1.0 + 1e-12) ||
                (std::abs(diff - best_diff) <= 1e-12 * best_diff && h[i] > h[R.split_dim])) {
                best_diff = diff;
                R.split_dim = i;
            }
        }
        for (int i = 0; i < n_; ++i)
            for (int j = i + 1; j < n_; ++j)
                for (int si : {-1, 1})
                    for (int sj : {-1, 1}) {
                        x[i] = c[i] + si * l4 * h[i];
                        x[j] = c[j] + sj * l4 * h[j];
                        s4 += f(x);
                        x[i] = c[i];
                        x[j] = c[j];
                    }
        const std::size_t corners = std::size_t{1} << n_;
        for (std::size_t mask = 0; mask < corners; ++mask) {
            for (int i = 0; i < n_; ++i)
                x[i] = c[i] + (((mask >> i) & 1U) ? l5 : -l5) * h[i];
            s5 += f(x);
        }
        double vol = 1.0;
        for (int i = 0; i < n_; ++i)
            vol *= 2.0 * h[i];
        const double i7 = vol * (w1_ * f0 + w2_ * s2 + w3_ * s3 + w4_ * s4 + w5_ * s5);
        const double i5 = vol * (v1_ * f0 + v2_ * s2 + v3_ * s3 + v4_ * s4);
        R.value = i7;
        R.error = std::abs(i7 - i5);
        if (!std::isfinite(R.value))
            R.error = std::numeric_limits<double>::infinity();
    }

    /// Degree-7 nodes and weights (volume included) of the rule on R.
    void nodes(const Region& R, std::vector<Vector>& pts, std::vector<double>& w) const
    {
        static const double l2 = std::sqrt(9.0 / 70.0);
        static const double l4 = std::sqrt(9.0 / 10.0);
        static const double l5 = std::sqrt(9.0 / 19.0);
        double vol = 1.0;
        for (int i = 0; i < n_; ++i)
            vol *= 2.0 * R.half[i];
        Vector x = R.center;
        auto emit = [&](double weight) {
            pts.push_back(x);
            w.push_back(vol * weight);
        };
        emit(w1_);
        for (int i = 0; i < n_; ++i) {
            for (double l : {l2, -l2}) {
                x[i] = R.center[i] + l * R.half[i];
                emit(w2_);
            }
            for (double l : {l4, -l4}) {
                x[i] = R.center[i] + l * R.half[i];
                emit(w3_);
            }
            x[i] = R.center[i];
        }
        for (int i = 0; i < n_; ++i)
            for (int j = i + 1; j < n_; ++j)
                for (int si : {-1, 1})
                    for (int sj : {-1, 1}) {
                        x[i] = R.center[i] + si * l4 * R.half[i];
                        x[j] = R.center[j] + sj * l4 * R.half[j];
                        emit(w4_);
                        x[i] = R.center[i];
                        x[j] = R.center[j];
                    }
        const std::size_t corners = std::size_t{1} << n_;
        for (std::size_t mask = 0; mask < corners; ++mask) {
            for (int i = 0; i < n_; ++i)
                x[i] = R.center[i] + (((mask >> i) & 1U) ? l5 : -l5) * R.half[i];
            emit(w5_);
        }
    }

private:
    int n_;
    double w1_, w2_, w3_, w4_, w5_;
    double v1_, v2_, v3_, v4_;
};

inline QuadResult adaptive_genz_malik(const Integrand& f, std::vector<Region> regions, const QuadOptions& opt,
                                      std::vector<Region>* leaves = nullptr)
{
    QuadResult out;
    if (regions.empty()) {
        out.converged = true;
        return out;
    }
    const int n = static_cast<int>(regions.front().center.size());
    GenzMalik rule(n);
    std::priority_queue<Region> heap;
    double total = 0.0, err = 0.0;
    for (auto& R : regions) {
        rule.apply(f, R);
        out.evaluations += rule.points();
        total += R.value;
        err += R.error;
        heap.push(std::move(R));
    }
    auto done = [&] { return err <= std::max(opt.abs_tol, opt.rel_tol * std::abs(total)); };
    while (!done() && out.evaluations + 2 * rule.points() <= opt.max_evaluations) {
        Region R = heap.top();
        heap.pop();
        total -= R.value;
        err -= R.error;
        Region A = R, B = R;
        const int k = R.split_dim;
        A.half[k] = B.half[k] = 0.5 * R.half[k];
        A.center[k] = R.center[k] - A.half[k];
        B.center[k] = R.center[k] + B.half[k];
        rule.apply(f, A);
        rule.apply(f, B);
        out.evaluations += 2 * rule.points();
        total += A.value + B.value;
        err += A.error + B.error;
        heap.push(std::move(A));
        heap.push(std::move(B));
        // running sums drift; refresh now and then
        if (heap.size() % 512 == 0) {
            auto copy = heap;
            total = err = 0.0;
            while (!copy.empty()) {
                total += copy.top().value;
                err += copy.top().error;
                copy.pop();
            }
        }
    }
    // final exact resummation
    total = err = 0.0;
    while (!heap.empty()) {
        total += heap.top().value;
        err += heap.top().error;
        if (leaves)
            leaves->push_back(heap.top());
        heap.pop();
    }
    out.value = total;
    out.abs_error_estimate = err;
    out.converged = std::isfinite(total) && err <= std::max(opt.abs_tol, opt.rel_tol * std::abs(total));
    return out;
}

struct Segment {
    double a, b, value, error;
    bool operator<(const Segment& o) const { return error < o.error; }
};

/// Adaptive Gauss-Kronrod 7-15 on [a, b].
inline QuadResult adaptive_gauss_kronrod(const std::function<double(double)>& f, double a, double b,
                                         const QuadOptions& opt, std::vector<Segment>* leaves = nullptr)
{
    static const double xk[8] = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                                 0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                                 0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                                 0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
    static const double wk[8] = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                                 0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                                 0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                                 0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
    static const double wg[4] = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                                 0.381830050505118944950369775488975, 0.417959183673469387755102040816327};
    using Seg = Segment;
    QuadResult out;
    auto rule = [&](double lo, double hi) {
        const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
        const double fc = f(c);
        double k = wk[7] * fc, g = wg[3] * fc;
        for (int j = 0; j < 7; ++j) {
            const double s = f(c - h * xk[j]) + f(c + h * xk[j]);
            k += wk[j] * s;
            if (j % 2 == 1)
                g += wg[j / 2] * s;
        }
        out.evaluations += 15;
        Seg s{lo, hi, k * h, std::abs((k - g) * h)};
        if (!std::isfinite(s.value))
            s.error = std::numeric_limits<double>::infinity();
        return s;
    };
    std::priority_queue<Seg> heap;
    Seg first = rule(a, b);
    double total = first.value, err = first.error;
    heap.push(first);
    while (err > std::max(opt.abs_tol, opt.rel_tol * std::abs(total)) &&
           out.evaluations + 30 <= opt.max_evaluations) {
        Seg s = heap.top();
        heap.pop();
        const double m = 0.5 * (s.a + s.b);
        Seg l = rule(s.a, m), r = rule(m, s.b);
        total += l.value + r.value - s.value;
        err += l.error + r.error - s.error;
        heap.push(l);
        heap.push(r);
    }
    total = err = 0.0;
    while (!heap.empty()) {
        total += heap.top().value;
        err += heap.top().error;
        if (leaves)
            leaves->push_back(heap.top());
        heap.pop();
    }
    out.value = total;
    out.abs_error_estimate = err;
    out.converged = std::isfinite(total) && err <= std::max(opt.abs_tol, opt.rel_tol * std::abs(total));
    return out;
}

inline void kronrod_nodes(const Segment& s, std::vector<double>& pts, std::vector<double>& w)
{
    static const double xk[8] = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                                 0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                                 0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                                 0.207784955007898467600689403773245, 0.0};
    static const double wk[8] = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                                 0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                                 0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                                 0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
    const double c = 0.5 * (s.a + s.b), h = 0.5 * (s.b - s.a);
    for (int j = 0; j < 7; ++j) {
        pts.push_back(c - h * xk[j]);
        w.push_back(h * wk[j]);
        pts.push_back(c + h * xk[j]);
        w.push_back(h * wk[j]);
    }
    pts.push_back(c);
    w.push_back(h * wk[7]);
}

/// Interval of rho >= 0 for which center + rho*u lies strictly inside the support box.
inline std::pair<double, double> ray_interval(const Eigen::Ref<const Vector>& center,
                                              const Eigen::Ref<const Vector>& u, double r,
                                              const Vector& sup_lo, const Vector& sup_hi)
{
    double lo = 0.0, hi = r;
    for (Eigen::Index k = 0; k < center.size(); ++k) {
        for (int side = 0; side < 2; ++side) {
            const double bound = side == 0 ? sup_lo[k] : sup_hi[k];
            if (!std::isfinite(bound))
                continue;
            // side 0: center_k + rho u_k > bound; side 1: center_k + rho u_k < bound
            const double gap = bound - center[k];
            const double sgn = side == 0 ? 1.0 : -1.0;
            const double uk = sgn * u[k];
            const double g = sgn * gap;  // need rho * uk > g
            if (uk > 0.0)
                lo = std::max(lo, g / uk);
            else if (uk < 0.0)
                hi = std::min(hi, g / uk);
            else if (!(0.0 > g))
                return {0.0, 0.0};
        }
    }
    if (!(hi > lo))
        return {0.0, 0.0};
    return {lo, hi};
}

// Rule-space description of a domain: the adaptive rule runs over `regions`
// (or [a, b] when one-dimensional) and `map` sends a rule-space point t to x,
// returning the Jacobian factor (0 when x falls outside the domain).
struct Chart {
    int dim = 0;
    bool one_d = false;
    double a = 0.0, b = 0.0;
    std::vector<Region> regions;
    std::function<double(const Vector& t, Vector& x)> map;
};

inline Chart box_chart(const Vector& lo, const Vector& hi)
{
    if (lo.size() != hi.size() || lo.size() < 1)
        throw std::invalid_argument("integrate_box: bounds mismatch");
    if (!lo.allFinite() || !hi.allFinite())
        throw std::invalid_argument("integrate_box: bounds must be finite");
    Chart c;
    c.dim = static_cast<int>(lo.size());
    c.map = [](const Vector& t, Vector& x) {
        x = t;
        return 1.0;
    };
    if (c.dim == 1) {
        c.one_d = true;
        c.a = lo[0];
        c.b = hi[0];
    } else {
        Region R;
        R.center = 0.5 * (lo + hi);
        R.half = 0.5 * (hi - lo);
        c.regions.push_back(R);
    }
    return c;
}

inline Chart masked_chart(const Domain& domain)
{
    Chart c = box_chart(domain.lower(), domain.upper());
    c.map = [&domain](const Vector& t, Vector& x) {
        x = t;
        return domain.contains(x) ? 1.0 : 0.0;
    };
    return c;
}

inline Chart disc_chart(const Domain& domain)
{
    if (domain.kind() != DomainKind::ball || domain.dim() != 2)
        throw std::invalid_argument("integrate_disc: needs a two-dimensional ball domain");
    const Eigen::Vector2d m = domain.centers()[0];
    const double r = domain.radius();
    const Vector slo = domain.support_lower();
    const Vector shi = domain.support_upper();
    constexpr double two_pi = 2.0 * std::numbers::pi;

    // Angular break points: where a support edge meets the circle.
    std::vector<double> breaks = {0.0, two_pi};
    auto add = [&](double phi) {
        phi = std::fmod(phi, two_pi);
        if (phi < 0.0)
            phi += two_pi;
        breaks.push_back(phi);
    };
    for (int k = 0; k < 2; ++k)
        for (double bound : {slo[k], shi[k]}) {
            if (!std::isfinite(bound))
                continue;
            const double c = (bound - m[k]) / r;
            if (std::abs(c) > 1.0)
                continue;
            if (k == 0) {
                add(std::acos(c));
                add(-std::acos(c));
            } else {
                add(std::asin(c));
                add(std::numbers::pi - std::asin(c));
            }
        }
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end(),
                             [](double a, double b) { return std::abs(a - b) < 1e-14; }),
                 breaks.end());

    Chart c;
    c.dim = 2;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        if (breaks[i + 1] - breaks[i] < 1e-14)
            continue;
        Region R;
        R.center = Vector(2);
        R.half = Vector(2);
        R.center << 0.5, 0.5 * (breaks[i] + breaks[i + 1]);
        R.half << 0.5, 0.5 * (breaks[i + 1] - breaks[i]);
        c.regions.push_back(R);
    }
    // t = (radial fraction, angle)
    c.map = [m, r, slo, shi](const Vector& t, Vector& x) {
        const Eigen::Vector2d u(std::cos(t[1]), std::sin(t[1]));
        const auto [lo, hi] = ray_interval(m, u, r, slo, shi);
        if (!(hi > lo))
            return 0.0;
        const double rho = lo + t[0] * (hi - lo);
        x.resize(2);
        x[0] = m[0] + rho * u[0];
        x[1] = m[1] + rho * u[1];
        return rho * (hi - lo);
    };
    return c;
}

} // namespace detail

/// A fixed weighted point set, sum_i w_i f(x_i). Frozen from an adaptive run
/// so that nearby integrands can be integrated with an identical rule.
struct FixedRule {
    Matrix nodes;  // N x d
    Vector weights;

    std::size_t size() const { return static_cast<std::size_t>(weights.size()); }
    double integrate(const Integrand& f) const
    {
        double s = 0.0;
        Vector x(nodes.cols());
        for (Eigen::Index i = 0; i < nodes.rows(); ++i) {
            x = nodes.row(i).transpose();
            s += weights[i] * f(x);
        }
        return s;
    }
};

namespace detail {

inline QuadResult run_chart(const Integrand& f, const Chart& chart, const QuadOptions& opt,
                            FixedRule* frozen = nullptr)
{
    Vector x(chart.dim);
    std::vector<Vector> pts;
    std::vector<double> w;
    QuadResult res;
    if (chart.one_d) {
        Vector t(1);
        std::vector<Segment> leaves;
        res = adaptive_gauss_kronrod(
            [&](double s) {
                t[0] = s;
                const double jac = chart.map(t, x);
                return jac == 0.0 ? 0.0 : jac * f(x);
            },
            chart.a, chart.b, opt, frozen ? &leaves : nullptr);
        if (frozen) {
            std::vector<double> p1;
            for (const auto& s : leaves)
                kronrod_nodes(s, p1, w);
            for (double p : p1)
                pts.push_back(Vector::Constant(1, p));
        }
    } else {
        std::vector<Region> leaves;
        res = adaptive_genz_malik(
            [&](const Vector& t) {
                const double jac = chart.map(t, x);
                return jac == 0.0 ? 0.0 : jac * f(x);
            },
            chart.regions, opt, frozen ? &leaves : nullptr);
        if (frozen) {
            GenzMalik rule(chart.dim);
            for (const auto& R : leaves)
                rule.nodes(R, pts, w);
        }
    }
    if (frozen) {
        std::vector<std::pair<Vector, double>> kept;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const double jac = chart.map(pts[i], x);
            if (jac != 0.0)
                kept.emplace_back(x, w[i] * jac);
        }
        frozen->nodes.resize(static_cast<Eigen::Index>(kept.size()), chart.dim);
        frozen->weights.resize(static_cast<Eigen::Index>(kept.size()));
        for (std::size_t i = 0; i < kept.size(); ++i) {
            frozen->nodes.row(static_cast<Eigen::Index>(i)) = kept[i].first.transpose();
            frozen->weights[static_cast<Eigen::Index>(i)] = kept[i].second;
        }
    }
    return res;
}

inline Chart domain_chart(const Domain& domain)
{
    switch (domain.kind()) {
    case DomainKind::rectangle:
        return box_chart(domain.rect_lower(), domain.rect_upper());
    case DomainKind::ball:
        if (domain.dim() == 2)
            return disc_chart(domain);
        return masked_chart(domain);
    case DomainKind::union_of_balls:
        return masked_chart(domain);
    }
    throw std::logic_error("domain_chart: unknown domain kind");
}

inline QuadOptions checked_options(double rel_tol, std::size_t max_evaluations)
{
    if (!(rel_tol > 1e-15 && rel_tol < 1.0))
        throw std::invalid_argument("integrate: rel_tol out of range");
    QuadOptions opt;
    opt.rel_tol = rel_tol;
    opt.max_evaluations = max_evaluations;
    return opt;
}

} // namespace detail

/// Box integral of f over prod (lo_i, hi_i), any dimension >= 1.
inline QuadResult integrate_box(const Integrand& f, const Vector& lo, const Vector& hi,
                                const QuadOptions& opt = {})
{
    return detail::run_chart(f, detail::box_chart(lo, hi), opt);
}

/// Integral of f * 1{x in K} over the bounding box; slow to converge, kept as
/// the general fallback and as a cross-check for the transformed rules.
inline QuadResult integrate_masked(const Integrand& f, const Domain& domain, const QuadOptions& opt = {})
{
    return detail::run_chart(f, detail::masked_chart(domain), opt);
}

/// Polar-coordinate integral over a 2-D disc clipped by its support box.
inline QuadResult integrate_disc(const Integrand& f, const Domain& domain, const QuadOptions& opt = {})
{
    return detail::run_chart(f, detail::disc_chart(domain), opt);
}

/// Integral of f over the domain K: exact box for rectangles, polar map for
/// 2-D discs, masked bounding box otherwise.
inline QuadResult integrate(const Integrand& f, const Domain& domain, double rel_tol = 1e-9,
                            std::size_t max_evaluations = 10'000'000)
{
    return detail::run_chart(f, detail::domain_chart(domain), detail::checked_options(rel_tol, max_evaluations));
}

/// As integrate(), also returning the final adaptive partition as a fixed rule.
inline QuadResult integrate_and_freeze(const Integrand& f, const Domain& domain, FixedRule& rule,
                                       double rel_tol = 1e-9, std::size_t max_evaluations = 10'000'000)
{
    return detail::run_chart(f, detail::domain_chart(domain), detail::checked_options(rel_tol, max_evaluations),
                             &rule);
}

} // namespace smm
