// Truncation domains.
//
// A domain is an open set K described by factor functions kappa_i whose zero
// sets cover the part of the boundary where test functions must vanish. The
// product kappa = prod_i kappa_i and its gradient feed the Stein test
// functions; membership, boundary distance and the bounding box serve the
// sampler, the quadrature and the score-matching competitor.

#pragma once

#include "smm/matkit.hpp"
#include "smm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace smm {

enum class DomainKind { rectangle, ball, union_of_balls };

/// Base support of one coordinate (the interval a model's marginal lives on).
enum class Support { reals, positive_halfline, unit_interval };

inline const char* to_string(DomainKind k)
{
    switch (k) {
    case DomainKind::rectangle: return "rectangle";
    case DomainKind::ball: return "ball";
    case DomainKind::union_of_balls: return "union_of_balls";
    }
    return "?";
}

inline const char* to_string(Support s)
{
    switch (s) {
    case Support::reals: return "reals";
    case Support::positive_halfline: return "positive_halfline";
    case Support::unit_interval: return "unit_interval";
    }
    return "?";
}

inline std::pair<double, double> support_bounds(Support s)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    switch (s) {
    case Support::reals: return {-inf, inf};
    case Support::positive_halfline: return {0.0, inf};
    case Support::unit_interval: return {0.0, 1.0};
    }
    return {-inf, inf};
}

/// One boundary factor: either affine (x_k - offset) or spherical (|x-c|^2 - r^2).
struct BoundaryFactor {
    enum class Type { affine, sphere };
    Type type = Type::affine;
    int coord = 0;
    double offset = 0.0;
    Vector center;
    double radius = 0.0;

    double value(const Vector& x) const
    {
        if (type == Type::affine)
            return x[coord] - offset;
        return (x - center).squaredNorm() - radius * radius;
    }

    Vector gradient(const Vector& x) const
    {
        if (type == Type::affine) {
            Vector g = Vector::Zero(x.size());
            g[coord] = 1.0;
            return g;
        }
        return 2.0 * (x - center);
    }
};

struct BoundaryPoint {
    Vector x;
    bool on_kappa_set = true;  // false for pieces of the base-support edge
};

class Domain {
public:
    static Domain rectangle(const Vector& a, const Vector& b)
    {
        if (a.size() != b.size() || a.size() < 1)
            throw std::invalid_argument("rectangle: a and b must have equal positive length");
        if (!a.allFinite() || !b.allFinite())
            throw std::invalid_argument("rectangle: bounds must be finite");
        for (Eigen::Index i = 0; i < a.size(); ++i)
            if (!(a[i] < b[i]))
                throw std::invalid_argument("rectangle: need a_i < b_i in coordinate " + std::to_string(i));

        Domain D(DomainKind::rectangle, static_cast<int>(a.size()));
        D.a_ = a;
        D.b_ = b;
        for (int i = 0; i < D.dim_; ++i) {
            D.factors_.push_back(affine(i, a[i]));
            D.factors_.push_back(affine(i, b[i]));
        }
        D.lo_ = a;
        D.hi_ = b;
        D.support_.assign(D.dim_, Support::reals);
        D.set_support_box();
        return D;
    }

    /// Ball B_r(m), optionally intersected with a per-coordinate base support.
    /// kappa encodes only the sphere; the support edge is left to the model.
    static Domain ball(const Vector& m, double r, std::vector<Support> support = {})
    {
        if (m.size() < 1 || !m.allFinite())
            throw std::invalid_argument("ball: center must be a finite non-empty vector");
        if (!(r > 0.0) || !std::isfinite(r))
            throw std::invalid_argument("ball: radius must be positive");
        if (support.empty())
            support.assign(m.size(), Support::reals);
        if (static_cast<Eigen::Index>(support.size()) != m.size())
            throw std::invalid_argument("ball: support list length must equal the dimension");

        Domain D(DomainKind::ball, static_cast<int>(m.size()));
        D.centers_ = {m};
        D.radius_ = r;
        D.factors_.push_back(sphere(m, r));
        D.support_ = std::move(support);
        D.set_support_box();
        D.lo_ = (m.array() - r).matrix().cwiseMax(D.sup_lo_);
        D.hi_ = (m.array() + r).matrix().cwiseMin(D.sup_hi_);
        D.require_nonempty();
        return D;
    }

    static Domain union_of_balls(const std::vector<Vector>& centers, double radius)
    {
        if (centers.empty())
            throw std::invalid_argument("union_of_balls: empty center list");
        if (!(radius > 0.0) || !std::isfinite(radius))
            throw std::invalid_argument("union_of_balls: radius must be positive");
        const auto d = centers.front().size();
        for (const auto& c : centers)
            if (c.size() != d || !c.allFinite())
                throw std::invalid_argument("union_of_balls: centers must be finite and of equal dimension");

        Domain D(DomainKind::union_of_balls, static_cast<int>(d));
        D.centers_ = centers;
        D.radius_ = radius;
        D.lo_ = Vector::Constant(d, std::numeric_limits<double>::infinity());
        D.hi_ = Vector::Constant(d, -std::numeric_limits<double>::infinity());
        for (const auto& c : centers) {
            D.factors_.push_back(sphere(c, radius));
            D.lo_ = D.lo_.cwiseMin((c.array() - radius).matrix());
            D.hi_ = D.hi_.cwiseMax((c.array() + radius).matrix());
        }
        D.support_.assign(d, Support::reals);
        D.set_support_box();
        return D;
    }

    int dim() const { return dim_; }
    DomainKind kind() const { return kind_; }
    const std::vector<BoundaryFactor>& factors() const { return factors_; }
    const std::vector<Support>& support() const { return support_; }

    /// Proposal/integration box; contains K.
    const Vector& lower() const { return lo_; }
    const Vector& upper() const { return hi_; }

    // Kind-specific geometry.
    const Vector& rect_lower() const { return a_; }
    const Vector& rect_upper() const { return b_; }
    const std::vector<Vector>& centers() const { return centers_; }
    double radius() const { return radius_; }
    const Vector& support_lower() const { return sup_lo_; }
    const Vector& support_upper() const { return sup_hi_; }

    /// Open-set membership: boundary points are not members.
    bool contains(const Vector& x) const
    {
        if (x.size() != dim_)
            return false;
        if (!x.allFinite())
            return false;
        for (int i = 0; i < dim_; ++i)
            if (!(x[i] > sup_lo_[i] && x[i] < sup_hi_[i]))
                return false;
        switch (kind_) {
        case DomainKind::rectangle:
            for (int i = 0; i < dim_; ++i)
                if (!(x[i] > a_[i] && x[i] < b_[i]))
                    return false;
            return true;
        case DomainKind::ball:
            return factors_[0].value(x) < 0.0;
        case DomainKind::union_of_balls:
            for (const auto& f : factors_)
                if (f.value(x) < 0.0)
                    return true;
            return false;
        }
        return false;
    }

    double kappa(const Vector& x) const
    {
        double k = 1.0;
        for (const auto& f : factors_)
            k *= f.value(x);
        return k;
    }

    /// Product rule: sum_i grad(kappa_i) prod_{j != i} kappa_j, without division.
    Vector grad_kappa(const Vector& x) const
    {
        const std::size_t I = factors_.size();
        std::vector<double> v(I);
        for (std::size_t i = 0; i < I; ++i)
            v[i] = factors_[i].value(x);
        // prefix/suffix products
        std::vector<double> pre(I + 1, 1.0), suf(I + 1, 1.0);
        for (std::size_t i = 0; i < I; ++i)
            pre[i + 1] = pre[i] * v[i];
        for (std::size_t i = I; i-- > 0;)
            suf[i] = suf[i + 1] * v[i];
        Vector g = Vector::Zero(dim_);
        for (std::size_t i = 0; i < I; ++i)
            g += factors_[i].gradient(x) * (pre[i] * suf[i + 1]);
        return g;
    }

    /// Euclidean distance from x in K to the boundary of K. For a union of
    /// overlapping balls this is the largest single-ball depth, a lower bound.
    double boundary_distance(const Vector& x) const
    {
        return distance_and_gradient(x).first;
    }

    /// Gradient of boundary_distance (a one-sided choice where it is not differentiable).
    Vector boundary_distance_gradient(const Vector& x) const
    {
        return distance_and_gradient(x).second;
    }

    std::pair<double, Vector> distance_and_gradient(const Vector& x) const
    {
        if (!contains(x))
            throw std::domain_error("boundary_distance: point is not in the domain");
        double best = std::numeric_limits<double>::infinity();
        Vector grad = Vector::Zero(dim_);
        auto consider_plane = [&](int k, double dist, double sign) {
            if (dist < best) {
                best = dist;
                grad.setZero();
                grad[k] = sign;
            }
        };
        auto consider_ball_depth = [&](const Vector& c) -> std::pair<double, Vector> {
            const Vector diff = x - c;
            const double nrm = diff.norm();
            Vector g = Vector::Zero(dim_);
            if (nrm > 0.0)
                g = -diff / nrm;
            return {radius_ - nrm, g};
        };

        switch (kind_) {
        case DomainKind::rectangle:
            for (int k = 0; k < dim_; ++k) {
                consider_plane(k, x[k] - a_[k], 1.0);
                consider_plane(k, b_[k] - x[k], -1.0);
            }
            break;
        case DomainKind::ball: {
            auto [dep, g] = consider_ball_depth(centers_[0]);
            best = dep;
            grad = g;
            break;
        }
        case DomainKind::union_of_balls: {
            double deepest = -std::numeric_limits<double>::infinity();
            for (const auto& c : centers_) {
                auto [dep, g] = consider_ball_depth(c);
                if (dep > deepest) {
                    deepest = dep;
                    grad = g;
                }
            }
            best = deepest;
            break;
        }
        }
        for (int k = 0; k < dim_; ++k) {
            if (std::isfinite(sup_lo_[k]))
                consider_plane(k, x[k] - sup_lo_[k], 1.0);
            if (std::isfinite(sup_hi_[k]))
                consider_plane(k, sup_hi_[k] - x[k], -1.0);
        }
        return {best, grad};
    }

    /// Random points on the boundary of K (for tests and diagnostics).
    std::vector<BoundaryPoint> boundary_points(std::size_t count, RngStream& rng) const
    {
        std::vector<BoundaryPoint> out;
        out.reserve(count);
        std::size_t guard = 0;
        const std::size_t max_tries = 1000 * count + 1000;
        while (out.size() < count && guard++ < max_tries) {
            if (auto p = propose_boundary_point(rng))
                out.push_back(std::move(*p));
        }
        return out;
    }

private:
    Domain(DomainKind k, int d) : kind_(k), dim_(d) {}

    static BoundaryFactor affine(int coord, double offset)
    {
        BoundaryFactor f;
        f.type = BoundaryFactor::Type::affine;
        f.coord = coord;
        f.offset = offset;
        return f;
    }

    static BoundaryFactor sphere(const Vector& c, double r)
    {
        BoundaryFactor f;
        f.type = BoundaryFactor::Type::sphere;
        f.center = c;
        f.radius = r;
        return f;
    }

    void set_support_box()
    {
        sup_lo_.resize(dim_);
        sup_hi_.resize(dim_);
        for (int i = 0; i < dim_; ++i) {
            auto [l, h] = support_bounds(support_[i]);
            sup_lo_[i] = l;
            sup_hi_[i] = h;
        }
    }

    void require_nonempty() const
    {
        for (int i = 0; i < dim_; ++i)
            if (!(lo_[i] < hi_[i]))
                throw std::invalid_argument("ball: intersection with the support is empty");
        RngStream rng(0x5EEDULL, 0);
        for (int t = 0; t < 20000; ++t) {
            Vector x(dim_);
            for (int i = 0; i < dim_; ++i)
                x[i] = lo_[i] + (hi_[i] - lo_[i]) * rng.uniform();
            if (contains(x))
                return;
        }
        throw std::invalid_argument("ball: intersection with the support is empty");
    }

    static Vector random_direction(int d, RngStream& rng)
    {
        Vector u(d);
        do {
            for (int i = 0; i < d; ++i)
                u[i] = rng.normal();
        } while (u.norm() == 0.0);
        return u / u.norm();
    }

    bool in_support_closure(const Vector& x) const
    {
        for (int i = 0; i < dim_; ++i)
            if (x[i] < sup_lo_[i] || x[i] > sup_hi_[i])
                return false;
        return true;
    }

    std::optional<BoundaryPoint> propose_boundary_point(RngStream& rng) const
    {
        if (kind_ == DomainKind::rectangle) {
            // face chosen with probability proportional to its (d-1)-volume
            std::vector<double> w;
            for (int k = 0; k < dim_; ++k) {
                double area = 1.0;
                for (int j = 0; j < dim_; ++j)
                    if (j != k)
                        area *= b_[j] - a_[j];
                w.push_back(area);
                w.push_back(area);
            }
            double total = 0.0;
            for (double v : w)
                total += v;
            double u = rng.uniform() * total;
            std::size_t face = 0;
            while (face + 1 < w.size() && u > w[face]) {
                u -= w[face];
                ++face;
            }
            const int k = static_cast<int>(face / 2);
            Vector x(dim_);
            for (int j = 0; j < dim_; ++j)
                x[j] = a_[j] + (b_[j] - a_[j]) * rng.uniform();
            x[k] = (face % 2 == 0) ? a_[k] : b_[k];
            return BoundaryPoint{x, true};
        }

        // sphere pieces plus finite support-edge cross sections
        struct Edge { int coord; double level; };
        std::vector<Edge> edges;
        if (kind_ == DomainKind::ball) {
            for (int k = 0; k < dim_; ++k) {
                for (double level : {sup_lo_[k], sup_hi_[k]}) {
                    if (!std::isfinite(level))
                        continue;
                    const double off = level - centers_[0][k];
                    if (radius_ * radius_ - off * off > 1e-12)
                        edges.push_back({k, level});
                }
            }
        }
        const std::size_t pieces = centers_.size() + edges.size();
        auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(pieces));
        pick = std::min(pick, pieces - 1);

        if (pick < centers_.size()) {
            const Vector x = centers_[pick] + radius_ * random_direction(dim_, rng);
            if (!in_support_closure(x))
                return std::nullopt;
            for (std::size_t j = 0; j < centers_.size(); ++j)
                if (j != pick && (x - centers_[j]).norm() < radius_)
                    return std::nullopt;
            return BoundaryPoint{x, true};
        }
        const Edge& e = edges[pick - centers_.size()];
        // uniform point in the ball's cross section on the hyperplane x_k = level
        const double off = e.level - centers_[0][e.coord];
        const double rr = std::sqrt(radius_ * radius_ - off * off);
        Vector x = centers_[0];
        x[e.coord] = e.level;
        for (int tries = 0; tries < 1000; ++tries) {
            Vector y = x;
            double s = 0.0;
            for (int j = 0; j < dim_; ++j) {
                if (j == e.coord)
                    continue;
                const double t = (2.0 * rng.uniform() - 1.0) * rr;
                y[j] += t;
                s += t * t;
            }
            if (s <= rr * rr && in_support_closure(y))
                return BoundaryPoint{y, false};
        }
        return std::nullopt;
    }

    DomainKind kind_;
    int dim_;
    std::vector<BoundaryFactor> factors_;
    std::vector<Support> support_;
    Vector lo_, hi_;
    Vector sup_lo_, sup_hi_;
    Vector a_, b_;
    std::vector<Vector> centers_;
    double radius_ = 0.0;
};

} // namespace smm
