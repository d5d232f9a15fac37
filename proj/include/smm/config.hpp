// JSON forms of domains, parameters, experiment configs and estimate records.

#pragma once

#include "smm/asymcov.hpp"
#include "smm/domain.hpp"
#include "smm/io.hpp"
#include "smm/mcbench.hpp"
#include "smm/model.hpp"
#include "smm/stein.hpp"

#include <nlohmann/json.hpp>

#include <set>
#include <string>
#include <vector>

namespace smm {

using Json = nlohmann::json;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void only_keys(const Json& j, std::initializer_list<const char*> allowed, const char* what)
{
    if (!j.is_object())
        throw ConfigError(std::string(what) + " must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k))
            throw ConfigError(std::string(what) + ": unknown field '" + k + "'");
}

inline const Json& need(const Json& j, const char* key, const char* what)
{
    if (!j.contains(key))
        throw ConfigError(std::string(what) + ": missing field '" + key + "'");
    return j.at(key);
}

inline double number(const Json& j, const std::string& what)
{
    if (!j.is_number())
        throw ConfigError(what + " must be a number");
    return j.get<double>();
}

inline Vector vector_of(const Json& j, const std::string& what)
{
    if (!j.is_array() || j.empty())
        throw ConfigError(what + " must be a non-empty array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
        v[static_cast<Eigen::Index>(i)] = number(j[i], what);
    return v;
}

inline Matrix matrix_of(const Json& j, const std::string& what)
{
    if (!j.is_array() || j.empty())
        throw ConfigError(what + " must be an array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const Vector first = vector_of(j[0], what);
    Matrix m(rows, first.size());
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Vector r = vector_of(j[static_cast<std::size_t>(i)], what);
        if (r.size() != m.cols())
            throw ConfigError(what + " rows must have equal length");
        m.row(i) = r.transpose();
    }
    return m;
}

inline Json to_json(const Vector& v)
{
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        a.push_back(v[i]);
    return a;
}

inline Json to_json(const Matrix& m)
{
    Json a = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        a.push_back(to_json(Vector(m.row(i).transpose())));
    return a;
}

inline Support parse_support(const std::string& s)
{
    for (Support k : {Support::reals, Support::positive_halfline, Support::unit_interval})
        if (s == to_string(k))
            return k;
    throw ConfigError("unknown support '" + s + "'");
}

template <class F>
auto rethrow_as_config(F&& f, const std::string& what)
{
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(what + ": " + e.what());
    }
}

} // namespace detail

/// {"kind": "rectangle", "a": [...], "b": [...]}
/// {"kind": "ball", "m": [...], "r": r, "support": ["reals", "positive_halfline"]}
/// {"kind": "union_of_balls", "centers": [[...], ...], "radius": r}
inline Domain parse_domain(const Json& j)
{
    using namespace detail;
    if (!j.is_object())
        throw ConfigError("domain must be an object");
    const std::string kind = need(j, "kind", "domain").get<std::string>();
    return rethrow_as_config([&]() -> Domain {
        if (kind == "rectangle") {
            only_keys(j, {"kind", "a", "b"}, "domain");
            return Domain::rectangle(vector_of(need(j, "a", "domain"), "domain.a"),
                                     vector_of(need(j, "b", "domain"), "domain.b"));
        }
        if (kind == "ball") {
            only_keys(j, {"kind", "m", "r", "support"}, "domain");
            std::vector<Support> sup;
            if (j.contains("support")) {
                if (!j["support"].is_array())
                    throw ConfigError("domain.support must be an array");
                for (const auto& s : j["support"])
                    sup.push_back(parse_support(s.get<std::string>()));
            }
            return Domain::ball(vector_of(need(j, "m", "domain"), "domain.m"), number(need(j, "r", "domain"), "domain.r"),
                                sup);
        }
        if (kind == "union_of_balls") {
            only_keys(j, {"kind", "centers", "radius"}, "domain");
            const Matrix c = matrix_of(need(j, "centers", "domain"), "domain.centers");
            std::vector<Vector> centers;
            for (Eigen::Index i = 0; i < c.rows(); ++i)
                centers.push_back(c.row(i).transpose());
            return Domain::union_of_balls(centers, number(need(j, "radius", "domain"), "domain.radius"));
        }
        throw ConfigError("unknown domain kind '" + kind + "'");
    }, "domain");
}

inline Json domain_to_json(const Domain& d)
{
    using detail::to_json;
    Json j;
    j["kind"] = to_string(d.kind());
    switch (d.kind()) {
    case DomainKind::rectangle:
        j["a"] = to_json(d.rect_lower());
        j["b"] = to_json(d.rect_upper());
        break;
    case DomainKind::ball: {
        j["m"] = to_json(d.centers()[0]);
        j["r"] = d.radius();
        Json s = Json::array();
        for (Support k : d.support())
            s.push_back(to_string(k));
        j["support"] = s;
        break;
    }
    case DomainKind::union_of_balls: {
        Json c = Json::array();
        for (const auto& v : d.centers())
            c.push_back(to_json(v));
        j["centers"] = c;
        j["radius"] = d.radius();
        break;
    }
    }
    return j;
}

/// TN: {"mu": [...], "sigma": [[...], ...]}; products: {"mu", "sigma2", "alpha", "beta"}.
inline ModelParams parse_theta(ModelKind kind, const Json& j)
{
    using namespace detail;
    return rethrow_as_config([&]() -> ModelParams {
        if (kind == ModelKind::truncated_normal) {
            only_keys(j, {"mu", "sigma"}, "theta");
            return ModelParams(TNParams(vector_of(need(j, "mu", "theta"), "theta.mu"),
                                        matrix_of(need(j, "sigma", "theta"), "theta.sigma")));
        }
        only_keys(j, {"mu", "sigma2", "alpha", "beta"}, "theta");
        Vector raw(4);
        raw << number(need(j, "mu", "theta"), "theta.mu"), number(need(j, "sigma2", "theta"), "theta.sigma2"),
            number(need(j, "alpha", "theta"), "theta.alpha"), number(need(j, "beta", "theta"), "theta.beta");
        return ModelParams::from_raw(kind, raw);
    }, "theta");
}

inline Json theta_to_json(const ModelParams& p)
{
    const Vector r = p.raw();
    Json j;
    if (p.kind() == ModelKind::truncated_normal) {
        const int d = p.dim();
        j["mu"] = detail::to_json(Vector(r.tail(d)));
        j["sigma"] = detail::to_json(unvec(r.head(d * d), d, d));
    } else {
        j["mu"] = r[0];
        j["sigma2"] = r[1];
        j["alpha"] = r[2];
        j["beta"] = r[3];
    }
    return j;
}

inline ExperimentConfig parse_experiment(const Json& j)
{
    using namespace detail;
    only_keys(j, {"name", "model", "theta0", "domain", "n", "reps", "estimators", "base_seed", "output", "workers",
                  "mle"},
              "config");
    ModelKind model;
    try {
        model = parse_model(need(j, "model", "config").get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    ExperimentConfig cfg(parse_theta(model, need(j, "theta0", "config")), parse_domain(need(j, "domain", "config")));
    try {
        if (j.contains("name"))
            cfg.name = j["name"].get<std::string>();
        const auto n = need(j, "n", "config").get<long long>();
        const auto reps = need(j, "reps", "config").get<long long>();
        if (n < 1)
            throw ConfigError("config: n must be at least 1");
        if (reps < 1)
            throw ConfigError("config: reps must be at least 1");
        cfg.n = n;
        cfg.reps = static_cast<std::size_t>(reps);
        if (j.contains("estimators")) {
            cfg.estimators.clear();
            for (const auto& e : j["estimators"])
                cfg.estimators.push_back(parse_method(e.get<std::string>()));
        }
        if (j.contains("base_seed"))
            cfg.base_seed = j["base_seed"].get<std::uint64_t>();
        if (j.contains("output"))
            cfg.output = j["output"].get<std::string>();
        if (j.contains("workers"))
            cfg.workers = j["workers"].get<unsigned>();
        if (j.contains("mle")) {
            const Json& m = j["mle"];
            only_keys(m, {"max_iterations", "gradient_tolerance", "step_tolerance", "quad_tol", "reuse_partition"},
                      "config.mle");
            if (m.contains("max_iterations"))
                cfg.mle.optimizer.max_iterations = m["max_iterations"].get<int>();
            if (m.contains("gradient_tolerance"))
                cfg.mle.optimizer.gradient_tolerance = number(m["gradient_tolerance"], "mle.gradient_tolerance");
            if (m.contains("step_tolerance"))
                cfg.mle.optimizer.step_tolerance = number(m["step_tolerance"], "mle.step_tolerance");
            if (m.contains("quad_tol"))
                cfg.mle.quad_tol = number(m["quad_tol"], "mle.quad_tol");
            if (m.contains("reuse_partition"))
                cfg.mle.reuse_partition = m["reuse_partition"].get<bool>();
        }
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

inline ExperimentConfig load_experiment(const std::string& path)
{
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const Json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_experiment(j);
}

// --- estimate records ---------------------------------------------------------

inline Json named_values(ModelKind kind, int d, const Vector& raw)
{
    const auto names = param_names(kind, d);
    Json j = Json::object();
    for (std::size_t k = 0; k < names.size() && static_cast<Eigen::Index>(k) < raw.size(); ++k) {
        const double v = raw[static_cast<Eigen::Index>(k)];
        if (std::isfinite(v))
            j[names[k]] = v;
        else
            j[names[k]] = nullptr;
    }
    return j;
}

template <class P>
Json estimate_record(Method method, ModelKind kind, int d, const EstimationResult<P>& r)
{
    Json j;
    j["method"] = to_string(method);
    j["model"] = to_string(kind);
    j["eligible"] = r.eligible();
    j["reason"] = to_string(r.reason);
    j["theta_hat"] = named_values(kind, d, r.raw);
    Json diag;
    auto put = [&](const char* key, double v) {
        if (std::isfinite(v))
            diag[key] = v;
    };
    put("rcond", r.diagnostics.rcond);
    put("det_location", r.diagnostics.det_location);
    put("det_shape", r.diagnostics.det_shape);
    put("mean_f1", r.diagnostics.mean_f1);
    put("objective", r.diagnostics.objective);
    if (method == Method::mle)
        diag["iterations"] = r.diagnostics.iterations;
    if (!r.diagnostics.note.empty())
        diag["note"] = r.diagnostics.note;
    j["diagnostics"] = diag.is_null() ? Json::object() : diag;
    return j;
}

inline Json covariance_record(const TNResult& r, const SandwichCovariance& cov, double level, int d)
{
    const auto names = param_names(ModelKind::truncated_normal, d);
    Json j;
    j["n"] = cov.n;
    j["level"] = level;
    j["std_errors"] = named_values(ModelKind::truncated_normal, d, cov.std_errors);
    Json iv = Json::object();
    const auto ci = confidence_intervals(r, cov, level);
    for (std::size_t k = 0; k < names.size(); ++k)
        iv[names[k]] = Json::array({ci[k].lower, ci[k].upper});
    j["intervals"] = iv;
    j["asymptotic_covariance"] = detail::to_json(cov.cov);
    return j;
}

} // namespace smm
