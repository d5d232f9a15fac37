// Monte Carlo experiments: repeated sampling from a fixed theta0, running the
// requested estimators on each sample, and the bias / MSE / NE summaries.
//
// Repetition r always draws from RngStream(base_seed, r) and results are
// aggregated in repetition order, so reports do not depend on the number of
// worker threads.

#pragma once

#include "smm/competitor.hpp"
#include "smm/domain.hpp"
#include "smm/io.hpp"
#include "smm/model.hpp"
#include "smm/rng.hpp"
#include "smm/sampler.hpp"
#include "smm/stein.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace smm {

enum class Method { stein, mle, score_matching };

inline const char* to_string(Method m)
{
    switch (m) {
    case Method::stein: return "stein";
    case Method::mle: return "mle";
    case Method::score_matching: return "score-matching";
    }
    return "?";
}

/// Column label used in tables: ST, ML, SM.
inline const char* short_label(Method m)
{
    switch (m) {
    case Method::stein: return "ST";
    case Method::mle: return "ML";
    case Method::score_matching: return "SM";
    }
    return "?";
}

inline Method parse_method(const std::string& s)
{
    if (s == "stein" || s == "st")
        return Method::stein;
    if (s == "mle" || s == "ml")
        return Method::mle;
    if (s == "score-matching" || s == "score_matching" || s == "sm")
        return Method::score_matching;
    throw std::invalid_argument("unknown estimator '" + s + "'");
}

inline Reason parse_reason(const std::string& s)
{
    for (Reason r : {Reason::ok, Reason::non_pd_sigma, Reason::singular_system, Reason::zero_mean_f1,
                     Reason::negative_scalar_param, Reason::optimizer_failure})
        if (s == to_string(r))
            return r;
    throw std::invalid_argument("unknown reason '" + s + "'");
}

/// Parameters of any of the three models.
class ModelParams {
public:
    using Variant = std::variant<TNParams, NormalGammaParams, NormalBetaParams>;

    ModelParams(TNParams p) : v_(std::move(p)) {}
    ModelParams(NormalGammaParams p) : v_(p) {}
    ModelParams(NormalBetaParams p) : v_(p) {}

    /// Inverse of raw(): (vec Sigma, mu) or (mu, sigma2, alpha, beta).
    static ModelParams from_raw(ModelKind kind, const Vector& raw)
    {
        switch (kind) {
        case ModelKind::truncated_normal: {
            const auto len = raw.size();
            int d = 0;
            while (static_cast<Eigen::Index>(d) * d + d < len)
                ++d;
            if (static_cast<Eigen::Index>(d) * d + d != len || d < 1)
                throw std::invalid_argument("truncated normal parameters need d^2 + d values");
            return ModelParams(TNParams(raw.tail(d), unvec(raw.head(d * d), d, d)));
        }
        case ModelKind::normal_gamma:
            if (raw.size() != 4)
                throw std::invalid_argument("normal-gamma parameters need 4 values");
            return ModelParams(NormalGammaParams(raw[0], raw[1], raw[2], raw[3]));
        case ModelKind::normal_beta:
            if (raw.size() != 4)
                throw std::invalid_argument("normal-beta parameters need 4 values");
            return ModelParams(NormalBetaParams(raw[0], raw[1], raw[2], raw[3]));
        }
        throw std::logic_error("ModelParams: unknown model");
    }

    ModelKind kind() const
    {
        return v_.index() == 0 ? ModelKind::truncated_normal
                               : (v_.index() == 1 ? ModelKind::normal_gamma : ModelKind::normal_beta);
    }

    int dim() const { return v_.index() == 0 ? std::get<TNParams>(v_).dim() : 2; }

    Vector raw() const
    {
        if (const auto* t = std::get_if<TNParams>(&v_)) {
            Vector r(t->dim() * t->dim() + t->dim());
            r << vec(t->sigma()), t->mu();
            return r;
        }
        if (const auto* g = std::get_if<NormalGammaParams>(&v_))
            return g->as_vector();
        return std::get<NormalBetaParams>(v_).as_vector();
    }

    const Variant& get() const { return v_; }

private:
    Variant v_;
};

/// Names of the entries of raw(), in order.
inline std::vector<std::string> param_names(ModelKind kind, int d)
{
    std::vector<std::string> out;
    if (kind == ModelKind::truncated_normal) {
        for (int j = 0; j < d; ++j)
            for (int i = 0; i < d; ++i)
                out.push_back("Sigma" + std::to_string(i + 1) + std::to_string(j + 1));
        for (int i = 0; i < d; ++i)
            out.push_back("mu" + std::to_string(i + 1));
    } else {
        out = {"mu", "sigma2", "alpha", "beta"};
    }
    return out;
}

inline SampleMatrix draw_sample(const ModelParams& theta, const Domain& domain, Eigen::Index n, RngStream& rng)
{
    return std::visit([&](const auto& p) { return sample_truncated(p, domain, n, rng); }, theta.get());
}

/// Model-independent view of an estimate.
struct GenericEstimate {
    Method method = Method::stein;
    Reason reason = Reason::ok;
    Vector raw;
    int iterations = 0;
    std::string note;

    bool eligible() const { return reason == Reason::ok; }
};

template <class P>
GenericEstimate to_generic(Method m, const EstimationResult<P>& r)
{
    GenericEstimate g;
    g.method = m;
    g.reason = r.reason;
    g.raw = r.raw;
    g.iterations = r.diagnostics.iterations;
    g.note = r.diagnostics.note;
    return g;
}

inline GenericEstimate run_estimator(Method m, ModelKind kind, const SampleMatrix& s, const Domain& domain,
                                     const MleOptions& mle = {})
{
    switch (kind) {
    case ModelKind::truncated_normal:
        switch (m) {
        case Method::stein: return to_generic(m, tn_stein_estimate(s, domain));
        case Method::mle: return to_generic(m, tn_mle(s, domain, mle));
        case Method::score_matching: return to_generic(m, tn_score_matching(s, domain));
        }
        break;
    case ModelKind::normal_gamma:
        switch (m) {
        case Method::stein: return to_generic(m, ng_stein_estimate(s, domain));
        case Method::mle: return to_generic(m, ng_mle(s, domain, mle));
        case Method::score_matching: return to_generic(m, ng_score_matching(s, domain));
        }
        break;
    case ModelKind::normal_beta:
        switch (m) {
        case Method::stein: return to_generic(m, nb_stein_estimate(s, domain));
        case Method::mle: return to_generic(m, nb_mle(s, domain, mle));
        case Method::score_matching: return to_generic(m, nb_score_matching(s, domain));
        }
        break;
    }
    throw std::logic_error("run_estimator: unknown model or method");
}

struct ExperimentConfig {
    std::string name = "experiment";
    ModelParams theta0;
    Domain domain;
    Eigen::Index n = 1000;
    std::size_t reps = 1000;
    std::vector<Method> estimators = {Method::stein};
    std::uint64_t base_seed = 1;
    /// Path prefix for <output>.summary.csv, <output>.md and <output>.reps.csv;
    /// empty means no files.
    std::string output;
    unsigned workers = 0;  // 0: hardware concurrency
    MleOptions mle;

    ExperimentConfig(ModelParams theta, Domain dom) : theta0(std::move(theta)), domain(std::move(dom)) {}

    void validate() const
    {
        if (reps < 1)
            throw std::invalid_argument("config: reps must be at least 1");
        if (n < 1)
            throw std::invalid_argument("config: n must be at least 1");
        if (estimators.empty())
            throw std::invalid_argument("config: no estimators requested");
        if (theta0.dim() != domain.dim())
            throw std::invalid_argument("config: theta0 and domain dimensions differ");
        if (theta0.kind() != ModelKind::truncated_normal && domain.kind() == DomainKind::union_of_balls)
            throw std::invalid_argument("config: product models need a rectangle or ball domain");
        for (Method m : estimators)
            if (m == Method::mle && theta0.kind() == ModelKind::truncated_normal && theta0.dim() > 3)
                throw std::invalid_argument("config: the MLE competitor supports d <= 3 only");
        mle.optimizer.validate();
    }
};

struct RepRecord {
    std::size_t rep = 0;
    GenericEstimate estimate;
};

// --- metrics -------------------------------------------------------------------

inline double metric_mu_error(const Vector& mu0, const Vector& mu_hat)
{
    if (mu0.size() != mu_hat.size())
        throw std::invalid_argument("metric_mu_error: dimension mismatch");
    return (mu0 - mu_hat).norm();
}

/// Frobenius norm, i.e. the Euclidean norm of vec(Sigma0 - Sigma_hat).
inline double metric_sigma_error(const Matrix& sigma0, const Matrix& sigma_hat)
{
    if (sigma0.rows() != sigma_hat.rows() || sigma0.cols() != sigma_hat.cols())
        throw std::invalid_argument("metric_sigma_error: dimension mismatch");
    return (sigma0 - sigma_hat).norm();
}

inline std::optional<double> metric_bias(double theta0, const std::vector<double>& estimates)
{
    if (estimates.empty())
        return std::nullopt;
    double s = 0.0;
    for (double e : estimates)
        s += e;
    return s / static_cast<double>(estimates.size()) - theta0;
}

inline std::optional<double> metric_mse(double theta0, const std::vector<double>& estimates)
{
    if (estimates.empty())
        return std::nullopt;
    double s = 0.0;
    for (double e : estimates)
        s += (e - theta0) * (e - theta0);
    return s / static_cast<double>(estimates.size());
}

/// Ineligible results per 100.
template <class Result>
double metric_ne(const std::vector<Result>& results)
{
    if (results.empty())
        throw std::invalid_argument("metric_ne: no results");
    std::size_t bad = 0;
    for (const auto& r : results)
        if (!r.eligible())
            ++bad;
    return 100.0 * static_cast<double>(bad) / static_cast<double>(results.size());
}

struct ParamMetric {
    std::string name;
    std::optional<double> bias, mse;
};

struct EstimatorMetrics {
    Method method = Method::stein;
    std::size_t reps = 0;
    std::size_t eligible_count = 0;
    double ne_per_100 = 0.0;
    // truncated normal: mean Euclidean error of mu, mean Frobenius error of Sigma
    std::optional<double> mu_mse, sigma_mse;
    // product models: per scalar parameter
    std::vector<ParamMetric> params;
    std::map<std::string, std::size_t> reasons;
};

struct MetricsReport {
    std::string name;
    ModelKind model = ModelKind::truncated_normal;
    int dim = 0;
    Vector theta0;
    std::vector<EstimatorMetrics> estimators;
    std::vector<RepRecord> records;  // rep-major, estimator order within a rep
};

inline MetricsReport compute_metrics(const std::string& name, const ModelParams& theta0,
                                     const std::vector<Method>& methods, const std::vector<RepRecord>& records)
{
    MetricsReport rep;
    rep.name = name;
    rep.model = theta0.kind();
    rep.dim = theta0.dim();
    rep.theta0 = theta0.raw();
    rep.records = records;
    const int d = rep.dim;
    const auto names = param_names(rep.model, d);
    for (Method m : methods) {
        EstimatorMetrics em;
        em.method = m;
        std::vector<GenericEstimate> all;
        std::vector<std::vector<double>> per_param(static_cast<std::size_t>(rep.theta0.size()));
        double mu_sum = 0.0, sigma_sum = 0.0;
        for (const auto& r : records) {
            if (r.estimate.method != m)
                continue;
            all.push_back(r.estimate);
            ++em.reasons[to_string(r.estimate.reason)];
            if (!r.estimate.eligible())
                continue;
            ++em.eligible_count;
            const Vector& x = r.estimate.raw;
            if (rep.model == ModelKind::truncated_normal) {
                mu_sum += metric_mu_error(rep.theta0.tail(d), x.tail(d));
                sigma_sum += metric_sigma_error(unvec(rep.theta0.head(d * d), d, d), unvec(x.head(d * d), d, d));
            } else {
                for (Eigen::Index k = 0; k < x.size(); ++k)
                    per_param[static_cast<std::size_t>(k)].push_back(x[k]);
            }
        }
        em.reps = all.size();
        em.ne_per_100 = all.empty() ? 0.0 : metric_ne(all);
        if (rep.model == ModelKind::truncated_normal) {
            if (em.eligible_count > 0) {
                em.mu_mse = mu_sum / static_cast<double>(em.eligible_count);
                em.sigma_mse = sigma_sum / static_cast<double>(em.eligible_count);
            }
        } else {
            for (std::size_t k = 0; k < per_param.size(); ++k)
                em.params.push_back({names[k], metric_bias(rep.theta0[static_cast<Eigen::Index>(k)], per_param[k]),
                                     metric_mse(rep.theta0[static_cast<Eigen::Index>(k)], per_param[k])});
        }
        rep.estimators.push_back(std::move(em));
    }
    return rep;
}

/// Runs one repetition: sample from stream `rep`, apply every estimator.
inline std::vector<GenericEstimate> run_repetition(const ExperimentConfig& cfg, std::size_t rep)
{
    RngStream rng(cfg.base_seed, rep);
    SampleMatrix s;
    try {
        s = draw_sample(cfg.theta0, cfg.domain, cfg.n, rng);
    } catch (const SamplerError& e) {
        throw SamplerError("experiment '" + cfg.name + "', repetition " + std::to_string(rep) + ": " + e.what());
    }
    std::vector<GenericEstimate> out;
    for (Method m : cfg.estimators) {
        if (m == Method::stein) {
            out.push_back(run_estimator(m, cfg.theta0.kind(), s, cfg.domain, cfg.mle));
            continue;
        }
        // competitor failures are outcomes, never harness errors
        try {
            out.push_back(run_estimator(m, cfg.theta0.kind(), s, cfg.domain, cfg.mle));
        } catch (const std::exception& e) {
            GenericEstimate g;
            g.method = m;
            g.reason = m == Method::mle ? Reason::optimizer_failure : Reason::singular_system;
            g.raw = Vector::Constant(cfg.theta0.raw().size(), std::numeric_limits<double>::quiet_NaN());
            g.note = e.what();
            out.push_back(std::move(g));
        }
    }
    return out;
}

inline MetricsReport run_experiment(const ExperimentConfig& cfg, unsigned workers = 0)
{
    cfg.validate();
    if (workers == 0)
        workers = cfg.workers;
    if (workers == 0)
        workers = std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, cfg.reps));

    std::vector<std::vector<GenericEstimate>> results(cfg.reps);
    std::vector<std::exception_ptr> errors(cfg.reps);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    auto work = [&] {
        for (;;) {
            const std::size_t r = next.fetch_add(1);
            if (r >= cfg.reps || failed.load())
                return;
            try {
                results[r] = run_repetition(cfg, r);
            } catch (...) {
                errors[r] = std::current_exception();
                failed.store(true);
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back(work);
        for (auto& t : pool)
            t.join();
    }
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);

    std::vector<RepRecord> records;
    records.reserve(cfg.reps * cfg.estimators.size());
    for (std::size_t r = 0; r < cfg.reps; ++r)
        for (auto& g : results[r])
            records.push_back({r, std::move(g)});
    return compute_metrics(cfg.name, cfg.theta0, cfg.estimators, records);
}

// --- report output ---------------------------------------------------------------

namespace detail {
inline std::string opt_str(const std::optional<double>& v)
{
    return v ? format_double(*v) : "";
}

inline std::string short_num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

inline std::string short_opt(const std::optional<double>& v)
{
    return v ? short_num(*v) : "-";
}
} // namespace detail

/// One row per estimator x parameter block.
inline std::string summary_csv(const MetricsReport& rep)
{
    std::ostringstream os;
    os << "estimator,parameter,bias,mse,ne_per_100,eligible,reps\n";
    for (const auto& e : rep.estimators) {
        auto row = [&](const std::string& p, const std::optional<double>& b, const std::optional<double>& m) {
            os << to_string(e.method) << ',' << p << ',' << detail::opt_str(b) << ',' << detail::opt_str(m) << ','
               << format_double(e.ne_per_100) << ',' << e.eligible_count << ',' << e.reps << '\n';
        };
        if (rep.model == ModelKind::truncated_normal) {
            row("mu", std::nullopt, e.mu_mse);
            row("Sigma", std::nullopt, e.sigma_mse);
        } else {
            for (const auto& p : e.params)
                row(p.name, p.bias, p.mse);
        }
    }
    return os.str();
}

inline std::string reps_log_csv(const MetricsReport& rep)
{
    std::ostringstream os;
    os << "rep,estimator,eligible,reason,iterations";
    for (const auto& n : param_names(rep.model, rep.dim))
        os << ',' << n;
    os << '\n';
    for (const auto& r : rep.records) {
        os << r.rep << ',' << to_string(r.estimate.method) << ',' << (r.estimate.eligible() ? 1 : 0) << ','
           << to_string(r.estimate.reason) << ',' << r.estimate.iterations;
        for (Eigen::Index k = 0; k < r.estimate.raw.size(); ++k)
            os << ',' << format_double(r.estimate.raw[k]);
        os << '\n';
    }
    return os.str();
}

/// Inverse of reps_log_csv (notes are not logged).
inline std::vector<RepRecord> parse_reps_log(const std::string& text, ModelKind model, int dim)
{
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line))
        throw InputError("repetition log is empty");
    const std::size_t k = param_names(model, dim).size();
    std::vector<RepRecord> out;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        const auto f = split_csv_line(line);
        if (f.size() != 5 + k)
            throw InputError("repetition log row has the wrong number of fields");
        RepRecord r;
        r.rep = std::stoull(f[0]);
        r.estimate.method = parse_method(f[1]);
        r.estimate.reason = parse_reason(f[3]);
        r.estimate.iterations = std::stoi(f[4]);
        r.estimate.raw.resize(static_cast<Eigen::Index>(k));
        for (std::size_t j = 0; j < k; ++j)
            r.estimate.raw[static_cast<Eigen::Index>(j)] = parse_double(f[5 + j]);
        out.push_back(std::move(r));
    }
    return out;
}

inline std::string markdown_report(const MetricsReport& rep, const std::string& setup = {})
{
    std::ostringstream os;
    os << "# " << rep.name << "\n\n";
    if (!setup.empty())
        os << setup << "\n\n";
    os << "theta0 (" << to_string(rep.model) << "): (";
    for (Eigen::Index k = 0; k < rep.theta0.size(); ++k)
        os << (k ? ", " : "") << detail::short_num(rep.theta0[k]);
    os << ")\n\n";
    if (rep.model == ModelKind::truncated_normal) {
        os << "| estimator | MSE(mu) | MSE(Sigma) | NE |\n|---|---|---|---|\n";
        for (const auto& e : rep.estimators)
            os << "| " << short_label(e.method) << " | " << detail::short_opt(e.mu_mse) << " | "
               << detail::short_opt(e.sigma_mse) << " | " << detail::short_num(e.ne_per_100) << " |\n";
        os << "\nMSE(mu) is the mean Euclidean error of mu, MSE(Sigma) the mean Frobenius error of Sigma,"
              " both over eligible repetitions. NE counts ineligible repetitions per 100.\n";
    } else {
        os << "| parameter |";
        for (const char* what : {"Bias", "MSE"})
            for (const auto& e : rep.estimators)
                os << ' ' << what << ' ' << short_label(e.method) << " |";
        os << "\n|---|";
        for (std::size_t i = 0; i < 2 * rep.estimators.size(); ++i)
            os << "---|";
        os << '\n';
        const auto names = param_names(rep.model, rep.dim);
        for (std::size_t k = 0; k < names.size(); ++k) {
            os << "| " << names[k] << " |";
            for (const auto& e : rep.estimators)
                os << ' ' << detail::short_opt(e.params[k].bias) << " |";
            for (const auto& e : rep.estimators)
                os << ' ' << detail::short_opt(e.params[k].mse) << " |";
            os << '\n';
        }
        os << "\nNE per 100:";
        for (const auto& e : rep.estimators)
            os << ' ' << short_label(e.method) << ' ' << detail::short_num(e.ne_per_100) << ';';
        os << "\n\nBias is mean(estimate) - theta0 and MSE is mean((estimate - theta0)^2), per parameter,"
              " over eligible repetitions.\n";
    }
    for (const auto& e : rep.estimators)
        if (e.method == Method::score_matching) {
            os << "\nScore matching uses the Euclidean distance to the domain boundary as weight.\n";
            break;
        }
    os << "\nIneligibility reasons:";
    for (const auto& e : rep.estimators) {
        os << "\n- " << short_label(e.method) << ":";
        for (const auto& [reason, count] : e.reasons)
            os << ' ' << reason << '=' << count;
    }
    os << '\n';
    return os.str();
}

inline std::string setup_line(const ExperimentConfig& cfg)
{
    std::ostringstream os;
    os << "n = " << cfg.n << ", repetitions = " << cfg.reps << ", base seed = " << cfg.base_seed
       << ", domain = " << to_string(cfg.domain.kind());
    return os.str();
}

struct ReportPaths {
    std::string summary, markdown, log;
};

inline ReportPaths report_paths(const std::string& prefix)
{
    return {prefix + ".summary.csv", prefix + ".md", prefix + ".reps.csv"};
}

inline ReportPaths write_report_files(const MetricsReport& rep, const ExperimentConfig& cfg)
{
    if (cfg.output.empty())
        throw std::invalid_argument("write_report_files: no output prefix configured");
    const ReportPaths p = report_paths(cfg.output);
    write_file_atomic(p.summary, summary_csv(rep));
    write_file_atomic(p.markdown, markdown_report(rep, setup_line(cfg)));
    write_file_atomic(p.log, reps_log_csv(rep));
    return p;
}

} // namespace smm
