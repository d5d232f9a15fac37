// smm: sample / estimate / simulate / report.
//
// Exit codes: 0 success (ineligible estimates included), 2 invalid input or
// configuration, 3 sampler failure, 4 data outside the truncation domain.

#include "smm/asymcov.hpp"
#include "smm/competitor.hpp"
#include "smm/config.hpp"
#include "smm/io.hpp"
#include "smm/mcbench.hpp"
#include "smm/stein.hpp"

#include <CLI11/CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace smm;

constexpr int kExitInput = 2;
constexpr int kExitSampler = 3;
constexpr int kExitOutside = 4;

struct DataOutside : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Json parse_json_arg(const std::string& arg, const char* what)
{
    try {
        if (!arg.empty() && arg[0] == '@')
            return Json::parse(read_file(arg.substr(1)));
        return Json::parse(arg);
    } catch (const Json::parse_error& e) {
        throw ConfigError(std::string(what) + ": " + e.what());
    }
}

std::vector<double> parse_list(const std::string& s, const char* what)
{
    std::vector<double> out;
    try {
        for (const auto& f : split_csv_line(s))
            out.push_back(parse_double(f));
    } catch (const InputError&) {
        throw ConfigError(std::string(what) + ": expected a comma-separated list of numbers");
    }
    return out;
}

ModelParams theta_from_flags(ModelKind kind, const std::string& mu, const std::string& sigma,
                             const std::string& theta)
{
    if (kind == ModelKind::truncated_normal) {
        if (mu.empty() || sigma.empty())
            throw ConfigError("tn model needs --mu and --sigma");
        const auto m = parse_list(mu, "--mu");
        const auto s = parse_list(sigma, "--sigma");
        const auto d = static_cast<Eigen::Index>(m.size());
        if (static_cast<Eigen::Index>(s.size()) != d * d)
            throw ConfigError("--sigma must list d*d entries in row order");
        Matrix S(d, d);
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j)
                S(i, j) = s[static_cast<std::size_t>(i * d + j)];
        try {
            return ModelParams(TNParams(Eigen::Map<const Vector>(m.data(), d), S));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    if (theta.empty())
        throw ConfigError("product models need --theta mu,sigma2,alpha,beta");
    const auto t = parse_list(theta, "--theta");
    if (t.size() != 4)
        throw ConfigError("--theta needs four values mu,sigma2,alpha,beta");
    try {
        return ModelParams::from_raw(kind, Eigen::Map<const Vector>(t.data(), 4));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

ModelKind model_from_flag(const std::string& s)
{
    try {
        return parse_model(s);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

void check_rows(const SampleMatrix& s, const Domain& domain, ModelKind kind)
{
    if (s.dim() != domain.dim())
        throw ConfigError("sample has " + std::to_string(s.dim()) + " columns but the domain is " +
                          std::to_string(domain.dim()) + "-dimensional");
    if (kind != ModelKind::truncated_normal && s.dim() != 2)
        throw ConfigError("product models need two columns");
    for (Eigen::Index i = 0; i < s.n(); ++i) {
        const Vector x = s.row(i);
        bool ok = domain.contains(x);
        if (ok && kind == ModelKind::normal_gamma)
            ok = x[1] > 0.0;
        if (ok && kind == ModelKind::normal_beta)
            ok = x[1] > 0.0 && x[1] < 1.0;
        if (!ok) {
            std::ostringstream msg;
            msg << "row " << (i + 1) << " (";
            for (Eigen::Index j = 0; j < x.size(); ++j)
                msg << (j ? ", " : "") << format_double(x[j]);
            msg << ") lies outside the domain";
            throw DataOutside(msg.str());
        }
    }
}

template <class P>
Json finish(Method method, ModelKind kind, int d, const EstimationResult<P>& r)
{
    return estimate_record(method, kind, d, r);
}

Json estimate_json(Method method, ModelKind kind, const SampleMatrix& s, const Domain& domain,
                   const MleOptions& mle, bool with_cov, double level)
{
    const int d = static_cast<int>(s.dim());
    if (with_cov && !(kind == ModelKind::truncated_normal && method == Method::stein))
        throw ConfigError("--with-cov is not supported for this model/method (truncated normal Stein only)");
    switch (kind) {
    case ModelKind::truncated_normal: {
        TNResult r = method == Method::stein ? tn_stein_estimate(s, domain)
                     : method == Method::mle ? tn_mle(s, domain, mle)
                                             : tn_score_matching(s, domain);
        Json j = finish(method, kind, d, r);
        if (with_cov) {
            if (r.eligible())
                j["covariance"] = covariance_record(r, sandwich_cov(s, domain), level, d);
            else
                j["covariance"] = nullptr;
        }
        return j;
    }
    case ModelKind::normal_gamma:
        return finish(method, kind, d,
                      method == Method::stein ? ng_stein_estimate(s, domain)
                      : method == Method::mle ? ng_mle(s, domain, mle)
                                              : ng_score_matching(s, domain));
    case ModelKind::normal_beta:
        return finish(method, kind, d,
                      method == Method::stein ? nb_stein_estimate(s, domain)
                      : method == Method::mle ? nb_mle(s, domain, mle)
                                              : nb_score_matching(s, domain));
    }
    throw std::logic_error("unknown model");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Stein method-of-moments estimators for truncated distributions"};
    app.require_subcommand(1);
    app.fallthrough();
    int verbosity = 0;
    app.add_flag("-v,--verbose", verbosity, "More output on stderr");

    // sample
    auto* sample = app.add_subcommand("sample", "Draw an i.i.d. sample from a truncated model");
    std::string model_s = "tn", mu_s, sigma_s, theta_s, domain_s, out_s;
    long long n = 0;
    std::uint64_t seed = 1, stream = 0;
    sample->add_option("--model", model_s, "tn | normal-gamma | normal-beta")->capture_default_str();
    sample->add_option("--mu", mu_s, "tn: location, comma separated");
    sample->add_option("--sigma", sigma_s, "tn: covariance entries in row order");
    sample->add_option("--theta", theta_s, "products: mu,sigma2,alpha,beta");
    sample->add_option("--domain", domain_s, "domain as JSON, or @file")->required();
    sample->add_option("-n,--n", n, "sample size")->required();
    sample->add_option("--seed", seed, "base seed")->capture_default_str();
    sample->add_option("--stream", stream, "stream index under the seed")->capture_default_str();
    sample->add_option("-o,--out", out_s, "output CSV (stdout when omitted)");

    // estimate
    auto* estimate = app.add_subcommand("estimate", "Estimate parameters from a sample CSV");
    std::string method_s = "stein", in_s;
    bool with_cov = false;
    double level = 0.95;
    int max_iterations = 100;
    bool reuse_partition = false;
    estimate->add_option("--method", method_s, "stein | mle | score-matching")->capture_default_str();
    estimate->add_option("--model", model_s, "tn | normal-gamma | normal-beta")->capture_default_str();
    estimate->add_option("--domain", domain_s, "domain as JSON, or @file")->required();
    estimate->add_option("-i,--in", in_s, "sample CSV")->required();
    estimate->add_flag("--with-cov", with_cov, "attach sandwich standard errors and intervals (tn, stein)");
    estimate->add_option("--level", level, "interval level")->capture_default_str();
    estimate->add_option("--max-iterations", max_iterations, "MLE iteration cap")->capture_default_str();
    estimate->add_flag("--reuse-partition", reuse_partition, "MLE: reuse cubature partitions between probes");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo experiment from a config file");
    std::string config_s, output_s;
    unsigned workers = 0;
    simulate->add_option("-c,--config", config_s, "experiment config (JSON)")->required();
    simulate->add_option("--workers", workers, "worker threads (0: config or all cores)");
    simulate->add_option("--output", output_s, "override the output prefix");

    // report
    auto* report = app.add_subcommand("report", "Recompute a report from a repetition log");
    std::string log_s;
    report->add_option("-c,--config", config_s, "experiment config (JSON)")->required();
    report->add_option("--log", log_s, "repetition log (default: <prefix>.reps.csv, prefix from --output or the config)");
    report->add_option("--output", output_s, "write <prefix>.summary.csv and <prefix>.md");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    try {
        if (*sample) {
            const ModelKind kind = model_from_flag(model_s);
            if (n < 1)
                throw ConfigError("--n must be at least 1");
            const ModelParams theta = theta_from_flags(kind, mu_s, sigma_s, theta_s);
            const Domain domain = parse_domain(parse_json_arg(domain_s, "--domain"));
            if (domain.dim() != theta.dim())
                throw ConfigError("parameter and domain dimensions differ");
            RngStream rng(seed, stream);
            const SampleMatrix s = draw_sample(theta, domain, n, rng);
            if (verbosity > 0)
                std::cerr << "acceptance rate " << s.acceptance_rate() << "\n";
            if (out_s.empty())
                write_sample_csv(std::cout, s.x);
            else
                write_file_atomic(out_s, sample_csv(s.x));
            return 0;
        }
        if (*estimate) {
            const ModelKind kind = model_from_flag(model_s);
            Method method;
            try {
                method = parse_method(method_s);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            if (!(level > 0.0 && level < 1.0))
                throw ConfigError("--level must lie in (0, 1)");
            const Domain domain = parse_domain(parse_json_arg(domain_s, "--domain"));
            const SampleMatrix s = read_sample_csv(in_s);
            check_rows(s, domain, kind);
            MleOptions mle;
            mle.optimizer.max_iterations = max_iterations;
            mle.reuse_partition = reuse_partition;
            std::cout << estimate_json(method, kind, s, domain, mle, with_cov, level).dump(2) << "\n";
            return 0;
        }
        if (*simulate) {
            ExperimentConfig cfg = load_experiment(config_s);
            if (!output_s.empty())
                cfg.output = output_s;
            const MetricsReport rep = run_experiment(cfg, workers);
            const std::string md = markdown_report(rep, setup_line(cfg));
            if (!cfg.output.empty()) {
                const ReportPaths p = write_report_files(rep, cfg);
                if (verbosity > 0)
                    std::cerr << "wrote " << p.summary << ", " << p.markdown << ", " << p.log << "\n";
            }
            std::cout << md;
            return 0;
        }
        if (*report) {
            const ExperimentConfig cfg = load_experiment(config_s);
            std::string path = log_s;
            if (path.empty()) {
                const std::string prefix = output_s.empty() ? cfg.output : output_s;
                if (prefix.empty())
                    throw ConfigError("no --log given and no output prefix");
                path = report_paths(prefix).log;
            }
            const auto records = parse_reps_log(read_file(path), cfg.theta0.kind(), cfg.theta0.dim());
            const MetricsReport rep = compute_metrics(cfg.name, cfg.theta0, cfg.estimators, records);
            const std::string md = markdown_report(rep, setup_line(cfg));
            if (!output_s.empty()) {
                const ReportPaths p = report_paths(output_s);
                write_file_atomic(p.summary, summary_csv(rep));
                write_file_atomic(p.markdown, md);
            }
            std::cout << md;
            return 0;
        }
    } catch (const SamplerError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSampler;
    } catch (const DataOutside& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitOutside;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const Json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
