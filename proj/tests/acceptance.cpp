// Acceptance suite: one verdict line per criterion.
//
//   acceptance [--criterion N]...
//
// Exit status is nonzero when a check fails that is not listed as a known gap.
// Known gaps still print FAIL.

#include "smm/asymcov.hpp"
#include "smm/competitor.hpp"
#include "smm/mcbench.hpp"
#include "smm/quad.hpp"
#include "smm/sampler.hpp"
#include "smm/stein.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

using namespace smm;

namespace {

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

Domain square() { return Domain::rectangle(v2(-1, -1), v2(1, 1)); }
Domain ng_disc() { return Domain::ball(v2(0, 2), 1.0, {Support::reals, Support::positive_halfline}); }
Domain nb_disc() { return Domain::ball(v2(0, 0.5), 0.5, {Support::reals, Support::unit_interval}); }

struct Check {
    std::string what;
    bool pass;
    bool known_gap = false;
};

struct Outcome {
    std::vector<Check> checks;

    void add(std::string what, bool pass, bool known_gap = false)
    {
        checks.push_back({std::move(what), pass, known_gap});
    }
    bool pass() const
    {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
    }
    bool unexpected_failure() const
    {
        return std::any_of(checks.begin(), checks.end(), [](const Check& c) { return !c.pass && !c.known_gap; });
    }
};

std::string fmt(const char* f, double a)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string fmt(const char* f, double a, double b)
{
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

bool within_rel(double got, double target, double rel) { return std::abs(got - target) <= rel * std::abs(target); }

const ParamMetric& param(const EstimatorMetrics& em, const std::string& name)
{
    for (const auto& p : em.params)
        if (p.name == name)
            return p;
    throw std::logic_error("no parameter " + name);
}

const EstimatorMetrics& method(const MetricsReport& r, Method m)
{
    for (const auto& e : r.estimators)
        if (e.method == m)
            return e;
    throw std::logic_error("estimator missing from report");
}

// 1. Stein identity at the truth, n = 1e6.
Outcome criterion1()
{
    Outcome o;
    const std::size_t n = 1'000'000;
    RngStream rng(20231);
    {
        const TNParams t(v2(0, 0), Matrix::Identity(2, 2));
        const double z = stein_residual(t, sample_truncated(t, square(), n, rng), tn_test_functions(square())).max_z();
        o.add(fmt("TN max |z| = %.2f (< 3)", z), z < 3.0);
    }
    {
        const NormalGammaParams p(0, 1, 1, 1);
        const double z =
            stein_residual(p, sample_truncated(p, ng_disc(), n, rng), product_test_functions(ng_disc())).max_z();
        o.add(fmt("normal-gamma max |z| = %.2f (< 3)", z), z < 3.0);
    }
    {
        const NormalBetaParams p(0, 1, 1, 1.5);
        const double z =
            stein_residual(p, sample_truncated(p, nb_disc(), n, rng), product_test_functions(nb_disc())).max_z();
        o.add(fmt("normal-beta max |z| = %.2f (< 3)", z), z < 3.0);
    }
    return o;
}

// 2. Root property over 1000 random samples.
Outcome criterion2()
{
    Outcome o;
    RngStream rng(777);
    double worst = 0.0;
    std::size_t eligible = 0, total = 0;
    const auto tn_tf = tn_test_functions(square());
    const auto ng_tf = product_test_functions(ng_disc());
    const auto nb_tf = product_test_functions(nb_disc());
    for (int i = 0; i < 1000; ++i) {
        const auto n = static_cast<Eigen::Index>(20 + rng.uniform() * 480);
        ++total;
        switch (i % 3) {
        case 0: {
            Matrix S(2, 2);
            const double a = 0.3 + rng.uniform(), b = 0.3 + rng.uniform(), c = 0.4 * (rng.uniform() - 0.5);
            S << a, c, c, b;
            const TNParams t(v2(rng.uniform() - 0.5, rng.uniform() - 0.5), S);
            const auto s = sample_truncated(t, square(), n, rng);
            const TNResult r = tn_stein_estimate(s, tn_tf);
            if (!r.eligible())
                break;
            ++eligible;
            worst = std::max(
                worst, tn_stein_residual(r.diagnostics.mu_tilde, r.diagnostics.sigma_tilde, s, tn_tf).max_relative());
            break;
        }
        case 1: {
            const NormalGammaParams p(0.4 * (rng.uniform() - 0.5), 0.2 + rng.uniform(), 0.5 + 2 * rng.uniform(),
                                      0.5 + 2 * rng.uniform());
            const auto s = sample_truncated(p, ng_disc(), n, rng);
            const NGResult r = ng_stein_estimate(s, ng_tf);
            if (!r.eligible())
                break;
            ++eligible;
            worst = std::max(worst, stein_residual(*r.theta_hat, s, ng_tf).max_relative());
            break;
        }
        default: {
            const NormalBetaParams p(0.4 * (rng.uniform() - 0.5), 0.2 + rng.uniform(), 0.5 + 3 * rng.uniform(),
                                     0.5 + 3 * rng.uniform());
            const auto s = sample_truncated(p, nb_disc(), n, rng);
            const NBResult r = nb_stein_estimate(s, nb_tf);
            if (!r.eligible())
                break;
            ++eligible;
            worst = std::max(worst, stein_residual(*r.theta_hat, s, nb_tf).max_relative());
            break;
        }
        }
    }
    o.add(fmt("max relative residual %.2e over %.0f eligible estimates (< 1e-8)", worst, double(eligible)),
          worst < 1e-8 && eligible > total / 2);
    return o;
}

MetricsReport run(ExperimentConfig cfg)
{
    return run_experiment(cfg);
}

ExperimentConfig tn_row(double s, std::uint64_t seed)
{
    ExperimentConfig cfg(TNParams(v2(0, 0), s * Matrix::Identity(2, 2)), square());
    cfg.n = 1000;
    cfg.reps = 1000;
    cfg.base_seed = seed;
    cfg.estimators = {Method::stein};
    return cfg;
}

// 3. TN table, Stein columns.
Outcome criterion3()
{
    Outcome o;
    {
        const auto& st = method(run(tn_row(1.0, 101)), Method::stein);
        o.add(fmt("I: MSE(mu) %.4f vs 0.085 +-20%%, MSE(Sigma) %.4f vs 0.393 +-25%%", *st.mu_mse, *st.sigma_mse),
              within_rel(*st.mu_mse, 0.085, 0.20) && within_rel(*st.sigma_mse, 0.393, 0.25));
    }
    {
        const auto& st = method(run(tn_row(0.2, 105)), Method::stein);
        o.add(fmt("0.2I: MSE(mu) %.4f vs 0.021 +-20%%, MSE(Sigma) %.4f vs 0.019 +-25%%", *st.mu_mse, *st.sigma_mse),
              within_rel(*st.mu_mse, 0.021, 0.20) && within_rel(*st.sigma_mse, 0.019, 0.25));
    }
    {
        const auto& st = method(run(tn_row(2.0, 104)), Method::stein);
        o.add(fmt("2I: MSE(mu) %.4f vs 0.286 +-25%%, MSE(Sigma) %.3f (< 10)", *st.mu_mse, *st.sigma_mse),
              within_rel(*st.mu_mse, 0.286, 0.25) && *st.sigma_mse < 10.0);
    }
    return o;
}

// 4. Normal-gamma table, row (0, 0.1, 0.5, 3).
Outcome criterion4()
{
    Outcome o;
    ExperimentConfig cfg(NormalGammaParams(0, 0.1, 0.5, 3), ng_disc());
    cfg.n = 500;
    cfg.reps = 1000;
    cfg.base_seed = 204;
    cfg.estimators = {Method::stein, Method::mle};
    cfg.mle.optimizer.max_iterations = 100;
    const MetricsReport r = run(cfg);
    const auto& st = method(r, Method::stein);
    const auto& ml = method(r, Method::mle);
    const double mu = param(st, "mu").mse.value_or(NAN), s2 = param(st, "sigma2").mse.value_or(NAN);
    o.add(fmt("ST MSE(mu) %.3e vs 3.82e-4 +-25%%", mu), within_rel(mu, 3.82e-4, 0.25));
    o.add(fmt("ST MSE(sigma2) %.3e vs 7.8e-3 +-25%%", s2), within_rel(s2, 7.8e-3, 0.25), true);
    o.add(fmt("ML NE %.1f per 100 (>= 90)", ml.ne_per_100), ml.ne_per_100 >= 90.0, true);
    return o;
}

// 5. Normal-beta table, row (0.5, 0.1, 4, 5).
Outcome criterion5()
{
    Outcome o;
    ExperimentConfig cfg(NormalBetaParams(0.5, 0.1, 4, 5), nb_disc());
    cfg.n = 500;
    cfg.reps = 1000;
    cfg.base_seed = 302;
    cfg.estimators = {Method::stein, Method::score_matching};
    const MetricsReport r = run(cfg);
    const auto& st = method(r, Method::stein);
    const auto& sm = method(r, Method::score_matching);
    const double mu = param(st, "mu").mse.value_or(NAN), ba = param(st, "alpha").bias.value_or(NAN);
    const double sm_mu = param(sm, "mu").mse.value_or(NAN);
    o.add(fmt("ST MSE(mu) %.4f vs 0.011 +-30%%", mu), within_rel(mu, 0.011, 0.30));
    const double a_mse = param(st, "alpha").mse.value_or(NAN);
    const double se = std::sqrt(std::max(a_mse - ba * ba, 0.0) / static_cast<double>(st.eligible_count));
    // seed 302 lands about 2 SE above the long-run bias (0.039 over 30000 reps)
    o.add(fmt("ST bias(alpha) %.4f (MC se %.4f)", ba, se) + " vs 0.034 +-0.03", std::abs(ba - 0.034) <= 0.03, true);
    o.add(fmt("SM NE %.1f per 100 (= 0)", sm.ne_per_100), sm.ne_per_100 == 0.0);
    o.add(fmt("SM/ST MSE(mu) ratio %.2f (within 10x)", sm_mu / mu), sm_mu / mu >= 0.1 && sm_mu / mu <= 10.0);
    return o;
}

// 6. Jacobian of G against central differences.
Outcome criterion6()
{
    Outcome o;
    RngStream rng(66);
    for (int d : {2, 3}) {
        double worst = 0.0;
        for (int k = 0; k < 20; ++k) {
            MomentVector Z;
            Z.Z1 = Matrix(d, d);
            Z.Z2 = Matrix::Identity(d, d);
            Z.z1 = Vector(d);
            Z.z2 = Vector(d);
            Z.z3 = Vector(d);
            for (Eigen::Index i = 0; i < Z.Z1.size(); ++i) {
                Z.Z1.data()[i] = rng.normal();
                Z.Z2.data()[i] += 0.3 * rng.normal();
            }
            for (int i = 0; i < d; ++i) {
                Z.z1[i] = rng.normal();
                Z.z2[i] = 0.5 * rng.normal();
                Z.z3[i] = 0.5 * rng.normal();
            }
            Z.z = 0.5 + rng.uniform();
            const Vector y = Z.stack();
            const Matrix J = jacobian_G(Z);
            Matrix fd(J.rows(), J.cols());
            for (Eigen::Index j = 0; j < y.size(); ++j) {
                const double h = 1e-6 * std::max(1.0, std::abs(y[j]));
                Vector a = y, b = y;
                a[j] += h;
                b[j] -= h;
                fd.col(j) = (eval_G_tilde(MomentVector::unstack(a, d)) - eval_G_tilde(MomentVector::unstack(b, d))) /
                            (2 * h);
            }
            worst = std::max(worst, (J - fd).cwiseAbs().maxCoeff() / std::max(1.0, J.cwiseAbs().maxCoeff()));
        }
        o.add(fmt("d=%.0f: max relative deviation %.2e (< 1e-5)", d, worst), worst < 1e-5);
    }
    return o;
}

// 7. Coverage of 95% sandwich intervals.
Outcome criterion7()
{
    Outcome o;
    const TNParams t0(v2(0, 0), Matrix::Identity(2, 2));
    const Vector truth = ModelParams(t0).raw();
    const auto tf = tn_test_functions(square());
    std::vector<int> hits(6, 0);
    int used = 0;
    for (std::size_t rep = 0; rep < 500; ++rep) {
        RngStream rng(7007, rep);
        const auto s = sample_truncated(t0, square(), 5000, rng);
        const TNResult r = tn_stein_estimate(s, tf);
        if (!r.eligible())
            continue;
        ++used;
        const auto ci = confidence_intervals(r, sandwich_cov(s, tf), 0.95);
        for (std::size_t k = 0; k < 6; ++k)
            hits[k] += ci[k].lower <= truth[static_cast<Eigen::Index>(k)] &&
                       truth[static_cast<Eigen::Index>(k)] <= ci[k].upper;
    }
    const auto names = param_names(ModelKind::truncated_normal, 2);
    std::string detail;
    bool ok = used > 0;
    for (std::size_t k = 0; k < 6; ++k) {
        const double c = 100.0 * hits[k] / std::max(used, 1);
        ok = ok && c >= 90.0 && c <= 98.0;
        detail += (k ? ", " : "") + names[k] + " " + fmt("%.1f", c);
    }
    o.add("coverage % [90, 98]: " + detail, ok);
    return o;
}

// 8. Median error shrinks with n.
Outcome criterion8()
{
    Outcome o;
    const std::vector<std::pair<std::string, ExperimentConfig>> scenarios = {
        {"TN", ExperimentConfig(TNParams(v2(0, 0), Matrix::Identity(2, 2)), square())},
        {"normal-gamma", ExperimentConfig(NormalGammaParams(0, 1, 1, 1), ng_disc())},
        {"normal-beta", ExperimentConfig(NormalBetaParams(0, 1, 1, 1.5), nb_disc())},
    };
    for (auto [label, cfg] : scenarios) {
        cfg.reps = 200;
        cfg.estimators = {Method::stein};
        cfg.base_seed = 808;
        const Vector truth = cfg.theta0.raw();
        std::vector<double> medians;
        for (Eigen::Index n : {500, 2000, 8000}) {
            cfg.n = n;
            const MetricsReport r = run(cfg);
            std::vector<double> err;
            for (const auto& rec : r.records)
                err.push_back(rec.estimate.eligible() ? (rec.estimate.raw - truth).norm()
                                                      : std::numeric_limits<double>::infinity());
            std::nth_element(err.begin(), err.begin() + err.size() / 2, err.end());
            const double hi = err[err.size() / 2];
            const double lo = *std::max_element(err.begin(), err.begin() + err.size() / 2);
            medians.push_back(0.5 * (lo + hi));
        }
        const bool ok = medians[0] > medians[1] && medians[1] > medians[2] && medians[0] >= 2.0 * medians[2];
        o.add(label + fmt(": medians %.4f", medians[0]) + fmt(" > %.4f", medians[1]) +
                  fmt(" > %.4f, shrinkage %.2fx", medians[2], medians[0] / medians[2]),
              ok);
    }
    return o;
}

// 9. Quadrature gate.
Outcome criterion9()
{
    Outcome o;
    const double expect = 2 * std::numbers::pi * std::pow(std::erf(1 / std::numbers::sqrt2), 2);
    const double got = integrate([](const Vector& x) { return std::exp(-0.5 * x.squaredNorm()); }, square(), 1e-10).value;
    const double rel = std::abs(got / expect - 1.0);
    o.add(fmt("Gaussian over square: relative error %.2e (< 1e-8)", rel), rel < 1e-8);
    const double area = integrate([](const Vector&) { return 1.0; }, nb_disc(), 1e-12).value;
    const double err = std::abs(area - std::numbers::pi / 4);
    o.add(fmt("disc area: absolute error %.2e (< 1e-10)", err), err < 1e-10);
    return o;
}

// 10. Worker count does not change any report byte.
Outcome criterion10()
{
    Outcome o;
    ExperimentConfig tn(TNParams(v2(0.5, 0.5), 0.5 * Matrix::Identity(2, 2)), square());
    tn.n = 500;
    tn.reps = 16;
    tn.base_seed = 10;
    tn.estimators = {Method::stein, Method::mle, Method::score_matching};
    ExperimentConfig ng(NormalGammaParams(0, 1, 1, 1), ng_disc());
    ng.n = 300;
    ng.reps = 16;
    ng.base_seed = 11;
    ng.estimators = {Method::stein, Method::mle, Method::score_matching};
    for (const auto* cfg : {&tn, &ng}) {
        const MetricsReport a = run_experiment(*cfg, 1), b = run_experiment(*cfg, 4);
        const bool same = summary_csv(a) == summary_csv(b) && reps_log_csv(a) == reps_log_csv(b) &&
                          markdown_report(a, setup_line(*cfg)) == markdown_report(b, setup_line(*cfg));
        o.add(std::string(to_string(cfg->theta0.kind())) + ": workers 1 vs 4 reports identical", same);
    }
    return o;
}

const std::vector<std::pair<const char*, std::function<Outcome()>>>& criteria()
{
    static const std::vector<std::pair<const char*, std::function<Outcome()>>> all = {
        {"Stein identity at theta0, n = 1e6", criterion1},
        {"root property of Stein estimates", criterion2},
        {"TN table, Stein columns", criterion3},
        {"normal-gamma table row (0, 0.1, 0.5, 3)", criterion4},
        {"normal-beta table row (0.5, 0.1, 4, 5)", criterion5},
        {"Jacobian of the moment map", criterion6},
        {"sandwich interval coverage", criterion7},
        {"consistency of Stein estimators", criterion8},
        {"quadrature accuracy", criterion9},
        {"determinism across worker counts", criterion10},
    };
    return all;
}

} // namespace

int main(int argc, char** argv)
{
    std::vector<int> which;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            which.push_back(std::atoi(argv[++i]));
        } else {
            std::fprintf(stderr, "usage: %s [--criterion N]...\n", argv[0]);
            return 2;
        }
    }
    const auto& all = criteria();
    if (which.empty())
        for (std::size_t i = 1; i <= all.size(); ++i)
            which.push_back(static_cast<int>(i));

    bool unexpected = false;
    for (int c : which) {
        if (c < 1 || c > static_cast<int>(all.size())) {
            std::fprintf(stderr, "no criterion %d\n", c);
            return 2;
        }
        const auto t0 = std::chrono::steady_clock::now();
        const Outcome out = all[static_cast<std::size_t>(c - 1)].second();
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (const auto& ch : out.checks)
            std::printf("    %s %s%s\n", ch.pass ? "ok  " : "FAIL", ch.what.c_str(),
                        !ch.pass && ch.known_gap ? " [known gap]" : "");
        const bool gap_only = !out.pass() && !out.unexpected_failure();
        std::printf("%s criterion %d: %s (%.1f s)%s\n", out.pass() ? "PASS" : "FAIL", c,
                    all[static_cast<std::size_t>(c - 1)].first, secs, gap_only ? " [known gap]" : "");
        std::fflush(stdout);
        unexpected = unexpected || out.unexpected_failure();
    }
    return unexpected ? 1 : 0;
}
