#pragma once

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "io.hpp"

namespace qdlag::cli {

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kNonConvergence = 3,
    kUnreliable = 4,
};

inline constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  2  usage error, invalid option value or malformed input file\n"
    "  3  solver did not converge (fit/cv: unless --allow-nonconverged)\n"
    "  4  bootstrap distribution unreliable (too many failed replicates)\n"
    "Threads: --threads N, else the QDLAG_THREADS environment variable, else 1.\n"
    "Results do not depend on the thread count.";

namespace detail {

struct SolverFlags
{
    int threads = 0;
    int max_iter = AdmmConfig{}.max_iter;
    double eps = AdmmConfig{}.eps1;
    std::uint64_t seed = 0;

    void add(CLI::App& app)
    {
        app.add_option("--threads", threads, "worker threads (0: QDLAG_THREADS or 1)")->check(CLI::NonNegativeNumber);
        app.add_option("--max-iter", max_iter, "ADMM iteration limit")->check(CLI::PositiveNumber);
        app.add_option("--eps", eps, "ADMM stopping tolerance (primal and dual)")->check(CLI::PositiveNumber);
        app.add_option("--seed", seed, "random seed");
    }

    FitOptions options(bool trace = false) const
    {
        FitOptions o;
        o.threads = resolve_threads(threads);
        o.descent.seed = seed;
        o.descent.admm.max_iter = max_iter;
        o.descent.admm.eps1 = eps;
        o.descent.admm.eps2 = eps;
        o.descent.admm.record_trace = trace;
        return o;
    }
};

struct ModelFlags
{
    std::string data;
    double tau = 0.5;
    std::string estimator;
    bool no_intercept = false;

    void add(CLI::App& app, bool estimator_required = true)
    {
        app.add_option("--data", data, "input CSV (y, z1..zp, x<k>_<t>)")->required();
        app.add_option("--tau", tau, "quantile level in (0, 1)")->check(CLI::Range(0.0, 1.0));
        auto* e = app.add_option("--estimator", estimator, "uni, concave, en or ridge")
                      ->check(CLI::IsMember({"uni", "concave", "en", "ridge"}));
        if (estimator_required) e->required();
        app.add_flag("--no-intercept", no_intercept, "do not prepend an intercept column to the covariates");
    }

    RegressionData load() const
    {
        RegressionData d = read_dataset(data);
        return no_intercept ? d : d.with_intercept();
    }
};

struct TuningFlags
{
    std::optional<double> lambda1, lambda2, lambda, alpha;

    void add(CLI::App& app)
    {
        app.add_option("--lambda1", lambda1, "shape penalty weight (uni, concave)");
        app.add_option("--lambda2", lambda2, "smoothness weight (uni, concave)");
        app.add_option("--lambda", lambda, "penalty weight (en, ridge)");
        app.add_option("--alpha", alpha, "lasso share in [0, 1] (en)");
    }

    Tuning resolve(Estimator est) const
    {
        switch (est) {
        case Estimator::Unimodal:
        case Estimator::Concave:
            if (!lambda2) throw ConfigError("--lambda2 is required for " + to_string(est));
            return Tuning{lambda1.value_or(0.0), *lambda2};
        case Estimator::ElasticNet:
            if (!lambda) throw ConfigError("--lambda is required for en");
            return Tuning{*lambda, alpha.value_or(0.5)};
        case Estimator::Ridge:
            if (!lambda) throw ConfigError("--lambda is required for ridge");
            return Tuning{*lambda, 0.0};
        }
        return {};
    }
};

inline std::vector<double> parse_list(const std::string& text, const std::string& flag)
{
    std::vector<double> out;
    if (text.empty()) return out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = text.find(',', start);
        const std::string item =
            text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        const auto v = qdlag::detail::parse_double(qdlag::detail::trim(item));
        if (!v) throw ConfigError(flag + " has a non-numeric entry '" + item + "'");
        out.push_back(*v);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::vector<std::string> split_words(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto t = qdlag::detail::trim(item);
        if (!t.empty()) out.emplace_back(t);
    }
    return out;
}

inline void validate_fit(const RegressionData& data, const Tuning& t, Estimator est)
{
    if ((est == Estimator::Unimodal || est == Estimator::Concave) && data.K() == 0) {
        throw SchemaError("shape estimators need exposure columns x<k>_<t>");
    }
    (void)t;
}

} // namespace detail

/**
 * Runs one subcommand. `args` excludes the program name. Output files are
 * written where the flags say; `out` receives a short summary and `err`
 * diagnostics.
 */
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Quantile distributed-lag regression with shape-constrained smooth coefficients", "qdlag"};
    app.footer(kExitCodeHelp);
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kSoftwareVersion));

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit one estimator at fixed tuning");
    detail::ModelFlags fit_model;
    detail::TuningFlags fit_tuning;
    detail::SolverFlags fit_solver;
    std::string fit_out, fit_trace;
    bool fit_allow = false;
    fit_model.add(*fit_cmd);
    fit_tuning.add(*fit_cmd);
    fit_solver.add(*fit_cmd);
    fit_cmd->add_option("--out", fit_out, "result document (JSON)")->required();
    fit_cmd->add_option("--trace", fit_trace, "per-iteration trace CSV (iter, objective, primal, dual)");
    fit_cmd->add_flag("--allow-nonconverged", fit_allow, "exit 0 even if the solver did not converge");

    // cv
    auto* cv_cmd = app.add_subcommand("cv", "select tuning by K-fold cross-validation or a validation file");
    detail::ModelFlags cv_model;
    detail::SolverFlags cv_solver;
    std::string cv_l1, cv_l2, cv_validation, cv_out, cv_scores;
    int cv_folds = 5;
    bool cv_allow = false;
    cv_model.add(*cv_cmd);
    cv_solver.add(*cv_cmd);
    cv_cmd->add_option("--grid-l1", cv_l1, "comma list of lambda1 (uni, concave) or lambda (en, ridge)")->required();
    cv_cmd->add_option("--grid-l2", cv_l2, "comma list of lambda2 (uni, concave) or alpha (en)");
    auto* folds_opt = cv_cmd->add_option("--folds", cv_folds, "number of folds");
    auto* val_opt = cv_cmd->add_option("--validation", cv_validation, "validation CSV instead of folds");
    folds_opt->excludes(val_opt);
    cv_cmd->add_option("--out", cv_out, "refit result document (JSON)")->required();
    cv_cmd->add_option("--scores", cv_scores, "score table CSV (rows first value, columns second value)");
    cv_cmd->add_flag("--allow-nonconverged", cv_allow, "exit 0 even if the refit did not converge");

    // bootstrap
    auto* bs_cmd = app.add_subcommand("bootstrap", "wild-bootstrap confidence bands and critical windows");
    detail::ModelFlags bs_model;
    detail::TuningFlags bs_tuning;
    detail::SolverFlags bs_solver;
    std::string bs_from, bs_out, bs_doc;
    int bs_reps = BootstrapConfig{}.replicates;
    double bs_level = BootstrapConfig{}.level;
    bs_model.add(*bs_cmd, false);
    bs_tuning.add(*bs_cmd);
    bs_solver.add(*bs_cmd);
    bs_cmd->add_option("--from", bs_from, "fit or cv result document supplying estimator, tau and tuning");
    bs_cmd->add_option("--replicates", bs_reps, "bootstrap replicates")->check(CLI::Range(2, 1000000));
    bs_cmd->add_option("--level", bs_level, "confidence level")->check(CLI::Range(0.0, 1.0));
    bs_cmd->add_option("--out", bs_out, "band CSV (k, t, estimate, lower, upper, excludes_zero, intensity)")
        ->required();
    bs_cmd->add_option("--doc", bs_doc, "result document with bands (JSON)");

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "draw a simulated dataset and its truth");
    SimConfig sim;
    std::string sim_model = "A", sim_error = "normal", sim_out, sim_truth, sim_modes;
    sim_cmd->add_option("--model", sim_model, "coefficient model")->check(CLI::IsMember({"A", "B", "C"}));
    sim_cmd->add_option("--n", sim.n, "observations")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--snr", sim.snr, "signal-to-noise ratio")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--error", sim_error, "error law")->check(CLI::IsMember({"normal", "t4"}));
    sim_cmd->add_option("--tau", sim.tau, "quantile level of the truth")->check(CLI::Range(0.0, 1.0));
    sim_cmd->add_option("--seed", sim.seed, "random seed");
    sim_cmd->add_option("--replicate", sim.replicate, "replicate index");
    sim_cmd->add_option("--K", sim.K, "exposures")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--T", sim.T, "time points")->check(CLI::Range(3, 100000));
    sim_cmd->add_option("--p", sim.p, "covariates")->check(CLI::NonNegativeNumber);
    sim_cmd->add_option("--modes", sim_modes, "comma list of true modes (default: built-in for K=6, T=30, else centred)");
    sim_cmd->add_option("--out", sim_out, "dataset CSV")->required();
    sim_cmd->add_option("--truth", sim_truth, "truth document (default: <out>.truth.json)");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "simulation benchmark with validation-set tuning");
    BenchConfig bench;
    std::string bench_models = "A,B,C", bench_n = "750", bench_snr = "0.5", bench_est = "uni,concave,ridge,en",
                bench_error = "normal", bench_out, bench_summary;
    int bench_threads = 0;
    bool bench_timing = false;
    bench_cmd->add_option("--models", bench_models, "comma list of A, B, C");
    bench_cmd->add_option("--n-list", bench_n, "comma list of sample sizes");
    bench_cmd->add_option("--snr-list", bench_snr, "comma list of signal-to-noise ratios");
    bench_cmd->add_option("--error", bench_error, "error law")->check(CLI::IsMember({"normal", "t4"}));
    bench_cmd->add_option("--reps", bench.reps, "replicates per cell")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--estimators", bench_est, "comma list of uni, concave, ridge, en");
    bench_cmd->add_option("--seed", bench.seed, "random seed");
    bench_cmd->add_option("--tau", bench.tau, "quantile level")->check(CLI::Range(0.0, 1.0));
    bench_cmd->add_option("--K", bench.K, "exposures")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--T", bench.T, "time points")->check(CLI::Range(3, 100000));
    bench_cmd->add_option("--p", bench.p, "covariates")->check(CLI::NonNegativeNumber);
    bench_cmd->add_option("--threads", bench_threads, "worker threads (0: QDLAG_THREADS or 1)")
        ->check(CLI::NonNegativeNumber);
    bench_cmd->add_option("--out", bench_out, "long-format results CSV")->required();
    bench_cmd->add_option("--summary", bench_summary, "per-cell means CSV");
    bench_cmd->add_flag("--timing", bench_timing, "record wall-clock runtimes (otherwise NA, keeping output reproducible)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kSoftwareVersion << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }

    try {
        if (fit_cmd->parsed()) {
            const Estimator est = parse_estimator(fit_model.estimator);
            const QuantileLevel tau(fit_model.tau);
            const RegressionData data = fit_model.load();
            const Tuning tuning = fit_tuning.resolve(est);
            detail::validate_fit(data, tuning, est);
            const FitOptions opts = fit_solver.options(!fit_trace.empty());
            const FitResult fit = fit_estimator(data, tau, est, tuning, opts);
            write_file(fit_out, format_document(make_document(fit, est, tau, tuning, !fit_model.no_intercept,
                                                              fit_solver.seed)));
            if (!fit_trace.empty()) write_file(fit_trace, format_trace(fit));
            out << "fit " << to_string(est) << ": " << (fit.converged ? "converged" : "did not converge") << " after "
                << fit.iterations << " iterations, objective " << format_number(fit.objective) << "\n";
            if (!fit.converged && !fit_allow) {
                err << "error: solver did not converge in " << fit.iterations << " iterations\n";
                return kNonConvergence;
            }
            return kOk;
        }

        if (cv_cmd->parsed()) {
            const Estimator est = parse_estimator(cv_model.estimator);
            const QuantileLevel tau(cv_model.tau);
            const RegressionData data = cv_model.load();
            TuningGrid grid{detail::parse_list(cv_l1, "--grid-l1"), detail::parse_list(cv_l2, "--grid-l2")};
            if (est == Estimator::Ridge && grid.lambda2_values.empty()) grid.lambda2_values = {0.0};
            if (grid.lambda2_values.empty()) throw ConfigError("--grid-l2 is required for " + to_string(est));
            detail::validate_fit(data, Tuning{}, est);
            const FitOptions opts = cv_solver.options();
            SelectionResult sel;
            SelectionSummary summary;
            if (!cv_validation.empty()) {
                RegressionData val = read_dataset(cv_validation);
                if (!cv_model.no_intercept) val = val.with_intercept();
                sel = select_holdout(data, val, tau, grid, est, opts);
                summary.method = "holdout";
            } else {
                sel = select_cv(data, tau, grid, cv_folds, est, cv_solver.seed, opts);
                summary.method = "cv";
                summary.folds = cv_folds;
            }
            summary.seed = cv_solver.seed;
            summary.grid = sel.grid;
            summary.score_table = sel.score_table;
            summary.converged_table = sel.converged_table;
            ResultDocument doc = make_document(sel.refit, est, tau, sel.best, !cv_model.no_intercept, cv_solver.seed);
            doc.selection = std::move(summary);
            write_file(cv_out, format_document(doc));
            if (!cv_scores.empty()) write_file(cv_scores, format_score_table(sel));
            out << "cv " << to_string(est) << ": best (" << format_number(sel.best.first) << ", "
                << format_number(sel.best.second) << ")\n";
            if (!sel.refit.converged && !cv_allow) {
                err << "error: refit at the selected tuning did not converge\n";
                return kNonConvergence;
            }
            return kOk;
        }

        if (bs_cmd->parsed()) {
            Estimator est;
            double tau_value = bs_model.tau;
            Tuning tuning;
            bool intercept = !bs_model.no_intercept;
            if (!bs_from.empty()) {
                const ResultDocument prior = read_document(bs_from);
                est = prior.estimator;
                tau_value = prior.tau;
                tuning = prior.tuning;
                intercept = prior.intercept;
            } else {
                if (bs_model.estimator.empty()) throw ConfigError("bootstrap needs --from or --estimator");
                est = parse_estimator(bs_model.estimator);
                tuning = bs_tuning.resolve(est);
            }
            const QuantileLevel tau(tau_value);
            RegressionData data = read_dataset(bs_model.data);
            if (intercept) data = data.with_intercept();
            detail::validate_fit(data, tuning, est);
            const FitOptions opts = bs_solver.options();
            SelectionResult base;
            base.estimator = est;
            base.best = tuning;
            base.refit = fit_estimator(data, tau, est, tuning, opts);
            if (!base.refit.converged) {
                err << "error: base fit did not converge\n";
                return kNonConvergence;
            }
            BootstrapConfig bc;
            bc.replicates = bs_reps;
            bc.level = bs_level;
            bc.seed = bs_solver.seed;
            const BootstrapDistribution dist = bootstrap(data, tau, base, bc, opts);
            const ConfidenceBand band = intervals(dist, bs_level);
            const CriticalWindowReport windows = critical_windows(band);
            write_file(bs_out, format_band_table(base.refit.beta, band, windows));
            if (!bs_doc.empty()) {
                ResultDocument doc = make_document(base.refit, est, tau, tuning, intercept, bs_solver.seed);
                doc.bootstrap = BootstrapSummary{dist.replicates(), dist.failed, dist.unreliable, band, windows};
                write_file(bs_doc, format_document(doc));
            }
            out << "bootstrap " << to_string(est) << ": " << dist.replicates() << " replicates, " << dist.failed
                << " failed\n";
            if (dist.unreliable) {
                err << "error: " << dist.failed << " of " << dist.replicates()
                    << " replicates failed; the bootstrap distribution is unreliable\n";
                return kUnreliable;
            }
            return kOk;
        }

        if (sim_cmd->parsed()) {
            sim.model = sim_model == "A" ? CoefficientModel::A : (sim_model == "B" ? CoefficientModel::B : CoefficientModel::C);
            sim.error = sim_error == "normal" ? ErrorLaw::Normal : ErrorLaw::StudentT4;
            if (!sim_modes.empty()) {
                sim.modes.clear();
                for (double m : detail::parse_list(sim_modes, "--modes")) sim.modes.push_back(static_cast<int>(m));
            } else if (!(sim.K == 6 && sim.T == 30)) {
                sim.modes.assign(static_cast<std::size_t>(sim.K), static_cast<int>((sim.T + 1) / 2));
            }
            const SimDataset ds = gen_dataset(sim);
            write_file(sim_out, format_dataset(ds.data));
            write_file(sim_truth.empty() ? sim_out + ".truth.json" : sim_truth, format_truth(sim, ds.truth));
            out << "simulate: model " << sim_model << ", n " << sim.n << ", sigma " << format_number(ds.truth.sigma)
                << "\n";
            return kOk;
        }

        if (bench_cmd->parsed()) {
            bench.models.clear();
            for (const auto& m : detail::split_words(bench_models)) {
                if (m == "A") bench.models.push_back(CoefficientModel::A);
                else if (m == "B") bench.models.push_back(CoefficientModel::B);
                else if (m == "C") bench.models.push_back(CoefficientModel::C);
                else throw ConfigError("unknown model '" + m + "' in --models");
            }
            bench.n_list.clear();
            for (double v : detail::parse_list(bench_n, "--n-list")) {
                if (v < 1 || v != std::floor(v)) throw ConfigError("--n-list entries must be positive integers");
                bench.n_list.push_back(static_cast<Index>(v));
            }
            bench.snr_list = detail::parse_list(bench_snr, "--snr-list");
            for (double v : bench.snr_list) {
                if (!(v > 0.0)) throw ConfigError("--snr-list entries must be > 0");
            }
            bench.estimators.clear();
            for (const auto& e : detail::split_words(bench_est)) bench.estimators.push_back(parse_estimator(e));
            bench.error = bench_error == "normal" ? ErrorLaw::Normal : ErrorLaw::StudentT4;
            bench.options.threads = resolve_threads(bench_threads);
            bench.options.descent.admm.record_trace = false;
            const auto rows = run_bench(bench);
            write_file(bench_out, format_bench_rows(rows, bench_timing));
            if (!bench_summary.empty()) write_file(bench_summary, format_bench_summary(summarize_bench(rows), bench_timing));
            int failed = 0;
            for (const auto& r : rows) failed += r.failure.empty() ? 0 : 1;
            out << "bench: " << rows.size() << " rows, " << failed << " failed\n";
            return kOk;
        }
    } catch (const ConvergenceError& e) {
        err << "error: " << e.what() << "\n";
        return kNonConvergence;
    } catch (const SingularityError& e) {
        err << "error: " << e.what() << "\n";
        return kNonConvergence;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kUsage;
}

} // namespace qdlag::cli
