#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "selection.hpp"
#include "simulation.hpp"

namespace qdlag {

struct BenchConfig
{
    std::vector<CoefficientModel> models{CoefficientModel::A, CoefficientModel::B, CoefficientModel::C};
    std::vector<Index> n_list{750};
    std::vector<double> snr_list{0.5};
    ErrorLaw error = ErrorLaw::Normal;
    int reps = 10;
    std::vector<Estimator> estimators{Estimator::Unimodal, Estimator::Concave, Estimator::Ridge,
                                      Estimator::ElasticNet};
    std::uint64_t seed = 0;
    Index K = 6;
    Index T = 30;
    Index p = 5;
    double tau = 0.25;
    std::vector<int> modes;  // empty: defaults when K = 6, else centred modes
    FitOptions options;

    void validate() const
    {
        if (models.empty() || n_list.empty() || snr_list.empty() || estimators.empty()) {
            throw ConfigError("benchmark lists must be nonempty");
        }
        if (reps < 1) throw ConfigError("benchmark needs at least one replicate");
        if (!modes.empty() && static_cast<Index>(modes.size()) != K) {
            throw ConfigError("benchmark modes need one entry per exposure");
        }
    }
};

struct BenchRow
{
    CoefficientModel model = CoefficientModel::A;
    Index n = 0;
    double snr = 0.0;
    ErrorLaw error = ErrorLaw::Normal;
    Estimator estimator = Estimator::Unimodal;
    int rep = 0;
    double estimation_error = std::numeric_limits<double>::quiet_NaN();
    double runtime_seconds = 0.0;
    Tuning tuning;
    std::string failure;  // empty on success
};

struct BenchSummaryRow
{
    CoefficientModel model = CoefficientModel::A;
    Index n = 0;
    double snr = 0.0;
    ErrorLaw error = ErrorLaw::Normal;
    Estimator estimator = Estimator::Unimodal;
    int completed = 0;
    double mean_error = std::numeric_limits<double>::quiet_NaN();
    double se_error = std::numeric_limits<double>::quiet_NaN();
    double mean_runtime = std::numeric_limits<double>::quiet_NaN();
};

inline double sample_sd(const Vector& v)
{
    if (v.size() < 2) return 0.0;
    return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
}

/**
 * Grid used by the benchmark when tuning on the validation set. Smoothing
 * weights are scaled by 1 / sd(y) so the grid follows the response scale;
 * baselines use a log grid of lambda with alpha in {0, 0.5, 1}.
 */
inline TuningGrid default_bench_grid(Estimator est, const RegressionData& train)
{
    if (est == Estimator::Unimodal || est == Estimator::Concave) {
        const double scale = std::max(sample_sd(train.response()), std::numeric_limits<double>::min());
        TuningGrid g{{0.01, 0.1, 1.0}, {}};
        for (double a : {0.5, 2.0, 8.0, 30.0, 100.0}) g.lambda2_values.push_back(a / scale);
        return g;
    }
    TuningGrid g;
    for (int e = -5; e <= 1; ++e) g.lambda1_values.push_back(std::pow(10.0, e));
    g.lambda2_values = est == Estimator::ElasticNet ? std::vector<double>{0.0, 0.5, 1.0} : std::vector<double>{0.0};
    return g;
}

namespace detail {

inline std::vector<int> bench_modes(const BenchConfig& cfg)
{
    if (!cfg.modes.empty()) return cfg.modes;
    if (cfg.K == 6 && cfg.T == 30) return default_modes();
    return std::vector<int>(static_cast<std::size_t>(cfg.K), static_cast<int>((cfg.T + 1) / 2));
}

} // namespace detail

/**
 * Runs every (model, n, snr, rep, estimator) unit: simulate training and
 * validation samples, add an intercept column, tune on the validation set and
 * record ||beta* - beta_hat||. Units are independent tasks; each fit runs
 * single-threaded, so results do not depend on the thread count. Failures
 * are recorded per row and the run continues.
 */
inline std::vector<BenchRow> run_bench(const BenchConfig& config)
{
    config.validate();
    std::vector<BenchRow> rows;
    for (auto model : config.models)
        for (Index n : config.n_list)
            for (double snr : config.snr_list)
                for (int rep = 0; rep < config.reps; ++rep)
                    for (auto est : config.estimators) {
                        BenchRow r;
                        r.model = model;
                        r.n = n;
                        r.snr = snr;
                        r.error = config.error;
                        r.estimator = est;
                        r.rep = rep;
                        rows.push_back(r);
                    }

    FitOptions inner = config.options;
    inner.threads = 1;
    parallel_for(rows.size(), resolve_threads(config.options.threads), [&](std::size_t i) {
        BenchRow& row = rows[i];
        const auto start = std::chrono::steady_clock::now();
        try {
            SimConfig sc;
            sc.n = row.n;
            sc.K = config.K;
            sc.T = config.T;
            sc.p = config.p;
            sc.model = row.model;
            sc.error = row.error;
            sc.snr = row.snr;
            sc.tau = config.tau;
            sc.seed = config.seed;
            sc.replicate = static_cast<std::uint64_t>(row.rep);
            sc.modes = detail::bench_modes(config);
            const SimDataset ds = gen_dataset(sc);
            const RegressionData train = ds.data.with_intercept();
            const RegressionData validation = gen_validation(sc, ds.truth).with_intercept();
            const auto sel = select_holdout(train, validation, QuantileLevel(config.tau),
                                            default_bench_grid(row.estimator, train), row.estimator, inner);
            row.tuning = sel.best;
            row.estimation_error = estimation_error(sel.refit.beta, ds.truth.beta_star);
        } catch (const std::exception& e) {
            row.failure = e.what();
        }
        row.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    });
    return rows;
}

/// Mean and standard error of the estimation error per (model, n, snr, estimator), failed rows excluded.
inline std::vector<BenchSummaryRow> summarize_bench(const std::vector<BenchRow>& rows)
{
    std::vector<BenchSummaryRow> out;
    std::vector<std::vector<const BenchRow*>> groups;
    for (const auto& r : rows) {
        std::size_t g = 0;
        for (; g < out.size(); ++g) {
            const auto& s = out[g];
            if (s.model == r.model && s.n == r.n && s.snr == r.snr && s.error == r.error && s.estimator == r.estimator) {
                break;
            }
        }
        if (g == out.size()) {
            BenchSummaryRow s;
            s.model = r.model;
            s.n = r.n;
            s.snr = r.snr;
            s.error = r.error;
            s.estimator = r.estimator;
            out.push_back(s);
            groups.emplace_back();
        }
        groups[g].push_back(&r);
    }
    for (std::size_t g = 0; g < out.size(); ++g) {
        std::vector<double> errs, times;
        for (const BenchRow* r : groups[g]) {
            if (!r->failure.empty()) continue;
            errs.push_back(r->estimation_error);
            times.push_back(r->runtime_seconds);
        }
        auto& s = out[g];
        s.completed = static_cast<int>(errs.size());
        if (errs.empty()) continue;
        const Vector e = Eigen::Map<const Vector>(errs.data(), static_cast<Index>(errs.size()));
        const Vector t = Eigen::Map<const Vector>(times.data(), static_cast<Index>(times.size()));
        s.mean_error = e.mean();
        s.se_error = errs.size() > 1 ? sample_sd(e) / std::sqrt(static_cast<double>(errs.size()))
                                     : std::numeric_limits<double>::quiet_NaN();
        s.mean_runtime = t.mean();
    }
    return out;
}

} // namespace qdlag
