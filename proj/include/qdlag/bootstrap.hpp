#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "selection.hpp"

namespace qdlag {

struct BootstrapConfig
{
    int replicates = 200;
    double level = 0.95;
    std::uint64_t seed = 0;
    // false reruns cross-validation on every replicate over `grid`
    bool reuse_tuning = true;
    TuningGrid grid;
    int folds = 5;
    // fraction of failed replicates above which the distribution is unreliable
    double max_failure_rate = 0.2;

    void validate() const
    {
        if (replicates < 2) throw ConfigError("bootstrap needs at least 2 replicates");
        if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
        if (!reuse_tuning && folds < 2) throw ConfigError("per-replicate tuning needs at least 2 folds");
    }
};

struct BootstrapDistribution
{
    Estimator estimator = Estimator::Unimodal;
    Tuning tuning;
    FitResult base_fit;
    std::vector<Matrix> beta_reps;
    Matrix gamma_reps;  // B x p
    std::vector<bool> converged;
    int failed = 0;
    bool unreliable = false;

    int replicates() const { return static_cast<int>(beta_reps.size()); }
};

struct ConfidenceBand
{
    Matrix lower;
    Matrix upper;
    Vector gamma_lower;
    Vector gamma_upper;
    double level = 0.0;
};

struct CriticalWindowReport
{
    // 1 where the interval excludes zero
    Eigen::MatrixXi excludes_zero;
    // nearer endpoint to zero (signed) where excluded, else 0
    Matrix intensity;
};

/// i.i.d. weights equal to 2(1 - tau) with probability 1 - tau and -2 tau with probability tau.
inline Vector draw_weights(Index n, QuantileLevel tau, Rng& rng)
{
    std::bernoulli_distribution negative(tau.value());
    Vector w(n);
    for (Index i = 0; i < n; ++i) w(i) = negative(rng) ? -2.0 * tau.value() : 2.0 * (1.0 - tau.value());
    return w;
}

/// Empirical quantile with linear interpolation between order statistics (type 7).
inline double empirical_quantile(std::vector<double> values, double p)
{
    if (values.empty()) throw DimensionError("quantile of an empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("quantile probability must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = static_cast<double>(values.size() - 1) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/**
 * Wild bootstrap around the tuned fit in `base`: each replicate perturbs the
 * residuals by draw_weights, y*_i = fitted_i + w_i e_i, and refits the same
 * estimator. With reuse_tuning the tuning pair of `base` is kept; the
 * unimodal estimator still re-estimates its modes on every replicate.
 * Replicate b draws from derive_seed(seed, Bootstrap, b), so results do not
 * depend on the thread count.
 */
inline BootstrapDistribution bootstrap(const RegressionData& data, QuantileLevel tau, const SelectionResult& base,
                                       const BootstrapConfig& config, const FitOptions& options = {})
{
    config.validate();
    if (!base.refit.converged) throw ConvergenceError("bootstrap needs a converged base fit");
    const Vector fitted = linear_predictor(data, base.refit.beta, base.refit.gamma);
    const Vector resid = data.response() - fitted;
    const auto B = static_cast<std::size_t>(config.replicates);

    BootstrapDistribution dist;
    dist.estimator = base.estimator;
    dist.tuning = base.best;
    dist.base_fit = base.refit;
    dist.beta_reps.resize(B);
    dist.gamma_reps = Matrix::Zero(config.replicates, data.p());
    std::vector<char> ok(B, 0);
    std::vector<Vector> gammas(B);

    parallel_for(B, resolve_threads(options.threads), [&](std::size_t b) {
        Rng rng = make_rng(config.seed, Stream::Bootstrap, b);
        const Vector w = draw_weights(data.n(), tau, rng);
        const RegressionData star = data.with_response(fitted + w.cwiseProduct(resid));
        FitResult fit;
        if (config.reuse_tuning) {
            fit = fit_estimator(star, tau, base.estimator, base.best, options, &base.refit);
        } else {
            fit = select_cv(star, tau, config.grid, config.folds, base.estimator,
                            derive_seed(config.seed, Stream::Split, b), options)
                      .refit;
        }
        dist.beta_reps[b] = fit.beta;
        gammas[b] = fit.gamma;
        ok[b] = fit.converged ? 1 : 0;
    });
    for (std::size_t b = 0; b < B; ++b) {
        dist.gamma_reps.row(static_cast<Index>(b)) = gammas[b].transpose();
        dist.converged.push_back(ok[b] != 0);
        if (!ok[b]) ++dist.failed;
    }
    dist.unreliable = dist.failed > config.max_failure_rate * static_cast<double>(config.replicates);
    return dist;
}

/// Percentile intervals at (1 - level) / 2 and (1 + level) / 2, elementwise.
inline ConfidenceBand intervals(const BootstrapDistribution& dist, double level)
{
    if (dist.replicates() < 2) throw ConfigError("intervals need at least 2 replicates");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
    const double lo_p = 0.5 * (1.0 - level);
    const double hi_p = 1.0 - lo_p;
    const Index K = dist.beta_reps.front().rows();
    const Index T = dist.beta_reps.front().cols();
    ConfidenceBand band;
    band.level = level;
    band.lower.resize(K, T);
    band.upper.resize(K, T);
    std::vector<double> draws(static_cast<std::size_t>(dist.replicates()));
    for (Index k = 0; k < K; ++k) {
        for (Index t = 0; t < T; ++t) {
            for (std::size_t b = 0; b < draws.size(); ++b) draws[b] = dist.beta_reps[b](k, t);
            band.lower(k, t) = empirical_quantile(draws, lo_p);
            band.upper(k, t) = empirical_quantile(draws, hi_p);
        }
    }
    const Index p = dist.gamma_reps.cols();
    band.gamma_lower.resize(p);
    band.gamma_upper.resize(p);
    for (Index j = 0; j < p; ++j) {
        for (std::size_t b = 0; b < draws.size(); ++b) draws[b] = dist.gamma_reps(static_cast<Index>(b), j);
        band.gamma_lower(j) = empirical_quantile(draws, lo_p);
        band.gamma_upper(j) = empirical_quantile(draws, hi_p);
    }
    return band;
}

/// Cells whose closed interval [lower, upper] excludes zero.
inline CriticalWindowReport critical_windows(const ConfidenceBand& band)
{
    CriticalWindowReport rep;
    rep.excludes_zero = Eigen::MatrixXi::Zero(band.lower.rows(), band.lower.cols());
    rep.intensity = Matrix::Zero(band.lower.rows(), band.lower.cols());
    for (Index k = 0; k < band.lower.rows(); ++k) {
        for (Index t = 0; t < band.lower.cols(); ++t) {
            if (band.lower(k, t) > 0.0) {
                rep.excludes_zero(k, t) = 1;
                rep.intensity(k, t) = band.lower(k, t);
            } else if (band.upper(k, t) < 0.0) {
                rep.excludes_zero(k, t) = 1;
                rep.intensity(k, t) = band.upper(k, t);
            }
        }
    }
    return rep;
}

} // namespace qdlag
