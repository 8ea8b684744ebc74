#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "admm.hpp"
#include "random.hpp"

namespace qdlag {

struct DescentConfig
{
    int max_outer_iter = 50;
    double objective_tol = 1e-6;
    AdmmConfig admm;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (max_outer_iter <= 0 || !(objective_tol > 0.0)) {
            throw ConfigError("descent settings must be positive");
        }
        admm.validate();
    }
};

/// All 1-based m minimizing unimodal_penalty(beta_k, m). Values within a
/// relative 1e-12 of the minimum count as ties.
inline std::vector<int> mode_minimizers(const Eigen::Ref<const Vector>& beta_k)
{
    const Index T = beta_k.size();
    if (T < 1) throw DimensionError("mode search needs at least one time point");
    std::vector<double> value(static_cast<std::size_t>(T));
    double lowest = std::numeric_limits<double>::infinity();
    for (Index m = 1; m <= T; ++m) {
        value[static_cast<std::size_t>(m - 1)] = unimodal_penalty(beta_k, static_cast<int>(m));
        lowest = std::min(lowest, value[static_cast<std::size_t>(m - 1)]);
    }
    const double slack = 1e-12 * std::max(1.0, beta_k.cwiseAbs().maxCoeff());
    std::vector<int> out;
    for (Index m = 1; m <= T; ++m) {
        if (value[static_cast<std::size_t>(m - 1)] <= lowest + slack) out.push_back(static_cast<int>(m));
    }
    return out;
}

/// argmin_m unimodal_penalty(beta_k, m), ties broken by a uniform draw.
inline int best_mode(const Eigen::Ref<const Vector>& beta_k, Rng& rng)
{
    const std::vector<int> candidates = mode_minimizers(beta_k);
    if (candidates.size() == 1) return candidates.front();
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    return candidates[pick(rng)];
}

inline ModeVector best_modes(const Matrix& beta, Rng& rng)
{
    std::vector<int> modes(static_cast<std::size_t>(beta.rows()));
    for (Index k = 0; k < beta.rows(); ++k) modes[static_cast<std::size_t>(k)] = best_mode(beta.row(k).transpose(), rng);
    return ModeVector(std::move(modes), static_cast<int>(beta.cols()));
}

/**
 * Blockwise descent for the nearly-unimodal estimator: alternate the exact
 * mode step (best_mode per exposure) with a warm-started ADMM fit at fixed
 * modes. Without `init` the first coefficients come from the smoothness-only
 * fit (lambda1 = 0). The loop stops when the objective decreases by less
 * than objective_tol (relative), when the modes repeat, or after
 * max_outer_iter sweeps (flagged as not converged).
 *
 * An ADMM step that fails to converge is retried once with twice the
 * iteration budget; an iterate that raises the objective is rejected and the
 * best one so far is returned, so outer_objectives never increases.
 */
inline FitResult fit_unimodal(const RegressionData& data, QuantileLevel tau, double lambda1, double lambda2,
                              const DescentConfig& config = {}, const FitResult* init = nullptr)
{
    config.validate();
    const PenaltyConfig penalty(lambda1, lambda2, ShapeKind::NearlyUnimodal);
    Rng rng = make_rng(config.seed, Stream::ModeTies);

    FitResult start;
    const bool usable_init = init && init->beta.rows() == data.K() && init->beta.cols() == data.T() &&
                             detail::state_matches(init->state, data);
    if (usable_init) {
        start = *init;
    } else {
        start = admm_fit(data, tau, PenaltyConfig(0.0, lambda2, ShapeKind::None), std::nullopt, config.admm);
    }

    FitResult best;
    bool have_best = false;
    bool stopped_cleanly = false;
    std::vector<double> outer;
    AdmmState warm = start.state;
    Matrix beta = start.beta;
    std::optional<ModeVector> previous_modes;
    int total_iterations = usable_init ? 0 : start.iterations;

    for (int outer_it = 1; outer_it <= config.max_outer_iter; ++outer_it) {
        const ModeVector modes = best_modes(beta, rng);
        if (have_best && previous_modes && modes == *previous_modes) {
            stopped_cleanly = true;
            break;
        }
        FitResult fit = admm_fit(data, tau, penalty, modes, config.admm, &warm);
        total_iterations += fit.iterations;
        if (!fit.converged) {
            AdmmConfig retry = config.admm;
            retry.max_iter = 2 * config.admm.max_iter;
            FitResult second = admm_fit(data, tau, penalty, modes, retry, &fit.state);
            total_iterations += second.iterations;
            fit = std::move(second);
        }
        if (have_best && fit.objective > best.objective) {
            // inexact step raised the objective; keep the best iterate
            stopped_cleanly = best.converged;
            break;
        }
        const double previous = have_best ? best.objective : std::numeric_limits<double>::infinity();
        outer.push_back(fit.objective);
        warm = fit.state;
        beta = fit.beta;
        previous_modes = modes;
        best = std::move(fit);
        have_best = true;
        if (!best.converged) break;
        if (lambda1 == 0.0) {
            stopped_cleanly = true;
            break;
        }
        if (std::isfinite(previous) && previous - best.objective < config.objective_tol * std::max(1.0, std::abs(previous))) {
            stopped_cleanly = true;
            break;
        }
    }
    best.outer_objectives = std::move(outer);
    best.iterations = total_iterations;
    best.tie_seed = config.seed;
    best.converged = best.converged && stopped_cleanly;
    return best;
}

} // namespace qdlag
