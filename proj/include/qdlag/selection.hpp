#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "parallel.hpp"
#include "unimodal.hpp"

namespace qdlag {

enum class Estimator { Unimodal, Concave, ElasticNet, Ridge };

inline std::string to_string(Estimator e)
{
    switch (e) {
    case Estimator::Unimodal: return "uni";
    case Estimator::Concave: return "concave";
    case Estimator::ElasticNet: return "en";
    case Estimator::Ridge: return "ridge";
    }
    return "?";
}

inline Estimator parse_estimator(const std::string& s)
{
    if (s == "uni") return Estimator::Unimodal;
    if (s == "concave") return Estimator::Concave;
    if (s == "en") return Estimator::ElasticNet;
    if (s == "ridge") return Estimator::Ridge;
    throw ConfigError("unknown estimator '" + s + "' (expected uni, concave, en or ridge)");
}

/**
 * One tuning pair. For the shape estimators (first, second) = (lambda1,
 * lambda2); for the elastic net (lambda, alpha); ridge uses first = lambda
 * and ignores second.
 */
struct Tuning
{
    double first = 0.0;
    double second = 0.0;

    friend bool operator==(const Tuning&, const Tuning&) = default;
};

/// Settings shared by every fit in a selection or bootstrap run.
struct FitOptions
{
    DescentConfig descent;
    int threads = 0;

    const AdmmConfig& admm() const { return descent.admm; }
};

/// Fits one estimator at one tuning pair; `warm` (may be null) seeds the solver.
inline FitResult fit_estimator(const RegressionData& data, QuantileLevel tau, Estimator est, const Tuning& tuning,
                               const FitOptions& options, const FitResult* warm = nullptr)
{
    const AdmmState* state = warm && detail::state_matches(warm->state, data) ? &warm->state : nullptr;
    switch (est) {
    case Estimator::Unimodal:
        return fit_unimodal(data, tau, tuning.first, tuning.second, options.descent, state ? warm : nullptr);
    case Estimator::Concave:
        return admm_fit(data, tau, PenaltyConfig(tuning.first, tuning.second, ShapeKind::NearlyConcave), std::nullopt,
                        options.admm(), state);
    case Estimator::ElasticNet: {
        EnConfig cfg;
        cfg.lambda = tuning.first;
        cfg.alpha = tuning.second;
        cfg.admm = options.admm();
        return fit_en(data, tau, cfg, state);
    }
    case Estimator::Ridge:
        return fit_ridge(data, tau, tuning.first, options.admm(), state);
    }
    throw ConfigError("unknown estimator");
}

/// Candidate values along both axes; sorted ascending and deduplicated by normalized().
struct TuningGrid
{
    std::vector<double> lambda1_values;
    std::vector<double> lambda2_values;

    TuningGrid normalized() const
    {
        TuningGrid g = *this;
        for (auto* v : {&g.lambda1_values, &g.lambda2_values}) {
            std::sort(v->begin(), v->end());
            v->erase(std::unique(v->begin(), v->end()), v->end());
        }
        return g;
    }

    void validate(Estimator est) const
    {
        if (lambda1_values.empty() || lambda2_values.empty()) throw ConfigError("tuning grid must be nonempty");
        for (double v : lambda1_values) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("first tuning values must be finite and >= 0");
        }
        for (double v : lambda2_values) {
            const bool shape = est == Estimator::Unimodal || est == Estimator::Concave;
            const bool ok = shape ? (v > 0.0 && std::isfinite(v)) : (v >= 0.0 && v <= 1.0);
            if (!ok && est != Estimator::Ridge) {
                throw ConfigError(shape ? "lambda2 values must be finite and > 0" : "alpha values must lie in [0, 1]");
            }
        }
    }
};

struct SelectionResult
{
    Estimator estimator = Estimator::Unimodal;
    Tuning best;
    TuningGrid grid;
    // rows follow lambda1_values, columns lambda2_values; NaN marks invalid cells
    Matrix score_table;
    // folds (or 1 for holdout) whose fit converged, per cell
    Eigen::MatrixXi converged_table;
    FitResult refit;
};

/// (1/m) sum rho_tau over the holdout.
inline double validation_score(const FitResult& fit, const RegressionData& holdout, QuantileLevel tau)
{
    if (holdout.n() == 0) throw DimensionError("holdout set is empty");
    if (fit.beta.rows() != holdout.K() || fit.beta.cols() != holdout.T() || fit.gamma.size() != holdout.p()) {
        throw DimensionError("fit and holdout dimensions differ");
    }
    return mean_check_loss(residuals(holdout, fit.beta, fit.gamma), tau);
}

/// Fold id in [0, folds) per observation: a seeded shuffle dealt round-robin.
inline std::vector<int> make_folds(Index n, int folds, std::uint64_t seed)
{
    if (folds < 2) throw ConfigError("need at least 2 folds");
    if (n < folds) {
        throw ConfigError("cannot split " + std::to_string(n) + " observations into " + std::to_string(folds) + " folds");
    }
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng = make_rng(seed, Stream::Folds);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> fold(static_cast<std::size_t>(n));
    for (std::size_t j = 0; j < order.size(); ++j) fold[static_cast<std::size_t>(order[j])] = static_cast<int>(j % folds);
    return fold;
}

namespace detail {

struct RowScores
{
    std::vector<double> score;
    std::vector<int> converged;
    std::vector<FitResult> fits;
};

// One warm-started chain along lambda1 (descending) at a fixed second value.
inline RowScores score_row(const RegressionData& train, const RegressionData& holdout, QuantileLevel tau,
                           Estimator est, const TuningGrid& grid, std::size_t col, const FitOptions& options,
                           bool keep_fits)
{
    const std::size_t rows = grid.lambda1_values.size();
    RowScores out;
    out.score.assign(rows, std::numeric_limits<double>::quiet_NaN());
    out.converged.assign(rows, 0);
    if (keep_fits) out.fits.resize(rows);
    std::optional<FitResult> previous;
    for (std::size_t r = rows; r-- > 0;) {
        const Tuning t{grid.lambda1_values[r], grid.lambda2_values[col]};
        FitResult fit = fit_estimator(train, tau, est, t, options, previous ? &*previous : nullptr);
        out.score[r] = validation_score(fit, holdout, tau);
        out.converged[r] = fit.converged ? 1 : 0;
        if (keep_fits) out.fits[r] = fit;
        previous = std::move(fit);
    }
    return out;
}

// Minimal finite score; ties go to larger first, then larger second value.
inline std::pair<std::size_t, std::size_t> argmin_cell(const Matrix& scores)
{
    std::pair<std::size_t, std::size_t> best{0, 0};
    double lowest = std::numeric_limits<double>::infinity();
    bool found = false;
    for (Index c = scores.cols(); c-- > 0;) {
        for (Index r = scores.rows(); r-- > 0;) {
            const double s = scores(r, c);
            if (!std::isfinite(s)) continue;
            const bool better = s < lowest;
            const bool tie_preferred = s == lowest && (static_cast<std::size_t>(r) > best.first ||
                                                       (static_cast<std::size_t>(r) == best.first &&
                                                        static_cast<std::size_t>(c) > best.second));
            if (!found || better || tie_preferred) {
                lowest = s;
                best = {static_cast<std::size_t>(r), static_cast<std::size_t>(c)};
                found = true;
            }
        }
    }
    if (!found) throw ConvergenceError("no grid cell produced a converged fit");
    return best;
}

inline std::vector<std::size_t> columns_descending(const TuningGrid& grid)
{
    std::vector<std::size_t> cols(grid.lambda2_values.size());
    for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = cols.size() - 1 - c;
    return cols;
}

inline TuningGrid prepared_grid(const TuningGrid& grid, Estimator est)
{
    TuningGrid g = grid.normalized();
    if (est == Estimator::Ridge) g.lambda2_values = {0.0};
    g.validate(est);
    return g;
}

} // namespace detail

/**
 * K-fold cross-validation over the grid. Each (fold, lambda2) pair is one
 * task that sweeps lambda1 from large to small with warm starts; cell scores
 * average the holdout check loss over folds whose fit converged, and a cell
 * with no converged fold is invalid. The winner is refit on all of `data`.
 */
inline SelectionResult select_cv(const RegressionData& data, QuantileLevel tau, const TuningGrid& grid, int folds,
                                 Estimator est, std::uint64_t seed, const FitOptions& options = {})
{
    const TuningGrid g = detail::prepared_grid(grid, est);
    const std::vector<int> fold_of = make_folds(data.n(), folds, seed);
    std::vector<RegressionData> train, test;
    for (int f = 0; f < folds; ++f) {
        std::vector<Index> in, out;
        for (Index i = 0; i < data.n(); ++i) (fold_of[static_cast<std::size_t>(i)] == f ? out : in).push_back(i);
        train.push_back(data.subset(in));
        test.push_back(data.subset(out));
    }
    const std::vector<std::size_t> cols = detail::columns_descending(g);
    const std::size_t tasks = static_cast<std::size_t>(folds) * cols.size();
    std::vector<detail::RowScores> results(tasks);
    parallel_for(tasks, resolve_threads(options.threads), [&](std::size_t i) {
        const std::size_t f = i / cols.size();
        results[i] = detail::score_row(train[f], test[f], tau, est, g, cols[i % cols.size()], options, false);
    });

    const Index R = static_cast<Index>(g.lambda1_values.size());
    const Index C = static_cast<Index>(g.lambda2_values.size());
    SelectionResult sel;
    sel.estimator = est;
    sel.grid = g;
    sel.score_table = Matrix::Constant(R, C, std::numeric_limits<double>::quiet_NaN());
    sel.converged_table = Eigen::MatrixXi::Zero(R, C);
    for (std::size_t i = 0; i < tasks; ++i) {
        const Index c = static_cast<Index>(cols[i % cols.size()]);
        for (Index r = 0; r < R; ++r) sel.converged_table(r, c) += results[i].converged[static_cast<std::size_t>(r)];
    }
    for (Index c = 0; c < C; ++c) {
        for (Index r = 0; r < R; ++r) {
            double sum = 0.0;
            int used = 0;
            // fixed fold order keeps the sum independent of scheduling
            for (int f = 0; f < folds; ++f) {
                const std::size_t task = static_cast<std::size_t>(f) * cols.size() +
                                         static_cast<std::size_t>(C - 1 - c);
                if (results[task].converged[static_cast<std::size_t>(r)]) {
                    sum += results[task].score[static_cast<std::size_t>(r)];
                    ++used;
                }
            }
            if (used > 0) sel.score_table(r, c) = sum / used;
        }
    }
    const auto [r, c] = detail::argmin_cell(sel.score_table);
    sel.best = Tuning{g.lambda1_values[r], g.lambda2_values[c]};
    sel.refit = fit_estimator(data, tau, est, sel.best, options);
    return sel;
}

/**
 * Tuning on a separate validation set: one fit per cell on `train`, scored
 * on `validation`. The winning cell's fit (on train) is returned as refit.
 */
inline SelectionResult select_holdout(const RegressionData& train, const RegressionData& validation, QuantileLevel tau,
                                      const TuningGrid& grid, Estimator est, const FitOptions& options = {})
{
    if (train.K() != validation.K() || train.T() != validation.T() || train.p() != validation.p()) {
        throw DimensionError("validation set has shape K=" + std::to_string(validation.K()) + ", T=" +
                             std::to_string(validation.T()) + ", p=" + std::to_string(validation.p()) +
                             " but training set has K=" + std::to_string(train.K()) + ", T=" +
                             std::to_string(train.T()) + ", p=" + std::to_string(train.p()));
    }
    const TuningGrid g = detail::prepared_grid(grid, est);
    const std::vector<std::size_t> cols = detail::columns_descending(g);
    std::vector<detail::RowScores> results(cols.size());
    parallel_for(cols.size(), resolve_threads(options.threads), [&](std::size_t i) {
        results[i] = detail::score_row(train, validation, tau, est, g, cols[i], options, true);
    });

    const Index R = static_cast<Index>(g.lambda1_values.size());
    const Index C = static_cast<Index>(g.lambda2_values.size());
    SelectionResult sel;
    sel.estimator = est;
    sel.grid = g;
    sel.score_table = Matrix::Constant(R, C, std::numeric_limits<double>::quiet_NaN());
    sel.converged_table = Eigen::MatrixXi::Zero(R, C);
    for (std::size_t i = 0; i < cols.size(); ++i) {
        const Index c = static_cast<Index>(cols[i]);
        for (Index r = 0; r < R; ++r) {
            sel.converged_table(r, c) = results[i].converged[static_cast<std::size_t>(r)];
            if (sel.converged_table(r, c)) sel.score_table(r, c) = results[i].score[static_cast<std::size_t>(r)];
        }
    }
    const auto [r, c] = detail::argmin_cell(sel.score_table);
    sel.best = Tuning{g.lambda1_values[r], g.lambda2_values[c]};
    sel.refit = std::move(results[static_cast<std::size_t>(C) - 1 - c].fits[r]);
    return sel;
}

} // namespace qdlag
