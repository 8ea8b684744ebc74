#pragma once

#include <memory>

#include "admm.hpp"

namespace qdlag {

struct EnConfig
{
    double lambda = 0.0;
    double alpha = 0.5;
    AdmmConfig admm;

    void validate() const
    {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
        admm.validate();
    }
};

/// lambda * sum_k ((1 - alpha) / 2 ||beta_k||^2 + alpha ||beta_k||_1)
inline double elastic_net_penalty(const Matrix& beta, double lambda, double alpha)
{
    return lambda * (0.5 * (1.0 - alpha) * beta.squaredNorm() + alpha * beta.cwiseAbs().sum());
}

inline double elastic_net_objective(const RegressionData& data, const Matrix& beta, const Vector& gamma,
                                    double lambda, double alpha, QuantileLevel tau)
{
    return mean_check_loss(residuals(data, beta, gamma), tau) + elastic_net_penalty(beta, lambda, alpha);
}

/**
 * Elastic-net penalized quantile regression with unpenalized covariates,
 * solved by the same prox-linear ADMM: the ridge part enters the quadratic
 * block as identity rows, the lasso part through soft-thresholding.
 */
inline FitResult fit_en(const RegressionData& data, QuantileLevel tau, const EnConfig& cfg,
                        const AdmmState* init = nullptr)
{
    cfg.validate();
    const Index KT = data.K() * data.T();
    const double ridge = 0.5 * cfg.lambda * (1.0 - cfg.alpha);
    const Matrix Q = ridge > 0.0 ? Matrix(Matrix::Identity(KT, KT)) : Matrix(0, KT);
    const AugmentedProblem prob = build_augmented_quadratic(data, Q, ridge, cfg.admm.rho, cfg.admm.rho_balance);

    detail::CompositeTerms terms;
    terms.weight = cfg.lambda * cfg.alpha;
    terms.penalty = [](const Matrix& beta) { return beta.cwiseAbs().sum(); };
    terms.prox = [](Matrix& s, double t) { s = s.unaryExpr([t](double v) { return soft_threshold(v, t); }); };
    terms.regularizer = [&cfg](const Matrix& beta) { return elastic_net_penalty(beta, cfg.lambda, cfg.alpha); };
    terms.objective = [&](const Matrix& beta, const Vector& gamma) {
        return elastic_net_objective(data, beta, gamma, cfg.lambda, cfg.alpha, tau);
    };
    return detail::run_prox_linear_admm(data, tau, prob, terms, cfg.admm, init);
}

/// Ridge quantile regression: elastic net with alpha = 0.
inline FitResult fit_ridge(const RegressionData& data, QuantileLevel tau, double lambda, const AdmmConfig& admm = {},
                           const AdmmState* init = nullptr)
{
    EnConfig cfg;
    cfg.lambda = lambda;
    cfg.alpha = 0.0;
    cfg.admm = admm;
    return fit_en(data, tau, cfg, init);
}

} // namespace qdlag
