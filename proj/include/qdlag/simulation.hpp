#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "core.hpp"
#include "random.hpp"

namespace qdlag {

enum class CoefficientModel { A, B, C };
enum class ErrorLaw { Normal, StudentT4 };

inline std::string to_string(CoefficientModel m)
{
    switch (m) {
    case CoefficientModel::A: return "A";
    case CoefficientModel::B: return "B";
    case CoefficientModel::C: return "C";
    }
    return "?";
}

inline std::string to_string(ErrorLaw e) { return e == ErrorLaw::Normal ? "normal" : "t4"; }

inline const std::vector<int>& default_modes()
{
    static const std::vector<int> modes{12, 15, 18, 17, 15, 13};
    return modes;
}

/**
 * Simulation design. Coefficients (beta*, gamma*) depend only on `seed`;
 * each replicate draws exposures, covariates and errors from its own stream
 * so datasets with the same seed and replicate differ across snr only
 * through sigma.
 */
struct SimConfig
{
    Index n = 500;
    Index K = 6;
    Index T = 30;
    Index p = 5;
    CoefficientModel model = CoefficientModel::A;
    ErrorLaw error = ErrorLaw::Normal;
    double snr = 0.5;
    double tau = 0.25;
    std::uint64_t seed = 0;
    std::uint64_t replicate = 0;
    std::vector<int> modes = default_modes();

    void validate() const
    {
        if (n < 1 || K < 1 || T < 3 || p < 0) throw ConfigError("simulation needs n >= 1, K >= 1, T >= 3, p >= 0");
        if (!(snr > 0.0) || !std::isfinite(snr)) throw ConfigError("snr must be > 0");
        if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
        if (static_cast<Index>(modes.size()) != K) {
            throw ConfigError("simulation needs " + std::to_string(K) + " modes, got " + std::to_string(modes.size()));
        }
        for (int m : modes) {
            if (m < 1 || m > T) throw DimensionError("mode " + std::to_string(m) + " is outside [1, T]");
        }
    }
};

struct SimTruth
{
    Matrix beta_star;
    Vector gamma_star;
    double sigma = 0.0;
    ModeVector modes;
    // tau-quantile of sigma * eps, absorbed by a fitted intercept
    double quantile_shift = 0.0;
};

struct SimDataset
{
    RegressionData data;
    SimTruth truth;
};

namespace detail {

// Values rising from -5 to 5 over `count` points with the given positive steps.
inline std::vector<double> calibrated_ramp(const std::vector<double>& steps)
{
    double total = 0.0;
    for (double s : steps) total += s;
    std::vector<double> out{-5.0};
    double acc = 0.0;
    for (std::size_t j = 0; j < steps.size(); ++j) {
        acc += steps[j];
        out.push_back(j + 1 == steps.size() ? 5.0 : -5.0 + 10.0 * acc / total);
    }
    return out;
}

} // namespace detail

/**
 * True lag coefficients.
 *   A: uniform random increments scaled so each side spans 10, from -5 at
 *      both ends to 5 at the mode; frozen by the seed.
 *   B: A with entries of magnitude <= 2.5 set to 0.
 *   C: 5 - 10 x^2 on x in [-1, 0] before the mode and [0, 1] after it.
 */
inline Matrix gen_beta(CoefficientModel model, Index K, Index T, const std::vector<int>& modes, std::uint64_t seed)
{
    if (static_cast<Index>(modes.size()) != K) throw DimensionError("need one mode per exposure");
    for (int m : modes) {
        if (m < 1 || m > T) throw DimensionError("mode " + std::to_string(m) + " is outside [1, T]");
    }
    Matrix beta(K, T);
    if (model == CoefficientModel::C) {
        for (Index k = 0; k < K; ++k) {
            const Index M = modes[static_cast<std::size_t>(k)];
            for (Index t = 1; t <= T; ++t) {
                double x = 0.0;
                if (t < M) x = -1.0 + static_cast<double>(t - 1) / static_cast<double>(M - 1);
                if (t > M) x = static_cast<double>(t - M) / static_cast<double>(T - M);
                beta(k, t - 1) = 5.0 - 10.0 * x * x;
            }
        }
        return beta;
    }
    Rng rng = make_rng(seed, Stream::SimCoefficients);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (Index k = 0; k < K; ++k) {
        const Index M = modes[static_cast<std::size_t>(k)];
        std::vector<double> up(static_cast<std::size_t>(M - 1));
        std::vector<double> down(static_cast<std::size_t>(T - M));
        for (double& v : up) v = 1.0 - U(rng);
        for (double& v : down) v = 1.0 - U(rng);
        const std::vector<double> rise = M > 1 ? detail::calibrated_ramp(up) : std::vector<double>{5.0};
        const std::vector<double> fall = T > M ? detail::calibrated_ramp(down) : std::vector<double>{5.0};
        for (Index t = 0; t < M; ++t) beta(k, t) = rise[static_cast<std::size_t>(t)];
        for (Index t = M; t < T; ++t) beta(k, t) = fall[static_cast<std::size_t>(T - 1 - t)];
    }
    if (model == CoefficientModel::B) {
        beta = beta.unaryExpr([](double v) { return std::abs(v) > 2.5 ? v : 0.0; });
    }
    return beta;
}

/// Draws one K x T exposure history: rows are independent AR(1) paths with
/// coefficient 0.8 and unit stationary variance.
inline Matrix draw_exposure(Index K, Index T, Rng& rng)
{
    std::normal_distribution<double> N;
    Matrix x(K, T);
    for (Index k = 0; k < K; ++k) {
        x(k, 0) = N(rng);
        for (Index t = 1; t < T; ++t) x(k, t) = 0.8 * x(k, t - 1) + 0.6 * N(rng);
    }
    return x;
}

inline std::vector<Matrix> gen_exposures(Index n, Index K, Index T, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) out.push_back(draw_exposure(K, T, rng));
    return out;
}

inline double error_variance(ErrorLaw e) { return e == ErrorLaw::Normal ? 1.0 : 2.0; }

inline double error_quantile(ErrorLaw e, double tau)
{
    if (e == ErrorLaw::Normal) return boost::math::quantile(boost::math::normal_distribution<double>(), tau);
    return boost::math::quantile(boost::math::students_t_distribution<double>(4.0), tau);
}

namespace detail {

struct RawSample
{
    Matrix design;
    Matrix covariates;
    Vector signal;
    Vector errors;
};

inline RawSample draw_sample(const SimConfig& cfg, const Matrix& beta, const Vector& gamma, std::uint64_t stream_index)
{
    Rng rng = make_rng(cfg.seed, Stream::SimReplicate, stream_index);
    RawSample s;
    s.design.resize(cfg.n, cfg.K * cfg.T);
    for (Index i = 0; i < cfg.n; ++i) {
        const Matrix x = draw_exposure(cfg.K, cfg.T, rng);
        s.design.row(i) = flatten(x).transpose();
    }
    std::normal_distribution<double> N;
    s.covariates.resize(cfg.n, cfg.p);
    for (Index i = 0; i < cfg.n; ++i)
        for (Index j = 0; j < cfg.p; ++j) s.covariates(i, j) = N(rng);
    s.errors.resize(cfg.n);
    if (cfg.error == ErrorLaw::Normal) {
        for (Index i = 0; i < cfg.n; ++i) s.errors(i) = N(rng);
    } else {
        std::student_t_distribution<double> t4(4.0);
        for (Index i = 0; i < cfg.n; ++i) s.errors(i) = t4(rng);
    }
    s.signal = s.design * flatten(beta) + s.covariates * gamma;
    return s;
}

inline RegressionData assemble(const RawSample& s, const SimConfig& cfg, double sigma)
{
    return RegressionData(s.design, cfg.K, cfg.T, s.covariates, s.signal + sigma * s.errors);
}

} // namespace detail

inline Vector gen_gamma(Index p, std::uint64_t seed)
{
    Rng rng = make_rng(seed, Stream::SimCovariateCoefficients);
    std::normal_distribution<double> N;
    Vector g(p);
    for (Index j = 0; j < p; ++j) g(j) = N(rng);
    return g;
}

/**
 * Training sample y_i = tr(X_i^T beta*) + Z_i^T gamma* + sigma eps_i with
 * sigma chosen so that var(signal) / (sigma^2 var(eps)) = snr on the
 * realized signal (population variance).
 */
inline SimDataset gen_dataset(const SimConfig& cfg)
{
    cfg.validate();
    SimTruth truth;
    truth.beta_star = gen_beta(cfg.model, cfg.K, cfg.T, cfg.modes, cfg.seed);
    truth.gamma_star = gen_gamma(cfg.p, cfg.seed);
    truth.modes = ModeVector(cfg.modes, static_cast<int>(cfg.T));
    const auto raw = detail::draw_sample(cfg, truth.beta_star, truth.gamma_star, 2 * cfg.replicate);
    const double var_signal = (raw.signal.array() - raw.signal.mean()).square().mean();
    truth.sigma = std::sqrt(var_signal / (cfg.snr * error_variance(cfg.error)));
    truth.quantile_shift = truth.sigma * error_quantile(cfg.error, cfg.tau);
    return SimDataset{detail::assemble(raw, cfg, truth.sigma), std::move(truth)};
}

/// Independent sample from the same law and sigma, for validation-set tuning.
inline RegressionData gen_validation(const SimConfig& cfg, const SimTruth& truth)
{
    cfg.validate();
    const auto raw = detail::draw_sample(cfg, truth.beta_star, truth.gamma_star, 2 * cfg.replicate + 1);
    return detail::assemble(raw, cfg, truth.sigma);
}

/// ||beta* - beta_hat||_2 over all K x T entries.
inline double estimation_error(const Matrix& beta_hat, const Matrix& beta_star)
{
    if (beta_hat.rows() != beta_star.rows() || beta_hat.cols() != beta_star.cols()) {
        throw DimensionError("coefficient shapes differ");
    }
    return (beta_star - beta_hat).norm();
}

} // namespace qdlag
