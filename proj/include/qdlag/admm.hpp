#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "prox.hpp"

namespace qdlag {

/// Outer prox-linear ADMM controls.
struct AdmmConfig
{
    // Augmented-Lagrangian penalty. Unset selects
    //   max(1 / (n sd(y)), rho_balance * 2c lambda_max(Q^T Q) / lambda_max(X_Z^T X_Z)),
    // both terms equivariant under rescaling of y (c scales as 1 / scale).
    std::optional<double> rho;
    double rho_balance = 0.3;
    double eps1 = 1e-4;
    double eps2 = 1e-4;
    int max_iter = 20000;
    ProxSettings prox;
    // The dual threshold scales with sqrt(T + p); set to use sqrt(K*T + p).
    bool dual_threshold_uses_KT = false;
    bool record_trace = true;
    // Evaluate the augmented-Lagrangian merit around every beta-step (costly).
    bool track_merit = false;

    void validate() const
    {
        if ((rho && !(*rho > 0.0)) || !(eps1 > 0.0) || !(eps2 > 0.0) || max_iter <= 0 || !(rho_balance >= 0.0)) {
            throw ConfigError("ADMM settings must be positive");
        }
        prox.validate();
    }

    /// Explicit rho, else the data-scale term 1 / (n sd(y)) of the default.
    double resolved_rho(const RegressionData& data) const
    {
        if (rho) return *rho;
        const Vector& y = data.response();
        double scale = y.size() > 0 ? std::sqrt((y.array() - y.mean()).square().mean()) : 1.0;
        if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
        return 1.0 / (static_cast<double>(std::max<Index>(data.n(), 1)) * scale);
    }
};

struct TraceEntry
{
    int iter = 0;
    double objective = 0.0;
    double primal_resid = 0.0;
    double dual_resid = 0.0;
    // Merit L_rho(r^t, beta, gamma_hat(beta), u^t) before and after the
    // beta-step; NaN unless AdmmConfig::track_merit is set.
    double merit_before = std::numeric_limits<double>::quiet_NaN();
    double merit_after = std::numeric_limits<double>::quiet_NaN();
};

/// Primal blocks (beta, gamma, r), dual u and the latest residuals.
struct AdmmState
{
    Matrix beta;
    Vector gamma;
    Vector r;
    Vector u;
    int iter = 0;
    double primal_resid = 0.0;
    double dual_resid = 0.0;
};

struct FitResult
{
    Matrix beta;
    Vector gamma;
    std::optional<ModeVector> modes;
    double objective = 0.0;
    bool converged = false;
    int iterations = 0;
    std::vector<TraceEntry> trace;
    // Objective after each outer (mode, coefficient) sweep; unimodal fits only.
    std::vector<double> outer_objectives;
    AdmmState state;
    double rho = 0.0;
    std::uint64_t tie_seed = 0;
};

/**
 * The (beta, gamma) block of the augmented Lagrangian written as one least
 * squares problem with stacked rows
 *
 *   x_tilde = [X; sqrt(2c / rho) Q],  z_tilde = [Z; 0],  y_tilde = [y; 0],
 *
 * where c * ||Q B||^2 is the quadratic penalty (Q = BlockDiag(D^(2)),
 * c = lambda2 for the shape estimators). Because the padded rows of z_tilde
 * are zero, I - P_Z~ acts as the residual-maker of Z on the first n
 * coordinates and as the identity on the padding.
 */
struct AugmentedProblem
{
    Matrix x_tilde;
    Matrix z_tilde;
    Vector y_tilde;
    Matrix x_proj;  // (I - P_Z~) x_tilde
    double eta = 1.0;
    double rho = 1.0;
    Index n = 0;

    Matrix penalty_rows;  // Q
    double penalty_weight = 0.0;  // c
    Matrix design_resid;  // (I - P_Z) X, the first n rows of x_proj
    Matrix w;  // (X, Z)
    Matrix w_gram;  // W^T W
    Matrix xtz_ginv;  // X^T Z (Z^T Z)^{-1}
    Matrix ztx;  // Z^T X
    Matrix hessian;  // x_proj^T x_proj
    Eigen::LDLT<Matrix> gram;  // Z^T Z

    Index p() const { return z_tilde.cols(); }

    /// (I - P_Z~) v for v in the padded space.
    Vector apply_projector_complement(const Vector& v) const
    {
        Vector out = v;
        if (p() > 0) {
            const Matrix& Z = z_tilde;
            out.head(n) -= Z.topRows(n) * gram.solve(Z.topRows(n).transpose() * v.head(n));
        }
        return out;
    }

    /// Z^T Z solve on an n-vector right-hand side projected through Z^T.
    Vector least_squares_gamma(const Vector& target) const
    {
        if (p() == 0) return Vector();
        return gram.solve(z_tilde.topRows(n).transpose() * target);
    }
};

namespace detail {

inline Matrix block_diag_difference(Index K, Index T, int order)
{
    if (K == 0) return Matrix::Zero(0, 0);
    const Matrix D = make_diff_operator(order, T).dense();
    Matrix Q = Matrix::Zero(K * D.rows(), K * T);
    for (Index k = 0; k < K; ++k) {
        Q.block(k * D.rows(), k * T, D.rows(), T) = D;
    }
    return Q;
}

inline double power_iteration_max_eigenvalue(const Matrix& H, double rel_tol = 1e-6, int max_iter = 100000)
{
    const Index m = H.rows();
    if (m == 0) return 0.0;
    Vector v(m);
    for (Index i = 0; i < m; ++i) v(i) = 1.0 + 1e-3 * static_cast<double>(i % 7);
    v.normalize();
    double estimate = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Vector w = H * v;
        const double next = v.dot(w);
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        v = w / norm;
        if (it > 0 && std::abs(next - estimate) <= rel_tol * std::abs(next)) return next;
        estimate = next;
    }
    return estimate;
}

} // namespace detail

/// Stacked problem for a general quadratic penalty c * ||Q B||^2.
inline AugmentedProblem build_augmented_quadratic(const RegressionData& data, const Matrix& Q,
                                                  double weight, std::optional<double> rho_opt,
                                                  double rho_balance = AdmmConfig{}.rho_balance)
{
    if (rho_opt && !(*rho_opt > 0.0)) throw ConfigError("rho must be > 0");
    if (!(weight >= 0.0)) throw ConfigError("quadratic penalty weight must be >= 0");
    const Index n = data.n();
    const Index KT = data.K() * data.T();
    const Index p = data.p();
    if (Q.cols() != KT) throw DimensionError("penalty rows do not match K*T");

    AugmentedProblem prob;
    prob.n = n;
    prob.penalty_rows = Q;
    prob.penalty_weight = weight;
    const Index rows = n + Q.rows();

    prob.z_tilde = Matrix::Zero(rows, p);
    prob.z_tilde.topRows(n) = data.covariates();
    prob.y_tilde = Vector::Zero(rows);
    prob.y_tilde.head(n) = data.response();

    if (p > 0) {
        Eigen::ColPivHouseholderQR<Matrix> qr(data.covariates());
        if (qr.rank() < p) {
            std::vector<int> bad;
            std::string names;
            for (Index j = qr.rank(); j < p; ++j) {
                const int col = qr.colsPermutation().indices()(j);
                bad.push_back(col);
                names += (names.empty() ? "" : ", ") + std::to_string(col + 1);
            }
            std::sort(bad.begin(), bad.end());
            throw SingularityError("covariate matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                                       " of " + std::to_string(p) + "); dependent column(s): " + names,
                                   bad);
        }
        prob.gram.compute(data.covariates().transpose() * data.covariates());
        prob.design_resid = data.design() -
                            data.covariates() * prob.gram.solve(data.covariates().transpose() * data.design());
    } else {
        prob.design_resid = data.design();
    }
    prob.w.resize(n, KT + p);
    prob.w << data.design(), data.covariates();
    prob.w_gram = prob.w.transpose() * prob.w;
    if (p > 0) {
        prob.ztx = data.covariates().transpose() * data.design();
        prob.xtz_ginv = prob.gram.solve(prob.ztx).transpose();
    }
    prob.hessian = prob.design_resid.transpose() * prob.design_resid;
    const Matrix qtq = Q.transpose() * Q;
    double rho = 0.0;
    if (rho_opt) {
        rho = *rho_opt;
    } else {
        AdmmConfig scale_rule;
        rho = scale_rule.resolved_rho(data);
        if (Q.rows() > 0 && weight > 0.0 && rho_balance > 0.0) {
            const double data_curv = detail::power_iteration_max_eigenvalue(prob.hessian);
            if (data_curv > 0.0) {
                const double balanced = rho_balance * 2.0 * weight * detail::power_iteration_max_eigenvalue(qtq) / data_curv;
                rho = std::max(rho, balanced);
            }
        }
    }
    prob.rho = rho;
    const double scale = std::sqrt(2.0 * weight / rho);
    prob.x_tilde.resize(rows, KT);
    prob.x_tilde.topRows(n) = data.design();
    prob.x_tilde.bottomRows(Q.rows()) = scale * Q;
    prob.x_proj = prob.x_tilde;
    prob.x_proj.topRows(n) = prob.design_resid;
    if (Q.rows() > 0) prob.hessian.noalias() += (scale * scale) * qtq;
    prob.eta = KT > 0 ? 1.01 * detail::power_iteration_max_eigenvalue(prob.hessian) : 1.0;
    if (!(prob.eta > 0.0)) prob.eta = 1.0;
    return prob;
}

/// Stacked problem for the smoothness penalty lambda2 * sum_k ||D^(2) beta_k||^2.
inline AugmentedProblem build_augmented(const RegressionData& data, double lambda2, std::optional<double> rho,
                                        double rho_balance = AdmmConfig{}.rho_balance)
{
    if (!(lambda2 > 0.0)) throw ConfigError("lambda2 must be > 0");
    const Matrix Q = data.K() > 0 ? detail::block_diag_difference(data.K(), data.T(), 2)
                                  : Matrix::Zero(0, 0);
    return build_augmented_quadratic(data, Q, lambda2, rho, rho_balance);
}

/// Shape-specific prox of t * g applied to each row of s.
struct ShapeProx
{
    ShapeKind shape = ShapeKind::None;
    std::optional<ModeVector> modes;
    ProxSettings settings;
    std::vector<OneSidedProxWorkspace> workspaces;

    void operator()(Matrix& s, double t)
    {
        if (shape == ShapeKind::None || t == 0.0) return;
        if (shape == ShapeKind::NearlyUnimodal) {
            if (!modes || modes->size() != s.rows()) {
                throw ConfigError("nearly-unimodal update needs one mode per exposure");
            }
            for (Index k = 0; k < s.rows(); ++k) {
                s.row(k) = prox_unimodal(s.row(k).transpose(), (*modes)[k], t).transpose();
            }
            return;
        }
        workspaces.resize(static_cast<std::size_t>(s.rows()));
        for (Index k = 0; k < s.rows(); ++k) {
            s.row(k) = prox_concave(s.row(k).transpose(), t, settings,
                                    &workspaces[static_cast<std::size_t>(k)])
                           .transpose();
        }
    }
};

namespace detail {

// Linearized target s = B + eta^{-1} X~_Z^T (t_bar - X~_Z B), flattened.
inline Vector linearized_target(const AugmentedProblem& prob, const Vector& b, const Vector& y,
                                const Vector& r, const Vector& u)
{
    const Vector v = y - r + u / prob.rho;
    Vector grad = prob.design_resid.transpose() * v;
    grad.noalias() -= prob.hessian * b;
    return b + grad / prob.eta;
}

} // namespace detail

/**
 * Prox-linear beta-step: beta_k <- Prox_{(lambda1 / rho eta) g}(s_k) for
 * every exposure, where s is the linearized target built from the current
 * (beta, r, u).
 */
inline Matrix update_beta(const AdmmState& state, const AugmentedProblem& prob, const RegressionData& data,
                          double lambda1, ShapeKind shape, const std::optional<ModeVector>& modes,
                          const ProxSettings& settings = {})
{
    const Vector s_flat = detail::linearized_target(prob, flatten(state.beta), data.response(), state.r, state.u);
    Matrix s = unflatten(s_flat, data.K(), data.T());
    ShapeProx prox{shape, modes, settings, {}};
    prox(s, lambda1 / (prob.rho * prob.eta));
    return s;
}

/// gamma_hat = (Z^T Z)^{-1} Z^T (y - r + u / rho - X B).
inline Vector update_gamma(const AdmmState& state, const AugmentedProblem& prob, const RegressionData& data)
{
    if (data.p() == 0) return Vector();
    Vector target = data.response() - state.r + state.u / prob.rho;
    if (data.K() > 0) target.noalias() -= data.design() * flatten(state.beta);
    return prob.least_squares_gamma(target);
}

/// r_i = Prox_{rho_tau / (n rho)}(y_i - tr(X_i^T beta) - Z_i^T gamma + u_i / rho).
inline Vector update_r(const AdmmState& state, const RegressionData& data, QuantileLevel tau, double rho)
{
    const Vector xi = residuals(data, state.beta, state.gamma) + state.u / rho;
    const double alpha = static_cast<double>(data.n()) * rho;
    Vector r(xi.size());
    for (Index i = 0; i < xi.size(); ++i) r(i) = prox_check(xi(i), tau, alpha);
    return r;
}

/// u <- u - rho (X B + Z gamma + r - y).
inline Vector update_u(const AdmmState& state, const RegressionData& data, double rho)
{
    return state.u + rho * (residuals(data, state.beta, state.gamma) - state.r);
}

struct ConvergenceCheck
{
    bool converged = false;
    double primal_resid = 0.0;
    double dual_resid = 0.0;
    double primal_tol = 0.0;
    double dual_tol = 0.0;
};

namespace detail {

inline ConvergenceCheck convergence_from_products(const Vector& fitted, const Vector& r, const Vector& y,
                                                  const Vector& wt_dr, const Vector& wt_u, const RegressionData& data,
                                                  const AdmmConfig& config, double rho)
{
    const double n = static_cast<double>(data.n());
    // eps * 0 is taken as 0 so that infinite tolerances stay well defined
    auto scaled = [](double eps, double x) { return x == 0.0 ? 0.0 : eps * x; };
    ConvergenceCheck out;
    out.primal_resid = (fitted + r - y).norm();
    out.primal_tol = std::sqrt(n) * config.eps1 +
                     scaled(config.eps2, std::max({fitted.norm(), r.norm(), y.norm()}));
    out.dual_resid = rho * wt_dr.norm();
    const double dim = static_cast<double>((config.dual_threshold_uses_KT ? data.K() * data.T() : data.T()) +
                                           data.p());
    out.dual_tol = scaled(config.eps1, std::sqrt(dim)) + scaled(config.eps2, wt_u.norm());
    out.converged = std::isfinite(out.primal_resid) && std::isfinite(out.dual_resid) &&
                    out.primal_resid <= out.primal_tol && out.dual_resid <= out.dual_tol;
    return out;
}

inline ConvergenceCheck check_convergence(const Vector& fitted, const Vector& r, const Vector& r_prev,
                                          const Vector& u, const RegressionData& data,
                                          const AdmmConfig& config)
{
    const Vector dr = r - r_prev;
    Vector wt_dr(data.K() * data.T() + data.p());
    Vector wt_u(wt_dr.size());
    wt_dr << data.design().transpose() * dr, data.covariates().transpose() * dr;
    wt_u << data.design().transpose() * u, data.covariates().transpose() * u;
    return convergence_from_products(fitted, r, data.response(), wt_dr, wt_u, data, config,
                                     config.resolved_rho(data));
}

} // namespace detail

/**
 * Relative primal/dual residual test:
 *   ||XB + Z gamma + r - y|| <= sqrt(n) eps1 + eps2 max(||XB + Z gamma||, ||r||, ||y||)
 *   rho ||W^T (r - r_prev)|| <= sqrt(T + p) eps1 + eps2 ||W^T u||,  W = (X, Z).
 */
inline ConvergenceCheck check_convergence(const AdmmState& state, const Vector& prev_r,
                                          const RegressionData& data, const AdmmConfig& config)
{
    return detail::check_convergence(linear_predictor(data, state.beta, state.gamma), state.r, prev_r,
                                     state.u, data, config);
}

namespace detail {

/// Pieces of a composite problem f(r) + w * g(B) + c ||Q B||^2 solved by the
/// prox-linear ADMM. `prox(s, t)` applies Prox_{t g} to each row of s.
struct CompositeTerms
{
    double weight = 0.0;
    std::function<double(const Matrix&)> penalty;
    std::function<void(Matrix&, double)> prox;
    // everything but the loss, for the per-iteration trace
    std::function<double(const Matrix&)> regularizer;
    std::function<double(const Matrix&, const Vector&)> objective;
};

inline AdmmState default_state(const RegressionData& data)
{
    AdmmState s;
    s.beta = Matrix::Zero(data.K(), data.T());
    s.gamma = Vector::Zero(data.p());
    s.r = data.response();
    s.u = Vector::Zero(data.n());
    return s;
}

inline bool state_matches(const AdmmState& s, const RegressionData& data)
{
    return s.beta.rows() == data.K() && s.beta.cols() == data.T() && s.gamma.size() == data.p() &&
           s.r.size() == data.n() && s.u.size() == data.n() && s.beta.allFinite() && s.gamma.allFinite() &&
           s.r.allFinite() && s.u.allFinite();
}

inline FitResult run_prox_linear_admm(const RegressionData& data, QuantileLevel tau, const AugmentedProblem& prob,
                                      CompositeTerms& terms, const AdmmConfig& config, const AdmmState* init)
{
    config.validate();
    const Index n = data.n();
    const Index K = data.K();
    const Index T = data.T();
    const Index KT = K * T;
    const Index p = data.p();
    const Vector& y = data.response();
    const Matrix& X = data.design();
    const Matrix& Z = data.covariates();
    const double rho = prob.rho;
    const double step = terms.weight / (rho * prob.eta);
    const double alpha = static_cast<double>(n) * rho;

    AdmmState st = (init && state_matches(*init, data)) ? *init : default_state(data);
    Vector b = flatten(st.beta);
    Vector xb = K > 0 ? Vector(X * b) : Vector::Zero(n);
    Vector zg = Z * st.gamma;

    // Length-n products per iteration: X b and W^T r. W^T u follows the
    // affine u-step through W^T W.
    const Vector wty = prob.w.transpose() * y;
    Vector wtr = prob.w.transpose() * st.r;
    Vector wtu = prob.w.transpose() * st.u;

    auto merit = [&](const Vector& bflat, const Vector& r, const Vector& u) {
        // lambda g(B) + rho/2 ||X~_Z B - t_bar||^2 + f(r) without the B-free ||t_bar||^2
        const Vector v = y - r + u / rho;
        const Vector xzb = prob.design_resid * bflat;
        double quad = xzb.squaredNorm() - 2.0 * xzb.dot(v);
        if (prob.penalty_rows.rows() > 0) {
            quad += (2.0 * prob.penalty_weight / rho) * (prob.penalty_rows * bflat).squaredNorm();
        }
        double value = 0.5 * rho * quad + mean_check_loss(r, tau);
        if (terms.weight > 0.0) value += terms.weight * terms.penalty(unflatten(bflat, K, T));
        return value;
    };

    FitResult result;
    if (config.record_trace) result.trace.reserve(static_cast<std::size_t>(std::min(config.max_iter, 4096)));
    bool converged = false;
    int it = 0;
    Vector r_prev;
    Vector wtr_prev;
    Vector fitted(n);
    Vector coef(KT + p);
    for (it = 1; it <= config.max_iter; ++it) {
        TraceEntry entry;
        entry.iter = it;
        if (config.track_merit) entry.merit_before = merit(b, st.r, st.u);

        // W^T (y - r + u / rho)
        const Vector wtv = wty - wtr + wtu / rho;

        // beta-step: s = B + eta^{-1} (X_Z^T v - H B), X_Z^T v = X^T v - X^T Z (Z^T Z)^{-1} Z^T v
        if (K > 0) {
            Vector grad = wtv.head(KT);
            if (p > 0) grad.noalias() -= prob.xtz_ginv * wtv.tail(p);
            grad.noalias() -= prob.hessian * b;
            Matrix s = unflatten(b + grad / prob.eta, K, T);
            if (step > 0.0) terms.prox(s, step);
            b = flatten(s);
            xb.noalias() = X * b;
        }
        // gamma-step: (Z^T Z)^{-1} (Z^T v - Z^T X B)
        if (p > 0) {
            Vector rhs = wtv.tail(p);
            if (K > 0) rhs.noalias() -= prob.ztx * b;
            st.gamma = prob.gram.solve(rhs);
            zg.noalias() = Z * st.gamma;
        }
        if (config.track_merit) entry.merit_after = merit(b, st.r, st.u);

        // r-step
        r_prev = st.r;
        fitted = xb + zg;
        for (Index i = 0; i < n; ++i) {
            st.r(i) = prox_check(y(i) - fitted(i) + st.u(i) / rho, tau, alpha);
        }
        // u-step
        st.u -= rho * (fitted + st.r - y);

        wtr_prev = wtr;
        wtr.noalias() = prob.w.transpose() * st.r;
        coef << b, st.gamma;
        wtu.noalias() -= rho * (prob.w_gram * coef + wtr - wty);
        const ConvergenceCheck check =
            detail::convergence_from_products(fitted, st.r, y, wtr - wtr_prev, wtu, data, config, rho);
        st.primal_resid = check.primal_resid;
        st.dual_resid = check.dual_resid;
        if (config.record_trace) {
            entry.primal_resid = check.primal_resid;
            entry.dual_resid = check.dual_resid;
            entry.objective = mean_check_loss(y - fitted, tau) + terms.regularizer(unflatten(b, K, T));
            result.trace.push_back(entry);
        }
        if (check.converged) {
            converged = true;
            break;
        }
    }
    st.beta = unflatten(b, K, T);
    st.iter = converged ? it : config.max_iter;
    result.beta = st.beta;
    result.gamma = st.gamma;
    result.converged = converged;
    result.iterations = st.iter;
    result.objective = terms.objective(result.beta, result.gamma);
    result.state = std::move(st);
    result.rho = rho;
    return result;
}

} // namespace detail

/**
 * Prox-linear ADMM for
 *   (1/n) sum rho_tau(y_i - tr(X_i^T beta) - Z_i^T gamma) + lambda1 g(beta) + lambda2 sum_k ||D^(2) beta_k||^2
 * with g fixed by cfg.shape() (and the modes for the nearly-unimodal penalty).
 *
 * Non-convergence within max_iter is reported through FitResult::converged.
 */
inline FitResult admm_fit(const RegressionData& data, QuantileLevel tau, const PenaltyConfig& cfg,
                          const std::optional<ModeVector>& modes, const AdmmConfig& config = {},
                          const AdmmState* init = nullptr)
{
    if (cfg.shape() == ShapeKind::NearlyUnimodal) {
        if (!modes) throw ConfigError("nearly-unimodal fit requires modes");
        if (modes->size() != data.K()) throw DimensionError("need one mode per exposure");
    }
    const AugmentedProblem prob = build_augmented(data, cfg.lambda2(), config.rho, config.rho_balance);
    auto prox = std::make_shared<ShapeProx>(ShapeProx{cfg.shape(), modes, config.prox, {}});
    detail::CompositeTerms terms;
    terms.weight = cfg.lambda1();
    terms.penalty = [&cfg, &modes](const Matrix& beta) { return shape_penalty(beta, cfg.shape(), modes); };
    terms.prox = [prox](Matrix& s, double t) { (*prox)(s, t); };
    terms.regularizer = [&cfg, &modes](const Matrix& beta) {
        double v = cfg.lambda2() * smoothness_penalty(beta);
        if (cfg.lambda1() > 0.0) v += cfg.lambda1() * shape_penalty(beta, cfg.shape(), modes);
        return v;
    };
    terms.objective = [&](const Matrix& beta, const Vector& gamma) {
        return objective(data, beta, gamma, cfg, modes, tau);
    };
    FitResult result = detail::run_prox_linear_admm(data, tau, prob, terms, config, init);
    result.modes = modes;
    return result;
}

} // namespace qdlag
