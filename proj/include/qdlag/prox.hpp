#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "banded.hpp"
#include "core.hpp"

namespace qdlag {

/// Prox of rho_tau / alpha evaluated at xi.
inline double prox_check(double xi, QuantileLevel tau, double alpha)
{
    const double upper = tau.value() / alpha;
    const double lower = (tau.value() - 1.0) / alpha;
    if (xi > upper) return xi - upper;
    if (xi < lower) return xi - lower;
    return 0.0;
}

inline double soft_threshold(double x, double t)
{
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

/// Unweighted isotonic (nondecreasing) least squares by pool-adjacent-violators.
inline Vector pava(const Eigen::Ref<const Vector>& y)
{
    const Index m = y.size();
    std::vector<double> value;
    std::vector<Index> count;
    value.reserve(static_cast<std::size_t>(m));
    count.reserve(static_cast<std::size_t>(m));
    for (Index i = 0; i < m; ++i) {
        value.push_back(y(i));
        count.push_back(1);
        while (value.size() > 1 && value[value.size() - 2] > value.back()) {
            const double w1 = static_cast<double>(count[count.size() - 2]);
            const double w2 = static_cast<double>(count.back());
            const double merged = (w1 * value[value.size() - 2] + w2 * value.back()) / (w1 + w2);
            const Index c = count[count.size() - 2] + count.back();
            value.pop_back();
            count.pop_back();
            value.back() = merged;
            count.back() = c;
        }
    }
    Vector out(m);
    Index pos = 0;
    for (std::size_t b = 0; b < value.size(); ++b) {
        out.segment(pos, count[b]).setConstant(value[b]);
        pos += count[b];
    }
    return out;
}

enum class Direction { Increasing, Decreasing };

namespace detail {

// Continuous, strictly increasing piecewise-linear function stored as
// knots t_0 < ... < t_{q-1} and q + 1 affine pieces a_j * x + c_j; piece j
// covers (t_{j-1}, t_j].
struct PiecewiseLinear
{
    std::vector<double> knots;
    std::vector<double> slope;
    std::vector<double> intercept;

    // Root of f(x) = v.
    double solve(double v) const
    {
        const std::size_t q = knots.size();
        for (std::size_t j = 0; j < q; ++j) {
            if (slope[j] * knots[j] + intercept[j] >= v) {
                return (v - intercept[j]) / slope[j];
            }
        }
        return (v - intercept[q]) / slope[q];
    }
};

// Exact nearly-isotonic fit penalizing decreases, by dynamic programming
// over derivative messages. After absorbing observation i the message is
// F_i'(b) = G_{i-1}'(b) + (b - y_i); minimizing out b_i against the
// penalty clamps it: G_i'(b) = min(max(F_i'(b), -lambda), 0).
inline Vector nearly_isotonic_increasing(const Eigen::Ref<const Vector>& y, double lambda)
{
    const Index m = y.size();
    PiecewiseLinear msg;
    msg.slope = {0.0};
    msg.intercept = {0.0};
    std::vector<double> lo(static_cast<std::size_t>(m));
    std::vector<double> hi(static_cast<std::size_t>(m));
    Vector b(m);

    for (Index i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < msg.slope.size(); ++j) {
            msg.slope[j] += 1.0;
            msg.intercept[j] -= y(i);
        }
        if (i == m - 1) {
            b(i) = msg.solve(0.0);
            break;
        }
        const double x_hi = msg.solve(0.0);
        const double x_lo = msg.solve(-lambda);
        lo[static_cast<std::size_t>(i)] = x_lo;
        hi[static_cast<std::size_t>(i)] = x_hi;

        PiecewiseLinear next;
        next.knots.push_back(x_lo);
        next.slope.push_back(0.0);
        next.intercept.push_back(-lambda);
        const std::size_t q = msg.knots.size();
        for (std::size_t j = 0; j <= q; ++j) {
            const double left = (j == 0) ? -std::numeric_limits<double>::infinity() : msg.knots[j - 1];
            const double right = (j == q) ? std::numeric_limits<double>::infinity() : msg.knots[j];
            if (right <= x_lo || left >= x_hi) continue;
            next.slope.push_back(msg.slope[j]);
            next.intercept.push_back(msg.intercept[j]);
            if (right < x_hi) next.knots.push_back(right);
        }
        next.knots.push_back(x_hi);
        next.slope.push_back(0.0);
        next.intercept.push_back(0.0);
        msg = std::move(next);
    }
    for (Index i = m - 2; i >= 0; --i) {
        b(i) = std::clamp(b(i + 1), lo[static_cast<std::size_t>(i)], hi[static_cast<std::size_t>(i)]);
    }
    return b;
}

} // namespace detail

/**
 * Exact minimizer of (1/2) sum (y_i - b_i)^2 + lambda * sum max(b_i - b_{i+1}, 0)
 * (Increasing) or with max(b_{i+1} - b_i, 0) (Decreasing, via sign flip).
 *
 * Once lambda >= range(y) * m the solution is the isotonic regression of y,
 * which is returned directly.
 */
inline Vector nearly_isotonic(const Eigen::Ref<const Vector>& y, double lambda,
                              Direction direction = Direction::Increasing)
{
    if (!(lambda >= 0.0)) {
        throw ConfigError("nearly-isotonic penalty must be >= 0");
    }
    const Index m = y.size();
    if (m <= 1 || lambda == 0.0) {
        return y;
    }
    const Vector signed_y = direction == Direction::Increasing ? Vector(y) : Vector(-y);
    const double range = signed_y.maxCoeff() - signed_y.minCoeff();
    Vector fit = lambda >= range * static_cast<double>(m)
                     ? pava(signed_y)
                     : detail::nearly_isotonic_increasing(signed_y, lambda);
    if (direction == Direction::Decreasing) fit = -fit;
    return fit;
}

/// Prox of lambda * unimodal_penalty(., mode): two independent nearly-isotonic fits.
inline Vector prox_unimodal(const Eigen::Ref<const Vector>& s, int mode, double lambda)
{
    const Index T = s.size();
    if (mode < 1 || mode > T) {
        throw DimensionError("mode " + std::to_string(mode) + " is outside [1, " +
                             std::to_string(T) + "]");
    }
    Vector out(T);
    out.head(mode) = nearly_isotonic(s.head(mode), lambda, Direction::Increasing);
    if (mode < T) {
        out.tail(T - mode) = nearly_isotonic(s.tail(T - mode), lambda, Direction::Decreasing);
    }
    return out;
}

/// Controls for the difference-penalty proxes.
struct ProxSettings
{
    // active-set solve of the dual; false forces the inner ADMM
    bool exact = true;
    int inner_max_iter = 10000;
    double inner_tol = 1e-8;
    double inner_step = 1.0;

    void validate() const
    {
        if (inner_max_iter <= 0 || !(inner_tol > 0.0) || !(inner_step > 0.0)) {
            throw ConfigError("prox settings must be positive");
        }
    }
};

/**
 * Reusable state for the difference-penalty inner ADMM: the banded factor
 * of I + sigma D^T D and the last split/dual iterates, used as a warm start
 * when the same-sized problem is solved again.
 */
struct OneSidedProxWorkspace
{
    int order = 0;
    Index length = 0;
    double sigma = 0.0;
    BandedCholesky factor;
    Vector z;
    Vector w;
    bool warm = false;
    int last_iterations = 0;
    // active-set state: dual iterate and bound status (0 lower, 1 upper, 2 free)
    Vector nu;
    std::vector<signed char> status;

    void prepare(const DifferenceOperator& D, double step)
    {
        if (order != D.order() || length != D.length() || sigma != step) {
            order = D.order();
            length = D.length();
            sigma = step;
            factor = factor_identity_plus_gram(D, step);
            warm = false;
        }
    }
};

namespace detail {

/**
 * Primal active-set method for the dual box QP
 *   min (1/2) ||s - D^T nu||^2  subject to 0 <= nu <= lambda,
 * whose solution gives b = s - D^T nu. Every subproblem is a banded solve on
 * the free coordinates. Returns false if the change budget is exhausted.
 */
inline bool one_sided_dual_active_set(const Eigen::Ref<const Vector>& s, double lambda, const DifferenceOperator& D,
                                      const Vector& Ds, OneSidedProxWorkspace& ws, Vector& b)
{
    const Index m = D.rows();
    const int v = D.order();
    const auto& c = D.stencil();
    auto gram = [&](Index i, Index j) {
        // (D D^T)(i, j) = sum_t c[t - i] c[t - j]
        const Index d = std::abs(i - j);
        if (d > v) return 0.0;
        double acc = 0.0;
        for (int t = static_cast<int>(d); t <= v; ++t) {
            acc += c[static_cast<std::size_t>(t)] * c[static_cast<std::size_t>(t - d)];
        }
        return acc;
    };

    if (ws.nu.size() != m || ws.status.size() != static_cast<std::size_t>(m)) {
        ws.nu = Vector::Zero(m);
        ws.status.assign(static_cast<std::size_t>(m), 0);
    }
    Vector& nu = ws.nu;
    auto& st = ws.status;
    for (Index j = 0; j < m; ++j) {
        auto& sj = st[static_cast<std::size_t>(j)];
        if (sj == 0) nu(j) = 0.0;
        else if (sj == 1) nu(j) = lambda;
        else nu(j) = std::clamp(nu(j), 0.0, lambda);
    }

    const double tol = 1e-12 * std::max(1.0, s.cwiseAbs().maxCoeff());
    const int budget = 20 * static_cast<int>(m) + 100;
    std::vector<Index> free;
    Vector x;
    for (int change = 0; change < budget; ++change) {
        free.clear();
        for (Index j = 0; j < m; ++j) {
            if (st[static_cast<std::size_t>(j)] == 2) free.push_back(j);
        }
        const auto nf = static_cast<Index>(free.size());
        bool feasible = true;
        if (nf > 0) {
            x.resize(nf);
            for (Index a = 0; a < nf; ++a) {
                const Index i = free[static_cast<std::size_t>(a)];
                double acc = Ds(i);
                for (Index j = std::max<Index>(0, i - v); j <= std::min<Index>(m - 1, i + v); ++j) {
                    if (st[static_cast<std::size_t>(j)] != 2) acc -= gram(i, j) * nu(j);
                }
                x(a) = acc;
            }
            const BandedCholesky chol(nf, v, [&](Index a, int off) {
                return gram(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(a - off)]);
            });
            chol.solve_in_place(x);
            double step = 1.0;
            Index block = -1;
            for (Index a = 0; a < nf; ++a) {
                const double cur = nu(free[static_cast<std::size_t>(a)]);
                if (x(a) < 0.0 && cur - x(a) > 0.0) {
                    const double r = cur / (cur - x(a));
                    if (r < step) { step = r; block = a; }
                } else if (x(a) > lambda && x(a) - cur > 0.0) {
                    const double r = (lambda - cur) / (x(a) - cur);
                    if (r < step) { step = r; block = a; }
                }
            }
            if (block >= 0) {
                feasible = false;
                for (Index a = 0; a < nf; ++a) {
                    const Index i = free[static_cast<std::size_t>(a)];
                    nu(i) += step * (x(a) - nu(i));
                    if (a == block || nu(i) <= 0.0 || nu(i) >= lambda) {
                        const bool upper = x(a) > lambda || (a != block && nu(i) >= lambda);
                        st[static_cast<std::size_t>(i)] = upper ? 1 : 0;
                        nu(i) = upper ? lambda : 0.0;
                    }
                }
            } else {
                for (Index a = 0; a < nf; ++a) nu(free[static_cast<std::size_t>(a)]) = x(a);
            }
        }
        if (!feasible) continue;

        b = s - D.apply_transpose(nu);
        const Vector Db = D.apply(b);
        Index worst = -1;
        double violation = tol;
        for (Index j = 0; j < m; ++j) {
            const auto sj = st[static_cast<std::size_t>(j)];
            const double viol = sj == 0 ? Db(j) : (sj == 1 ? -Db(j) : 0.0);
            if (viol > violation) { violation = viol; worst = j; }
        }
        if (worst < 0) {
            ws.last_iterations = change + 1;
            return true;
        }
        st[static_cast<std::size_t>(worst)] = 2;
    }
    ws.nu.resize(0);
    ws.status.clear();
    return false;
}

} // namespace detail

/**
 * Minimizer of (1/2)||s - b||^2 + lambda * |D b|^+ for D = D^(order). The
 * default route is an exact active-set solve of the dual; with
 * settings.exact off, or if that runs out of budget, it falls back to
 * ADMM on the split z = D b. The z-step is the prox of (lambda / sigma) *
 * max(., 0) and the b-step a banded solve with I + sigma D^T D.
 */
inline Vector prox_one_sided_difference(const Eigen::Ref<const Vector>& s, double lambda, int order,
                                        const ProxSettings& settings,
                                        OneSidedProxWorkspace* workspace = nullptr)
{
    settings.validate();
    if (!(lambda >= 0.0)) {
        throw ConfigError("prox penalty must be >= 0");
    }
    const Index T = s.size();
    const DifferenceOperator D = make_diff_operator(order, T);
    if (lambda == 0.0) return s;
    Vector Ds = D.apply(s);
    if (Ds.maxCoeff() <= 0.0) return s;

    OneSidedProxWorkspace local;
    OneSidedProxWorkspace& ws = workspace ? *workspace : local;
    Vector b(T);
    if (settings.exact && detail::one_sided_dual_active_set(s, lambda, D, Ds, ws, b)) return b;
    const double sigma = settings.inner_step;
    ws.prepare(D, sigma);
    if (!ws.warm || ws.z.size() != D.rows()) {
        ws.z = Ds.cwiseMin(0.0);
        ws.w = Vector::Zero(D.rows());
    }

    const double kappa = lambda / sigma;
    const double tol = settings.inner_tol * std::max(1.0, s.cwiseAbs().maxCoeff());
    Vector z_prev(D.rows());
    double primal = 0.0;
    double dual = 0.0;
    for (int it = 1; it <= settings.inner_max_iter; ++it) {
        b = s + sigma * D.apply_transpose(ws.z - ws.w);
        ws.factor.solve_in_place(b);
        const Vector Db = D.apply(b);
        z_prev = ws.z;
        for (Index j = 0; j < Db.size(); ++j) {
            const double v = Db(j) + ws.w(j);
            ws.z(j) = v > kappa ? v - kappa : (v >= 0.0 ? 0.0 : v);
        }
        ws.w += Db - ws.z;
        primal = (Db - ws.z).cwiseAbs().maxCoeff();
        dual = sigma * D.apply_transpose(ws.z - z_prev).cwiseAbs().maxCoeff();
        if (primal <= tol && dual <= tol) {
            ws.warm = true;
            ws.last_iterations = it;
            return b;
        }
    }
    ws.warm = false;
    throw ConvergenceError("difference-penalty prox did not converge in " +
                               std::to_string(settings.inner_max_iter) + " iterations",
                           std::vector<double>(b.data(), b.data() + b.size()), primal, dual);
}

/// Prox of lambda * concave_penalty (requires T >= 3).
inline Vector prox_concave(const Eigen::Ref<const Vector>& s, double lambda,
                           const ProxSettings& settings = {},
                           OneSidedProxWorkspace* workspace = nullptr)
{
    if (s.size() < 3) {
        throw DimensionError("concave prox needs at least 3 points, got " + std::to_string(s.size()));
    }
    return prox_one_sided_difference(s, lambda, 2, settings, workspace);
}

} // namespace qdlag
