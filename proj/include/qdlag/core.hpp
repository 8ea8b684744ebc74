#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace qdlag {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Quantile level tau, strictly inside (0, 1).
class QuantileLevel
{
public:
    explicit QuantileLevel(double tau) : tau_(tau)
    {
        if (!(tau > 0.0 && tau < 1.0)) {
            throw ConfigError("quantile level must lie strictly inside (0, 1), got " +
                              std::to_string(tau));
        }
    }

    double value() const noexcept { return tau_; }

private:
    double tau_;
};

/**
 * Observed triplets (y_i, X_i, Z_i), i = 1..n.
 *
 * The K x T exposure matrices are stored flattened into one n x (K*T)
 * design matrix. Observation i occupies row i and entry (k, t) of X_i sits
 * in column k*T + t, so each exposure's lag curve is a contiguous block.
 * The same row-major layout is used for the flattened coefficient vector.
 */
class RegressionData
{
public:
    RegressionData(Matrix design, Index K, Index T, Matrix covariates, Vector response,
                   Vector time_points = Vector())
        : design_(std::move(design)),
          covariates_(std::move(covariates)),
          response_(std::move(response)),
          time_points_(std::move(time_points)),
          K_(K),
          T_(T)
    {
        validate();
    }

    static RegressionData from_exposures(const std::vector<Matrix>& exposures, Matrix covariates,
                                         Vector response, Vector time_points = Vector())
    {
        if (exposures.empty()) {
            throw DimensionError("at least one observation is required");
        }
        const Index K = exposures.front().rows();
        const Index T = exposures.front().cols();
        const Index n = static_cast<Index>(exposures.size());
        Matrix design(n, K * T);
        for (Index i = 0; i < n; ++i) {
            const Matrix& Xi = exposures[static_cast<std::size_t>(i)];
            if (Xi.rows() != K || Xi.cols() != T) {
                throw DimensionError("exposure matrix " + std::to_string(i + 1) +
                                     " has shape " + std::to_string(Xi.rows()) + "x" +
                                     std::to_string(Xi.cols()) + ", expected " +
                                     std::to_string(K) + "x" + std::to_string(T));
            }
            for (Index k = 0; k < K; ++k) {
                for (Index t = 0; t < T; ++t) {
                    design(i, k * T + t) = Xi(k, t);
                }
            }
        }
        return RegressionData(std::move(design), K, T, std::move(covariates),
                              std::move(response), std::move(time_points));
    }

    Index n() const noexcept { return response_.size(); }
    Index K() const noexcept { return K_; }
    Index T() const noexcept { return T_; }
    Index p() const noexcept { return covariates_.cols(); }

    const Matrix& design() const noexcept { return design_; }
    const Matrix& covariates() const noexcept { return covariates_; }
    const Vector& response() const noexcept { return response_; }
    const Vector& time_points() const noexcept { return time_points_; }

    Matrix exposure(Index i) const
    {
        Matrix Xi(K_, T_);
        for (Index k = 0; k < K_; ++k) {
            Xi.row(k) = design_.row(i).segment(k * T_, T_);
        }
        return Xi;
    }

    RegressionData subset(std::span<const Index> rows) const
    {
        const Index m = static_cast<Index>(rows.size());
        Matrix X(m, design_.cols());
        Matrix Z(m, covariates_.cols());
        Vector y(m);
        for (Index j = 0; j < m; ++j) {
            const Index i = rows[static_cast<std::size_t>(j)];
            X.row(j) = design_.row(i);
            Z.row(j) = covariates_.row(i);
            y(j) = response_(i);
        }
        return RegressionData(std::move(X), K_, T_, std::move(Z), std::move(y), time_points_);
    }

    RegressionData with_response(Vector y) const
    {
        return RegressionData(design_, K_, T_, covariates_, std::move(y), time_points_);
    }

    /// Copy with a leading column of ones prepended to the covariates.
    RegressionData with_intercept() const
    {
        Matrix Z(n(), p() + 1);
        Z.col(0).setOnes();
        Z.rightCols(p()) = covariates_;
        return RegressionData(design_, K_, T_, std::move(Z), response_, time_points_);
    }

private:
    void validate() const
    {
        if (response_.size() < 1) {
            throw DimensionError("at least one observation is required");
        }
        if (K_ < 0 || T_ < 0) {
            throw DimensionError("negative exposure dimensions");
        }
        if (K_ > 0 && T_ < 3) {
            throw DimensionError("at least 3 time points are required, got " + std::to_string(T_));
        }
        if (design_.rows() != n() || design_.cols() != K_ * T_) {
            throw DimensionError("exposure design is " + std::to_string(design_.rows()) + "x" +
                                 std::to_string(design_.cols()) + ", expected " +
                                 std::to_string(n()) + "x" + std::to_string(K_ * T_));
        }
        if (covariates_.rows() != n()) {
            throw DimensionError("covariate row count " + std::to_string(covariates_.rows()) +
                                 " differs from response length " + std::to_string(n()));
        }
        if (time_points_.size() != 0 && time_points_.size() != T_) {
            throw DimensionError("time_points has length " + std::to_string(time_points_.size()) +
                                 ", expected " + std::to_string(T_));
        }
        if (!design_.allFinite() || !covariates_.allFinite() || !response_.allFinite()) {
            throw DimensionError("regression data contains non-finite values");
        }
    }

    Matrix design_;
    Matrix covariates_;
    Vector response_;
    Vector time_points_;
    Index K_;
    Index T_;
};

/// Row-major flattening of a K x T coefficient matrix (matches the design layout).
inline Vector flatten(const Matrix& beta)
{
    Vector out(beta.size());
    const Index T = beta.cols();
    for (Index k = 0; k < beta.rows(); ++k) {
        out.segment(k * T, T) = beta.row(k).transpose();
    }
    return out;
}

inline Matrix unflatten(const Vector& b, Index K, Index T)
{
    Matrix beta(K, T);
    for (Index k = 0; k < K; ++k) {
        beta.row(k) = b.segment(k * T, T).transpose();
    }
    return beta;
}

/// Per-exposure mode indices, stored 1-based (M_k in {1, ..., T}).
class ModeVector
{
public:
    ModeVector() = default;

    ModeVector(std::vector<int> modes, Index T) : modes_(std::move(modes))
    {
        for (std::size_t k = 0; k < modes_.size(); ++k) {
            if (modes_[k] < 1 || modes_[k] > T) {
                throw DimensionError("mode " + std::to_string(modes_[k]) + " for exposure " +
                                     std::to_string(k + 1) + " is outside [1, " +
                                     std::to_string(T) + "]");
            }
        }
    }

    Index size() const noexcept { return static_cast<Index>(modes_.size()); }
    int operator[](Index k) const { return modes_[static_cast<std::size_t>(k)]; }
    const std::vector<int>& values() const noexcept { return modes_; }

    friend bool operator==(const ModeVector&, const ModeVector&) = default;

private:
    std::vector<int> modes_;
};

/**
 * Discrete difference operator D^(v) of size (T - v) x T.
 *
 * Every row is the same stencil shifted by one column, so only the v + 1
 * stencil coefficients are stored and products are applied matrix-free.
 */
class DifferenceOperator
{
public:
    DifferenceOperator(int order, Index length, std::vector<double> stencil)
        : order_(order), length_(length), stencil_(std::move(stencil))
    {}

    int order() const noexcept { return order_; }
    Index length() const noexcept { return length_; }
    Index rows() const noexcept { return length_ - order_; }
    const std::vector<double>& stencil() const noexcept { return stencil_; }

    Vector apply(const Eigen::Ref<const Vector>& x) const
    {
        check_length(x.size());
        Vector out = Vector::Zero(rows());
        for (Index j = 0; j < rows(); ++j) {
            double acc = 0.0;
            for (int i = 0; i <= order_; ++i) {
                acc += stencil_[static_cast<std::size_t>(i)] * x(j + i);
            }
            out(j) = acc;
        }
        return out;
    }

    Vector apply_transpose(const Eigen::Ref<const Vector>& y) const
    {
        if (y.size() != rows()) {
            throw DimensionError("difference operator transpose expects length " +
                                 std::to_string(rows()) + ", got " + std::to_string(y.size()));
        }
        Vector out = Vector::Zero(length_);
        for (Index j = 0; j < rows(); ++j) {
            for (int i = 0; i <= order_; ++i) {
                out(j + i) += stencil_[static_cast<std::size_t>(i)] * y(j);
            }
        }
        return out;
    }

    /// Explicit matrix form (test and debugging use).
    Matrix dense() const
    {
        Matrix D = Matrix::Zero(rows(), length_);
        for (Index j = 0; j < rows(); ++j) {
            for (int i = 0; i <= order_; ++i) {
                D(j, j + i) = stencil_[static_cast<std::size_t>(i)];
            }
        }
        return D;
    }

    void check_length(Index m) const
    {
        if (m != length_) {
            throw DimensionError("difference operator of length " + std::to_string(length_) +
                                 " applied to vector of length " + std::to_string(m));
        }
    }

private:
    int order_;
    Index length_;
    std::vector<double> stencil_;
};

/// D^(1) has rows (..., 1, -1, ...); D^(v+1) = D^(1)_{T-v} D^(v).
inline DifferenceOperator make_diff_operator(int order, Index length)
{
    if (order < 1 || order >= length) {
        throw DimensionError("difference order " + std::to_string(order) +
                             " requires 1 <= order < length " + std::to_string(length));
    }
    std::vector<double> stencil{1.0, -1.0};
    for (int v = 1; v < order; ++v) {
        // Row j of the product is row j minus row j+1 of D^(v).
        std::vector<double> next(stencil.size() + 1, 0.0);
        for (std::size_t i = 0; i < stencil.size(); ++i) {
            next[i] += stencil[i];
            next[i + 1] -= stencil[i];
        }
        stencil = std::move(next);
    }
    return DifferenceOperator(order, length, std::move(stencil));
}

/// rho_tau(a) = a * (tau - 1{a < 0}).
inline double check_loss(double a, QuantileLevel tau)
{
    return a >= 0.0 ? a * tau.value() : a * (tau.value() - 1.0);
}

inline double mean_check_loss(const Vector& residuals, QuantileLevel tau)
{
    double acc = 0.0;
    for (Index i = 0; i < residuals.size(); ++i) {
        acc += check_loss(residuals(i), tau);
    }
    return acc / static_cast<double>(residuals.size());
}

/// Sum of positive parts of D * x.
inline double pos_part(const Eigen::Ref<const Vector>& x, const DifferenceOperator& D)
{
    return D.apply(x).cwiseMax(0.0).sum();
}

/// Sum of positive parts of -D * x.
inline double neg_part(const Eigen::Ref<const Vector>& x, const DifferenceOperator& D)
{
    return (-D.apply(x)).cwiseMax(0.0).sum();
}

namespace detail {

// Sum of max(x_i - x_{i+1}, 0) over [first, last).
inline double decrease_violation(const Eigen::Ref<const Vector>& x, Index first, Index last)
{
    double acc = 0.0;
    for (Index i = first; i + 1 < last; ++i) {
        acc += std::max(x(i) - x(i + 1), 0.0);
    }
    return acc;
}

// Sum of max(x_{i+1} - x_i, 0) over [first, last).
inline double increase_violation(const Eigen::Ref<const Vector>& x, Index first, Index last)
{
    double acc = 0.0;
    for (Index i = first; i + 1 < last; ++i) {
        acc += std::max(x(i + 1) - x(i), 0.0);
    }
    return acc;
}

} // namespace detail

/**
 * Nearly-unimodal penalty about a 1-based mode M:
 * |D^(1) x_{1:M}|^+ + |D^(1) x_{(M+1):T}|^-.
 * Segments of length <= 1 contribute zero.
 */
inline double unimodal_penalty(const Eigen::Ref<const Vector>& x, int mode)
{
    const Index T = x.size();
    if (mode < 1 || mode > T) {
        throw DimensionError("mode " + std::to_string(mode) + " is outside [1, " +
                             std::to_string(T) + "]");
    }
    return detail::decrease_violation(x, 0, mode) + detail::increase_violation(x, mode, T);
}

/// |D^(2) x|^+: zero iff x is discretely concave.
inline double concave_penalty(const Eigen::Ref<const Vector>& x)
{
    const Index T = x.size();
    if (T < 3) {
        throw DimensionError("concave penalty needs at least 3 points, got " + std::to_string(T));
    }
    double acc = 0.0;
    for (Index m = 0; m + 2 < T; ++m) {
        acc += std::max(x(m) - 2.0 * x(m + 1) + x(m + 2), 0.0);
    }
    return acc;
}

/// Sum over exposures of ||D^(2) beta_k||^2.
inline double smoothness_penalty(const Matrix& beta)
{
    double acc = 0.0;
    for (Index k = 0; k < beta.rows(); ++k) {
        for (Index m = 0; m + 2 < beta.cols(); ++m) {
            const double d = beta(k, m) - 2.0 * beta(k, m + 1) + beta(k, m + 2);
            acc += d * d;
        }
    }
    return acc;
}

enum class ShapeKind { NearlyUnimodal, NearlyConcave, None };

inline std::string to_string(ShapeKind shape)
{
    switch (shape) {
    case ShapeKind::NearlyUnimodal: return "nearly-unimodal";
    case ShapeKind::NearlyConcave: return "nearly-concave";
    case ShapeKind::None: return "none";
    }
    return "unknown";
}

/// Tuning pair and shape family of the penalized objective.
class PenaltyConfig
{
public:
    PenaltyConfig(double lambda1, double lambda2, ShapeKind shape)
        : lambda1_(lambda1), lambda2_(lambda2), shape_(shape)
    {
        if (!(lambda1 >= 0.0) || !std::isfinite(lambda1)) {
            throw ConfigError("lambda1 must be finite and >= 0");
        }
        if (!(lambda2 > 0.0) || !std::isfinite(lambda2)) {
            throw ConfigError("lambda2 must be finite and > 0");
        }
        if (shape == ShapeKind::None && lambda1 > 0.0) {
            throw ConfigError("lambda1 > 0 requires a shape penalty");
        }
    }

    double lambda1() const noexcept { return lambda1_; }
    double lambda2() const noexcept { return lambda2_; }
    ShapeKind shape() const noexcept { return shape_; }

private:
    double lambda1_;
    double lambda2_;
    ShapeKind shape_;
};

/// Sum over exposures of the shape penalty (unimodal needs modes).
inline double shape_penalty(const Matrix& beta, ShapeKind shape, const std::optional<ModeVector>& modes)
{
    double acc = 0.0;
    switch (shape) {
    case ShapeKind::None:
        return 0.0;
    case ShapeKind::NearlyUnimodal:
        if (!modes || modes->size() != beta.rows()) {
            throw ConfigError("nearly-unimodal penalty needs one mode per exposure");
        }
        for (Index k = 0; k < beta.rows(); ++k) {
            acc += unimodal_penalty(beta.row(k).transpose(), (*modes)[k]);
        }
        return acc;
    case ShapeKind::NearlyConcave:
        for (Index k = 0; k < beta.rows(); ++k) {
            acc += concave_penalty(beta.row(k).transpose());
        }
        return acc;
    }
    return acc;
}

/// tr(X_i^T beta) + Z_i^T gamma for every observation.
inline Vector linear_predictor(const RegressionData& data, const Matrix& beta, const Vector& gamma)
{
    if (beta.rows() != data.K() || beta.cols() != data.T()) {
        throw DimensionError("coefficient matrix is " + std::to_string(beta.rows()) + "x" +
                             std::to_string(beta.cols()) + ", data has K=" +
                             std::to_string(data.K()) + ", T=" + std::to_string(data.T()));
    }
    if (gamma.size() != data.p()) {
        throw DimensionError("gamma has length " + std::to_string(gamma.size()) + ", expected " +
                             std::to_string(data.p()));
    }
    Vector eta = data.covariates() * gamma;
    if (data.K() > 0) {
        eta.noalias() += data.design() * flatten(beta);
    }
    return eta;
}

inline Vector residuals(const RegressionData& data, const Matrix& beta, const Vector& gamma)
{
    return data.response() - linear_predictor(data, beta, gamma);
}

/**
 * Penalized objective
 * (1/n) sum rho_tau(y_i - tr(X_i^T beta) - Z_i^T gamma)
 *   + lambda1 * sum_k shape penalty + lambda2 * sum_k ||D^(2) beta_k||^2.
 */
inline double objective(const RegressionData& data, const Matrix& beta, const Vector& gamma,
                        const PenaltyConfig& cfg, const std::optional<ModeVector>& modes,
                        QuantileLevel tau)
{
    if (cfg.shape() == ShapeKind::NearlyUnimodal && !modes) {
        throw ConfigError("nearly-unimodal objective requires modes");
    }
    const double loss = mean_check_loss(residuals(data, beta, gamma), tau);
    double value = loss + cfg.lambda2() * smoothness_penalty(beta);
    if (cfg.lambda1() > 0.0) {
        value += cfg.lambda1() * shape_penalty(beta, cfg.shape(), modes);
    }
    return value;
}

} // namespace qdlag
