#pragma once

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace qdlag {

// Base class for every error thrown by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// Incompatible shapes or sizes.
class DimensionError : public Error
{
public:
    using Error::Error;
};

// Invalid tuning parameter, configuration value or enum.
class ConfigError : public Error
{
public:
    using Error::Error;
};

// Rank-deficient covariate design. Carries the 0-based indices of the
// columns that are linear combinations of the others.
class SingularityError : public Error
{
public:
    SingularityError(const std::string& what, std::vector<int> columns)
        : Error(what), columns_(std::move(columns))
    {}

    const std::vector<int>& columns() const noexcept { return columns_; }

private:
    std::vector<int> columns_;
};

// An iterative sub-solver ran out of iterations.
class ConvergenceError : public Error
{
public:
    ConvergenceError(const std::string& what,
                     std::vector<double> last_iterate = {},
                     double primal_residual = std::numeric_limits<double>::quiet_NaN(),
                     double dual_residual = std::numeric_limits<double>::quiet_NaN())
        : Error(what),
          last_iterate_(std::move(last_iterate)),
          primal_residual_(primal_residual),
          dual_residual_(dual_residual)
    {}

    const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }
    double primal_residual() const noexcept { return primal_residual_; }
    double dual_residual() const noexcept { return dual_residual_; }

private:
    std::vector<double> last_iterate_;
    double primal_residual_;
    double dual_residual_;
};

} // namespace qdlag
