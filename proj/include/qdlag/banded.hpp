#pragma once

#include <cmath>
#include <vector>

#include "core.hpp"

namespace qdlag {

/**
 * Cholesky factor of a symmetric positive definite banded matrix.
 *
 * Only the lower band is stored: band_(i, j) holds L(i, i - j) for
 * j = 0..bandwidth. Factorization is O(m * bw^2), each solve O(m * bw).
 */
class BandedCholesky
{
public:
    BandedCholesky() = default;

    /// `lower(i, j)` must return A(i, i - j) for j = 0..bandwidth.
    template <class LowerBand>
    BandedCholesky(Index size, int bandwidth, LowerBand&& lower)
        : size_(size), bw_(bandwidth), band_(static_cast<std::size_t>(size * (bandwidth + 1)), 0.0)
    {
        for (Index i = 0; i < size_; ++i) {
            const Index jmin = std::max<Index>(0, i - bw_);
            for (Index j = jmin; j <= i; ++j) {
                double acc = lower(i, static_cast<int>(i - j));
                const Index kmin = std::max<Index>(jmin, j - bw_);
                for (Index k = kmin; k < j; ++k) {
                    acc -= at(i, k) * at(j, k);
                }
                if (j == i) {
                    if (!(acc > 0.0)) {
                        throw Error("banded matrix is not positive definite");
                    }
                    at(i, i) = std::sqrt(acc);
                } else {
                    at(i, j) = acc / at(j, j);
                }
            }
        }
    }

    Index size() const noexcept { return size_; }
    int bandwidth() const noexcept { return bw_; }

    void solve_in_place(Vector& x) const
    {
        for (Index i = 0; i < size_; ++i) {
            double acc = x(i);
            for (Index k = std::max<Index>(0, i - bw_); k < i; ++k) {
                acc -= at(i, k) * x(k);
            }
            x(i) = acc / at(i, i);
        }
        for (Index i = size_ - 1; i >= 0; --i) {
            double acc = x(i);
            for (Index k = i + 1; k <= std::min<Index>(size_ - 1, i + bw_); ++k) {
                acc -= at(k, i) * x(k);
            }
            x(i) = acc / at(i, i);
        }
    }

    Vector solve(Vector x) const
    {
        solve_in_place(x);
        return x;
    }

private:
    double& at(Index i, Index j) { return band_[static_cast<std::size_t>(i * (bw_ + 1) + (i - j))]; }
    double at(Index i, Index j) const
    {
        return band_[static_cast<std::size_t>(i * (bw_ + 1) + (i - j))];
    }

    Index size_ = 0;
    int bw_ = 0;
    std::vector<double> band_;
};

/// Factor I + sigma * D^T D for a difference operator D.
inline BandedCholesky factor_identity_plus_gram(const DifferenceOperator& D, double sigma)
{
    const Index m = D.length();
    const int v = D.order();
    const auto& c = D.stencil();
    const Index rows = D.rows();
    // (D^T D)(i, i - j) = sum over rows r covering both columns of c[i - r] * c[i - j - r].
    auto lower = [&](Index i, int j) {
        double acc = (j == 0) ? 1.0 : 0.0;
        const Index col = i - j;
        const Index rmin = std::max<Index>(0, i - v);
        const Index rmax = std::min<Index>(rows - 1, col);
        for (Index r = rmin; r <= rmax; ++r) {
            acc += sigma * c[static_cast<std::size_t>(i - r)] * c[static_cast<std::size_t>(col - r)];
        }
        return acc;
    };
    return BandedCholesky(m, v, lower);
}

} // namespace qdlag
