#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "qdlag/prox.hpp"

using namespace qdlag;

namespace {

Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

Vector random_vector(std::mt19937_64& rng, Index m, double scale = 2.0)
{
    std::normal_distribution<double> N(0.0, scale);
    Vector x(m);
    for (auto& e : x) e = N(rng);
    return x;
}

// Rows selecting the unimodal violations about a 1-based mode.
Matrix unimodal_rows(int T, int mode)
{
    Matrix A = Matrix::Zero(std::max(0, mode - 1) + std::max(0, T - mode - 1), T);
    int r = 0;
    for (int i = 0; i + 1 < mode; ++i, ++r) { A(r, i) = 1; A(r, i + 1) = -1; }
    for (int i = mode; i + 1 < T; ++i, ++r) { A(r, i) = -1; A(r, i + 1) = 1; }
    return A;
}

const double kLambdas[] = {0.0, 0.1, 1.0, 10.0};

} // namespace

TEST(ProxCheck, Branches)
{
    EXPECT_DOUBLE_EQ(prox_check(2.0, QuantileLevel(0.5), 1.0), 1.5);
    EXPECT_DOUBLE_EQ(prox_check(0.3, QuantileLevel(0.5), 1.0), 0.0);
    EXPECT_DOUBLE_EQ(prox_check(-2.0, QuantileLevel(0.25), 1.0), -1.25);
}

TEST(ProxCheck, MonotoneAndOneLipschitz)
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(-3, 3);
    for (double tau : {0.1, 0.5, 0.9}) {
        for (double alpha : {0.5, 1.0, 40.0}) {
            std::vector<double> xs(500);
            for (auto& x : xs) x = U(rng);
            std::sort(xs.begin(), xs.end());
            for (std::size_t i = 1; i < xs.size(); ++i) {
                const double a = prox_check(xs[i - 1], QuantileLevel(tau), alpha);
                const double b = prox_check(xs[i], QuantileLevel(tau), alpha);
                EXPECT_LE(a, b);
                EXPECT_LE(b - a, xs[i] - xs[i - 1] + 1e-15);
            }
        }
    }
}

TEST(ProxCheck, MinimizesScaledCheckLoss)
{
    const QuantileLevel tau(0.3);
    for (double xi : {-2.0, -0.4, 0.1, 0.25, 3.0}) {
        const double alpha = 2.0;
        auto f = [&](const oracle::Vector& r) {
            return check_loss(r(0), tau) / alpha + 0.5 * (r(0) - xi) * (r(0) - xi);
        };
        const auto grid = oracle::grid_minimize(f, 1, -4, 4, 80001);
        EXPECT_NEAR(prox_check(xi, tau, alpha), grid(0), 2e-4);
    }
}

TEST(SoftThreshold, MatchesGridOracle)
{
    for (double x : {-3.0, -0.2, 0.0, 0.7, 2.5}) {
        const double t = 0.5;
        auto f = [&](const oracle::Vector& b) { return 0.5 * (b(0) - x) * (b(0) - x) + t * std::abs(b(0)); };
        EXPECT_NEAR(soft_threshold(x, t), oracle::grid_minimize(f, 1, -4, 4, 80001)(0), 2e-4);
    }
}

TEST(NearlyIsotonic, TwoPointExamples)
{
    const Vector a = nearly_isotonic(vec({2, 1}), 0.25);
    EXPECT_NEAR(a(0), 1.75, 1e-12);
    EXPECT_NEAR(a(1), 1.25, 1e-12);
    const Vector b = nearly_isotonic(vec({2, 1}), 1.0);
    EXPECT_NEAR(b(0), 1.5, 1e-12);
    EXPECT_NEAR(b(1), 1.5, 1e-12);

    const Matrix A = make_diff_operator(1, 2).dense();
    for (double lambda : {0.25, 1.0}) {
        auto f = [&](const oracle::Vector& x) { return oracle::one_sided_prox_value(vec({2, 1}), A, lambda, x); };
        const auto grid = oracle::grid_minimize(f, 2, 0.5, 2.5, 401);
        const Vector fit = nearly_isotonic(vec({2, 1}), lambda);
        EXPECT_NEAR((grid - fit).cwiseAbs().maxCoeff(), 0.0, 5e-3);
    }
}

TEST(NearlyIsotonic, NondecreasingInputIsFixed)
{
    const Vector y = vec({-1, 0, 0, 2.5, 7});
    for (double lambda : kLambdas) EXPECT_TRUE(nearly_isotonic(y, lambda).isApprox(y, 1e-14));
    EXPECT_EQ(nearly_isotonic(vec({4.0}), 100.0), vec({4.0}));
    EXPECT_THROW(nearly_isotonic(y, -1.0), ConfigError);
}

TEST(NearlyIsotonic, MatchesEnumerationOracle)
{
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        const int m = 1 + rep % 8;
        const double lambda = kLambdas[rep % 4];
        const Vector y = random_vector(rng, m);
        const Direction dir = (rep / 4) % 2 ? Direction::Decreasing : Direction::Increasing;
        Matrix A = oracle::dense_difference(1, m).eval();
        if (m == 1) A = Matrix::Zero(0, 1);
        if (dir == Direction::Decreasing) A = -A;
        const Vector expected = oracle::one_sided_prox_enumerate(y, A, lambda);
        worst = std::max(worst, (nearly_isotonic(y, lambda, dir) - expected).cwiseAbs().maxCoeff());
    }
    EXPECT_LE(worst, 1e-4);
    EXPECT_LE(worst, 1e-10);
}

TEST(NearlyIsotonic, AgreesWithDifferenceAdmmRoute)
{
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 50; ++rep) {
        const int m = 2 + rep % 30;
        const Vector y = random_vector(rng, m);
        const double lambda = kLambdas[1 + rep % 3];
        const Vector exact = nearly_isotonic(y, lambda);
        const Vector admm = prox_one_sided_difference(y, lambda, 1, ProxSettings{});
        EXPECT_LE((exact - admm).cwiseAbs().maxCoeff(), 1e-6) << "rep " << rep;
    }
}

TEST(NearlyIsotonic, LargePenaltyIsIsotonicRegression)
{
    std::mt19937_64 rng(99);
    for (int rep = 0; rep < 100; ++rep) {
        const int m = 1 + rep % 12;
        const Vector y = random_vector(rng, m, 3.0);
        const double lambda = (y.maxCoeff() - y.minCoeff()) * m;
        const Vector expected = oracle::isotonic_maxmin(y);
        EXPECT_LE((nearly_isotonic(y, lambda) - expected).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_LE((pava(y) - expected).cwiseAbs().maxCoeff(), 1e-10);
        // The exact solver reaches the same limit without the PAVA shortcut.
        EXPECT_LE((detail::nearly_isotonic_increasing(y, lambda * 2 + 1) - expected).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(ProxUnimodal, Examples)
{
    EXPECT_EQ(prox_unimodal(vec({1, 3, 2}), 2, 0.0), vec({1, 3, 2}));
    EXPECT_EQ(prox_unimodal(vec({3, 1}), 1, 1e6), vec({3, 1}));
    const Vector out = prox_unimodal(vec({2, 1, 5, 1}), 2, 10.0);
    EXPECT_LE((out - vec({1.5, 1.5, 5, 1})).cwiseAbs().maxCoeff(), 1e-12);
    const Matrix A = unimodal_rows(4, 2);
    auto f = [&](const oracle::Vector& b) { return oracle::one_sided_prox_value(vec({2, 1, 5, 1}), A, 10.0, b); };
    const auto grid = oracle::grid_minimize(f, 4, 0.5, 5.5, 41);
    EXPECT_LE((grid - out).cwiseAbs().maxCoeff(), 0.13);
    EXPECT_THROW(prox_unimodal(vec({1, 2, 3}), 0, 1.0), DimensionError);
    EXPECT_THROW(prox_unimodal(vec({1, 2, 3}), 4, 1.0), DimensionError);
}

TEST(ProxUnimodal, MatchesEnumerationOracle)
{
    std::mt19937_64 rng(77);
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        const int T = 1 + rep % 8;
        const int mode = 1 + static_cast<int>(rng() % T);
        const double lambda = kLambdas[rep % 4];
        const Vector s = random_vector(rng, T);
        const Vector expected = oracle::one_sided_prox_enumerate(s, unimodal_rows(T, mode), lambda);
        worst = std::max(worst, (prox_unimodal(s, mode, lambda) - expected).cwiseAbs().maxCoeff());
    }
    EXPECT_LE(worst, 1e-4);
}

TEST(ProxUnimodal, NoRandomPerturbationDoesBetter)
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> N;
    for (int rep = 0; rep < 20; ++rep) {
        const int T = 2 + rep % 5;
        const int mode = 1 + static_cast<int>(rng() % T);
        const double lambda = kLambdas[1 + rep % 3];
        const Vector s = random_vector(rng, T);
        const Matrix A = unimodal_rows(T, mode);
        const Vector b = prox_unimodal(s, mode, lambda);
        const double best = oracle::one_sided_prox_value(s, A, lambda, b);
        for (int trial = 0; trial < 10000; ++trial) {
            const double scale = trial % 2 ? 0.01 : 0.5;
            Vector cand = b;
            for (auto& e : cand) e += scale * N(rng);
            ASSERT_LE(best, oracle::one_sided_prox_value(s, A, lambda, cand) + 1e-12);
        }
    }
}

TEST(ProxConcave, Examples)
{
    const Vector s = vec({0.3, -1.2, 0.8, 2.0});
    EXPECT_EQ(prox_concave(s, 0.0), s);
    const Vector tent = vec({0, 1, 1.5, 1.2, 0});
    EXPECT_EQ(prox_concave(tent, 5.0), tent);

    const Vector out = prox_concave(vec({1, 0, 1}), 10.0);
    EXPECT_LE((out - Vector::Constant(3, 2.0 / 3.0)).cwiseAbs().maxCoeff(), 1e-6);
    const Matrix A = make_diff_operator(2, 3).dense();
    auto f = [&](const oracle::Vector& b) { return oracle::one_sided_prox_value(vec({1, 0, 1}), A, 10.0, b); };
    const auto grid = oracle::grid_minimize(f, 3, 0.0, 1.0, 121);
    EXPECT_LE((grid - out).cwiseAbs().maxCoeff(), 1e-2);

    EXPECT_THROW(prox_concave(vec({1, 2}), 1.0), DimensionError);
}

TEST(ProxConcave, MatchesEnumerationOracle)
{
    std::mt19937_64 rng(4242);
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        const int T = 3 + rep % 6;
        const double lambda = kLambdas[rep % 4];
        const Vector s = random_vector(rng, T);
        const Vector expected = oracle::one_sided_prox_enumerate(s, oracle::dense_difference(2, T), lambda);
        worst = std::max(worst, (prox_concave(s, lambda) - expected).cwiseAbs().maxCoeff());
    }
    EXPECT_LE(worst, 1e-4);
}

TEST(ProxConcave, SubgradientOptimality)
{
    // 0 in b - s + lambda * D^T nu with nu_j = 1 on strictly positive second
    // differences, 0 on strictly negative ones and in [0, 1] on active ones.
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 100; ++rep) {
        const int T = 3 + rep % 6;
        const double lambda = kLambdas[1 + rep % 3];
        const Vector s = random_vector(rng, T);
        const Vector b = prox_concave(s, lambda);
        const Matrix D = oracle::dense_difference(2, T);
        const Vector d = D * b;
        const double active_tol = 1e-6;
        std::vector<int> active;
        Vector r = s - b;
        for (int j = 0; j < T - 2; ++j) {
            if (d(j) > active_tol) r -= lambda * D.row(j).transpose();
            else if (std::abs(d(j)) <= active_tol) active.push_back(j);
        }
        Vector nu = Vector::Zero(static_cast<Index>(active.size()));
        if (!active.empty()) {
            Matrix Da(static_cast<Index>(active.size()), T);
            for (std::size_t a = 0; a < active.size(); ++a) Da.row(static_cast<Index>(a)) = D.row(active[a]);
            nu = Da.transpose().colPivHouseholderQr().solve(r) / lambda;
            r -= lambda * Da.transpose() * nu;
        }
        EXPECT_LE(r.cwiseAbs().maxCoeff(), 1e-4) << "rep " << rep;
        for (Index a = 0; a < nu.size(); ++a) {
            EXPECT_GE(nu(a), -1e-4);
            EXPECT_LE(nu(a), 1 + 1e-4);
        }
    }
}

TEST(ProxConcave, ReportsNonConvergence)
{
    ProxSettings tight;
    tight.exact = false;
    tight.inner_max_iter = 1;
    try {
        prox_concave(vec({1, 0, 1, -1, 3}), 10.0, tight);
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_EQ(e.last_iterate().size(), 5u);
        EXPECT_GT(std::max(e.primal_residual(), e.dual_residual()), 0.0);
    }
}

TEST(ProxOneSided, ActiveSetAgreesWithAdmm)
{
    std::mt19937_64 rng(77);
    ProxSettings admm;
    admm.exact = false;
    admm.inner_tol = 1e-12;
    admm.inner_max_iter = 1000000;
    for (int rep = 0; rep < 60; ++rep) {
        const int order = 1 + rep % 3;
        const int T = order + 1 + rep % 40;
        const double lambda = kLambdas[rep % 4];
        const Vector s = random_vector(rng, T, 2.0);
        const Vector exact = prox_one_sided_difference(s, lambda, order, ProxSettings{});
        const Vector ref = prox_one_sided_difference(s, lambda, order, admm);
        EXPECT_LE((exact - ref).cwiseAbs().maxCoeff(), 1e-7) << "rep " << rep;
        if (order == 1) EXPECT_LE((exact - nearly_isotonic(s, lambda)).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(ProxConcave, WarmStartGivesSameAnswer)
{
    std::mt19937_64 rng(13);
    OneSidedProxWorkspace ws;
    for (int rep = 0; rep < 30; ++rep) {
        const Vector s = random_vector(rng, 30);
        const Vector cold = prox_concave(s, 0.5);
        const Vector warm = prox_concave(s, 0.5, ProxSettings{}, &ws);
        EXPECT_LE((cold - warm).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Proxes, NonExpansive)
{
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 200; ++rep) {
        const int T = 3 + rep % 6;
        const double lambda = kLambdas[rep % 4];
        const Vector a = random_vector(rng, T), b = random_vector(rng, T);
        const double gap = (a - b).norm() + 1e-7;
        EXPECT_LE((nearly_isotonic(a, lambda) - nearly_isotonic(b, lambda)).norm(), gap);
        const int mode = 1 + rep % T;
        EXPECT_LE((prox_unimodal(a, mode, lambda) - prox_unimodal(b, mode, lambda)).norm(), gap);
        EXPECT_LE((prox_concave(a, lambda) - prox_concave(b, lambda)).norm(), gap);
    }
}

TEST(BandedCholesky, SolvesIdentityPlusGram)
{
    std::mt19937_64 rng(1);
    for (int order : {1, 2, 3}) {
        for (double sigma : {0.1, 1.0, 25.0}) {
            const int T = 12;
            const auto D = make_diff_operator(order, T);
            const Matrix A = Matrix::Identity(T, T) + sigma * D.dense().transpose() * D.dense();
            const Vector rhs = random_vector(rng, T);
            const Vector x = factor_identity_plus_gram(D, sigma).solve(rhs);
            EXPECT_LE((A * x - rhs).cwiseAbs().maxCoeff(), 1e-10);
        }
    }
}
