#include <gtest/gtest.h>

#include <random>

#include <qdlag/bootstrap.hpp>

using namespace qdlag;

namespace {

RegressionData make_data(std::mt19937_64& rng, Index n, Index K, Index T, double noise)
{
    std::normal_distribution<double> N;
    Matrix X(n, K * T), Z = Matrix::Ones(n, 1);
    for (Index i = 0; i < X.size(); ++i) X.data()[i] = N(rng);
    Matrix beta(K, T);
    for (Index k = 0; k < K; ++k)
        for (Index t = 0; t < T; ++t) beta(k, t) = 1.0 - 4.0 * std::pow((t + 0.5) / T - 0.5, 2);
    Vector y = X * flatten(beta) + Vector::Constant(n, 0.3);
    for (Index i = 0; i < n; ++i) y(i) += noise * N(rng);
    return RegressionData(X, K, T, Z, y);
}

SelectionResult tuned(const RegressionData& data, QuantileLevel tau, Estimator est, Tuning t,
                      const FitOptions& opts = {})
{
    SelectionResult sel;
    sel.estimator = est;
    sel.best = t;
    sel.refit = fit_estimator(data, tau, est, t, opts);
    return sel;
}

BootstrapDistribution fake_distribution(const std::vector<double>& values)
{
    BootstrapDistribution d;
    for (double v : values) d.beta_reps.push_back(Matrix::Constant(1, 1, v));
    d.gamma_reps = Matrix::Zero(static_cast<Index>(values.size()), 0);
    return d;
}

} // namespace

TEST(DrawWeights, TwoPointValues)
{
    Rng rng(1);
    const Vector half = draw_weights(1000, QuantileLevel(0.5), rng);
    for (Index i = 0; i < half.size(); ++i) EXPECT_TRUE(half(i) == 1.0 || half(i) == -1.0);
    const Vector quarter = draw_weights(1000, QuantileLevel(0.25), rng);
    for (Index i = 0; i < quarter.size(); ++i) EXPECT_TRUE(quarter(i) == 1.5 || quarter(i) == -0.5);
}

TEST(DrawWeights, FrequenciesAndMean)
{
    for (double t : {0.1, 0.25, 0.5, 0.9}) {
        Rng rng(static_cast<std::uint64_t>(t * 1000));
        const Vector w = draw_weights(100000, QuantileLevel(t), rng);
        const double freq = static_cast<double>((w.array() == 2.0 * (1.0 - t)).count()) / 1e5;
        EXPECT_NEAR(freq, 1.0 - t, 0.01) << t;
    }
    const double t = 0.3;
    Rng rng(99);
    const Vector w = draw_weights(1000000, QuantileLevel(t), rng);
    const double mean = 2.0 * (1.0 - t) * (1.0 - t) - 2.0 * t * t;
    const double sd = std::sqrt(t * (1.0 - t)) * 2.0;  // two points 2 apart
    EXPECT_NEAR(w.mean(), mean, 3.0 * sd / 1000.0);
}

TEST(DrawWeights, ReplicateStreamsIndependent)
{
    Rng a = make_rng(5, Stream::Bootstrap, 0);
    Rng b = make_rng(5, Stream::Bootstrap, 1);
    const Vector wa = draw_weights(20000, QuantileLevel(0.5), a);
    const Vector wb = draw_weights(20000, QuantileLevel(0.5), b);
    // matching signs occur half the time for independent streams
    const double agree = static_cast<double>((wa.array() == wb.array()).count()) / 20000.0;
    EXPECT_NEAR(agree, 0.5, 0.02);
    const double corr = (wa.array() * wb.array()).mean();
    EXPECT_NEAR(corr, 0.0, 0.03);
}

TEST(EmpiricalQuantile, MatchesLinearInterpolation)
{
    const std::vector<double> x{3.1, -2.0, 7.5, 0.25, 4.0, 1.5, -0.75};
    // numpy.quantile with the default linear method
    const std::vector<std::pair<double, double>> expected{
        {0.0, -2.0}, {0.025, -1.8125}, {0.1, -1.25}, {0.5, 1.5}, {0.9, 5.4}, {0.975, 6.975}, {1.0, 7.5}};
    for (const auto& [p, q] : expected) EXPECT_NEAR(empirical_quantile(x, p), q, 1e-12) << p;
    EXPECT_THROW(empirical_quantile({}, 0.5), DimensionError);
}

TEST(Intervals, OneToHundred)
{
    std::vector<double> v;
    for (int i = 1; i <= 100; ++i) v.push_back(i);
    const ConfidenceBand band = intervals(fake_distribution(v), 0.9);
    EXPECT_NEAR(band.lower(0, 0), 5.95, 1e-12);
    EXPECT_NEAR(band.upper(0, 0), 95.05, 1e-12);
}

TEST(Intervals, DegenerateAndExtremes)
{
    const ConfidenceBand same = intervals(fake_distribution({2.0, 2.0, 2.0}), 0.95);
    EXPECT_EQ(same.lower(0, 0), 2.0);
    EXPECT_EQ(same.upper(0, 0), 2.0);
    const ConfidenceBand two = intervals(fake_distribution({3.0, -1.0}), 1.0 - 1e-12);
    EXPECT_NEAR(two.lower(0, 0), -1.0, 1e-9);
    EXPECT_NEAR(two.upper(0, 0), 3.0, 1e-9);
    EXPECT_THROW(intervals(fake_distribution({1.0}), 0.9), ConfigError);
    EXPECT_THROW(intervals(fake_distribution({1.0, 2.0}), 1.0), ConfigError);
}

TEST(Intervals, MonotoneInLevel)
{
    std::mt19937_64 gen(3);
    std::normal_distribution<double> N;
    std::vector<double> v(57);
    for (double& x : v) x = N(gen);
    const auto d = fake_distribution(v);
    double prev_lo = 1e300, prev_hi = -1e300;
    for (double level : {0.1, 0.5, 0.8, 0.9, 0.95, 0.99}) {
        const auto band = intervals(d, level);
        EXPECT_LE(band.lower(0, 0), prev_lo);
        EXPECT_GE(band.upper(0, 0), prev_hi);
        EXPECT_LE(band.lower(0, 0), band.upper(0, 0));
        prev_lo = band.lower(0, 0);
        prev_hi = band.upper(0, 0);
    }
}

TEST(CriticalWindows, ClosedIntervalConvention)
{
    ConfidenceBand band;
    band.lower.resize(1, 4);
    band.upper.resize(1, 4);
    band.lower << 0.5, -1.0, -1.0, -3.0;
    band.upper << 2.0, 1.0, 0.0, -0.2;
    const auto rep = critical_windows(band);
    EXPECT_EQ(rep.excludes_zero(0, 0), 1);
    EXPECT_EQ(rep.intensity(0, 0), 0.5);
    EXPECT_EQ(rep.excludes_zero(0, 1), 0);
    EXPECT_EQ(rep.intensity(0, 1), 0.0);
    EXPECT_EQ(rep.excludes_zero(0, 2), 0);
    EXPECT_EQ(rep.excludes_zero(0, 3), 1);
    EXPECT_EQ(rep.intensity(0, 3), -0.2);
}

TEST(Bootstrap, NoiseFreeReplicatesStayAtBase)
{
    std::mt19937_64 gen(4);
    const auto data = make_data(gen, 80, 1, 5, 0.0);
    AdmmConfig admm;
    admm.eps1 = admm.eps2 = 1e-9;
    admm.max_iter = 400000;
    FitOptions opts;
    opts.descent.admm = admm;
    const auto base = tuned(data, QuantileLevel(0.5), Estimator::Ridge, Tuning{0.0, 0.0}, opts);
    ASSERT_TRUE(base.refit.converged);
    BootstrapConfig cfg;
    cfg.replicates = 4;
    const auto dist = bootstrap(data, QuantileLevel(0.5), base, cfg, opts);
    for (const Matrix& b : dist.beta_reps) EXPECT_LT((b - base.refit.beta).cwiseAbs().maxCoeff(), 1e-4);
    const auto band = intervals(dist, 0.95);
    EXPECT_LT((band.upper - band.lower).maxCoeff(), 1e-4);
}

TEST(Bootstrap, ReproducibleAcrossThreads)
{
    std::mt19937_64 gen(5);
    const auto data = make_data(gen, 60, 2, 5, 0.5);
    const auto base = tuned(data, QuantileLevel(0.5), Estimator::Unimodal, Tuning{0.1, 0.1});
    BootstrapConfig cfg;
    cfg.replicates = 3;
    cfg.seed = 17;
    FitOptions one, many;
    one.threads = 1;
    many.threads = 3;
    const auto a = bootstrap(data, QuantileLevel(0.5), base, cfg, one);
    const auto b = bootstrap(data, QuantileLevel(0.5), base, cfg, many);
    const auto c = bootstrap(data, QuantileLevel(0.5), base, cfg, one);
    ASSERT_EQ(a.replicates(), 3);
    for (int r = 0; r < 3; ++r) {
        EXPECT_EQ(a.beta_reps[static_cast<std::size_t>(r)], b.beta_reps[static_cast<std::size_t>(r)]);
        EXPECT_EQ(a.beta_reps[static_cast<std::size_t>(r)], c.beta_reps[static_cast<std::size_t>(r)]);
    }
    EXPECT_EQ(a.gamma_reps, b.gamma_reps);
    EXPECT_NE(a.beta_reps[0], a.beta_reps[1]);
}

TEST(Bootstrap, BandsScaleWithResponse)
{
    std::mt19937_64 gen(6);
    const auto data = make_data(gen, 70, 1, 6, 0.5);
    const double c = 4.0;
    const auto scaled = data.with_response(c * data.response());
    // equivariance holds for the exact solutions; the solver stops on
    // partly absolute thresholds, so compare tight solves
    FitOptions opts;
    opts.descent.admm.eps1 = opts.descent.admm.eps2 = 1e-10;
    opts.descent.admm.max_iter = 1000000;
    opts.descent.admm.record_trace = false;
    opts.descent.admm.prox.inner_tol = 1e-13;
    const auto base = tuned(data, QuantileLevel(0.3), Estimator::Concave, Tuning{0.2, 0.4}, opts);
    const auto base_c = tuned(scaled, QuantileLevel(0.3), Estimator::Concave, Tuning{0.2, 0.4 / c}, opts);
    BootstrapConfig cfg;
    cfg.replicates = 5;
    const auto band = intervals(bootstrap(data, QuantileLevel(0.3), base, cfg, opts), 0.8);
    const auto band_c = intervals(bootstrap(scaled, QuantileLevel(0.3), base_c, cfg, opts), 0.8);
    EXPECT_LT((band_c.lower - c * band.lower).cwiseAbs().maxCoeff(), 1e-5 * c);
    EXPECT_LT((band_c.upper - c * band.upper).cwiseAbs().maxCoeff(), 1e-5 * c);
    EXPECT_LT((band_c.gamma_upper - c * band.gamma_upper).cwiseAbs().maxCoeff(), 1e-5 * c);
}

TEST(Bootstrap, FailedReplicatesFlagUnreliable)
{
    std::mt19937_64 gen(7);
    const auto data = make_data(gen, 50, 1, 5, 0.5);
    const auto base = tuned(data, QuantileLevel(0.5), Estimator::Concave, Tuning{0.1, 0.5});
    ASSERT_TRUE(base.refit.converged);
    FitOptions starved;
    starved.descent.admm.max_iter = 2;
    BootstrapConfig cfg;
    cfg.replicates = 5;
    const auto dist = bootstrap(data, QuantileLevel(0.5), base, cfg, starved);
    EXPECT_EQ(dist.failed, 5);
    EXPECT_TRUE(dist.unreliable);
    EXPECT_EQ(dist.replicates(), 5);
    const auto ok = bootstrap(data, QuantileLevel(0.5), base, cfg);
    EXPECT_EQ(ok.failed, 0);
    EXPECT_FALSE(ok.unreliable);
}

TEST(Bootstrap, PerReplicateTuning)
{
    std::mt19937_64 gen(8);
    const auto data = make_data(gen, 60, 1, 5, 0.5);
    const auto base = tuned(data, QuantileLevel(0.5), Estimator::Concave, Tuning{0.1, 0.5});
    BootstrapConfig cfg;
    cfg.replicates = 2;
    cfg.reuse_tuning = false;
    cfg.grid = TuningGrid{{0.1, 1.0}, {0.5}};
    cfg.folds = 2;
    const auto dist = bootstrap(data, QuantileLevel(0.5), base, cfg);
    EXPECT_EQ(dist.replicates(), 2);
    EXPECT_EQ(dist.failed, 0);
}

TEST(Bootstrap, RejectsBadInput)
{
    std::mt19937_64 gen(9);
    const auto data = make_data(gen, 40, 1, 4, 0.5);
    auto base = tuned(data, QuantileLevel(0.5), Estimator::Concave, Tuning{0.1, 0.5});
    BootstrapConfig cfg;
    cfg.replicates = 1;
    EXPECT_THROW(bootstrap(data, QuantileLevel(0.5), base, cfg), ConfigError);
    cfg.replicates = 2;
    cfg.level = 1.5;
    EXPECT_THROW(bootstrap(data, QuantileLevel(0.5), base, cfg), ConfigError);
    cfg.level = 0.9;
    base.refit.converged = false;
    EXPECT_THROW(bootstrap(data, QuantileLevel(0.5), base, cfg), ConvergenceError);
}
