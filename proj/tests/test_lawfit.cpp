#include <gtest/gtest.h>

#include <cmath>

#include "layerprobe/lawfit.hpp"
#include "layerprobe/random.hpp"

namespace lp = layerprobe;

namespace {

std::vector<lp::LayerValue> series(const std::vector<double>& pr) {
    std::vector<lp::LayerValue> s;
    for (std::size_t i = 0; i < pr.size(); ++i) s.push_back({static_cast<int>(i + 1), pr[i]});
    return s;
}

lp::ProbeResult probe_result(const std::vector<double>& pr) {
    lp::ProbeResult r;
    for (std::size_t i = 0; i < pr.size(); ++i) r.layers.push_back({static_cast<int>(i + 1), pr[i], 100, 0.0, {}});
    return r;
}

std::vector<double> geometric(double first, double ratio, int layers) {
    std::vector<double> out;
    for (int l = 0; l < layers; ++l) out.push_back(first * std::pow(ratio, l));
    return out;
}

} // namespace

TEST(FitLaw, ExactGeometricSeries) {
    const auto fit = lp::fit_law(series({0.8, 0.4, 0.2, 0.1}));
    EXPECT_NEAR(fit.rho, 0.5, 1e-12);
    EXPECT_NEAR(fit.pearson_r, -1.0, 1e-12);
    EXPECT_NEAR(std::exp(fit.log_intercept), 0.8, 1e-12);
    EXPECT_DOUBLE_EQ(fit.overall_decay, 0.125);
    EXPECT_EQ(fit.first_pr, 0.8);
    EXPECT_EQ(fit.last_pr, 0.1);
    EXPECT_EQ(fit.num_layers, 4);
}

TEST(FitLaw, MatchesDenseLeastSquaresOracle) {
    lp::Rng rng(21);
    std::vector<double> pr;
    for (int l = 0; l < 17; ++l) pr.push_back(0.05 + rng.uniform());
    const auto fit = lp::fit_law(series(pr));

    Eigen::MatrixXd a(17, 2);
    Eigen::VectorXd b(17);
    for (int l = 0; l < 17; ++l) {
        a(l, 0) = 1.0;
        a(l, 1) = l + 1;
        b(l) = std::log(pr[static_cast<std::size_t>(l)]);
    }
    const Eigen::Vector2d beta = a.colPivHouseholderQr().solve(b);
    EXPECT_NEAR(std::log(fit.rho), beta(1), 1e-12);
    EXPECT_NEAR(fit.log_intercept, beta(0) + beta(1), 1e-12);

    const Eigen::VectorXd x = a.col(1).array() - a.col(1).mean();
    const Eigen::VectorXd y = b.array() - b.mean();
    EXPECT_NEAR(fit.pearson_r, x.dot(y) / (x.norm() * y.norm()), 1e-12);
}

TEST(FitLaw, NoisyGeometricSeriesRecoversRatio) {
    lp::Rng rng(2023);
    for (double rho : {0.9, 0.95, 0.993}) {
        auto pr = geometric(0.9, rho, 24);
        for (auto& p : pr) p *= std::exp(0.02 * rng.normal());
        const auto fit = lp::fit_law(series(pr));
        EXPECT_NEAR(fit.rho, rho, 0.01);
        EXPECT_LT(fit.pearson_r, 0.0);
    }
}

TEST(FitLawProperty, ScaleInvariance) {
    lp::Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> pr;
        const int layers = 3 + static_cast<int>(rng.below(40));
        for (int l = 0; l < layers; ++l) pr.push_back(0.01 + rng.uniform());
        const auto base = lp::fit_law(series(pr));
        const double c = std::exp(6.0 * rng.uniform() - 3.0);
        for (auto& p : pr) p *= c;
        const auto scaled = lp::fit_law(series(pr));
        EXPECT_NEAR(scaled.rho, base.rho, 1e-12);
        EXPECT_NEAR(scaled.pearson_r, base.pearson_r, 1e-12);
    }
}

TEST(FitLawProperty, InputOrderDoesNotMatter) {
    auto s = series({0.9, 0.7, 0.72, 0.5, 0.41, 0.4});
    const auto a = lp::fit_law(s);
    std::reverse(s.begin(), s.end());
    std::swap(s[1], s[3]);
    const auto b = lp::fit_law(s);
    EXPECT_EQ(a.rho, b.rho);
    EXPECT_EQ(a.pearson_r, b.pearson_r);
    EXPECT_EQ(a.first_pr, b.first_pr);
}

TEST(FitLawProperty, MonotoneDecreasingSeriesHasNegativeCorrelation) {
    lp::Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> pr{1.0};
        for (int l = 1; l < 10; ++l) pr.push_back(pr.back() * (0.3 + 0.69 * rng.uniform()));
        const auto fit = lp::fit_law(series(pr));
        EXPECT_LT(fit.rho, 1.0);
        EXPECT_LT(fit.pearson_r, 0.0);
        EXPECT_GE(fit.pearson_r, -1.0);
    }
}

TEST(FitLaw, FlatSeriesHasZeroCorrelation) {
    const auto fit = lp::fit_law(series({0.5, 0.5, 0.5}));
    EXPECT_EQ(fit.rho, 1.0);
    EXPECT_EQ(fit.pearson_r, 0.0);
}

TEST(FitLaw, Errors) {
    try {
        (void)lp::fit_law(series({0.5, 0.4}));
        FAIL();
    } catch (const lp::Error& e) {
        EXPECT_EQ(e.code(), "TooFewLayers");
    }
    try {
        (void)lp::fit_law(series({0.5, 0.0, 0.3}));
        FAIL();
    } catch (const lp::Error& e) {
        EXPECT_EQ(e.code(), "NonPositivePR");
        EXPECT_EQ(e.kind(), lp::ErrorKind::Degenerate);
    }
    EXPECT_THROW((void)lp::fit_law(std::vector<lp::LayerValue>{{1, 0.5}, {2, 0.4}, {2, 0.3}}), lp::Error);
}

TEST(SummarizeSeries, OrdersRowsAsGiven) {
    const auto table = lp::summarize_series({{"slow", probe_result(geometric(0.8, 0.95, 12))},
                                             {"fast", probe_result(geometric(0.8, 0.9, 12))}});
    ASSERT_EQ(table.size(), 2u);
    EXPECT_EQ(table[0].name, "slow");
    EXPECT_NEAR(table[0].fit.rho, 0.95, 1e-12);
    EXPECT_NEAR(table[1].fit.rho, 0.9, 1e-12);
    EXPECT_GT(table[0].fit.rho, table[1].fit.rho);
    EXPECT_GT(table[0].fit.overall_decay, table[1].fit.overall_decay);
    EXPECT_EQ(table[0].fit.first_pr, table[1].fit.first_pr);
}

TEST(SummarizeSeries, SingleSeries) {
    EXPECT_EQ(lp::summarize_series({{"only", probe_result(geometric(0.5, 0.9, 5))}}).size(), 1u);
}

TEST(SummarizeSeries, NamesTheFailingSeries) {
    try {
        (void)lp::summarize_series({{"good", probe_result({0.5, 0.4, 0.3})}, {"bad", probe_result({0.5, 0.0, 0.3})}});
        FAIL();
    } catch (const lp::Error& e) {
        EXPECT_EQ(e.code(), "NonPositivePR");
        EXPECT_NE(std::string(e.what()).find("'bad'"), std::string::npos);
    }
}
