#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "mcis/density.hpp"
#include "mcis/errors.hpp"
#include "test_util.hpp"

using namespace mcis;

TEST(TLogDensity, PeakValueMatchesClosedForm) {
    // Gamma(3) = 2, Gamma(5/2) = (3/4) sqrt(pi)
    const double expected = std::log(2.0 / (0.75 * std::sqrt(std::numbers::pi) * std::sqrt(5.0 * std::numbers::pi)));
    EXPECT_NEAR(t_log_density(5.0, 0.0, 0.0), expected, 1e-14);
    EXPECT_NEAR(t_log_density(5.0, 0.0, 0.0), -0.9686196, 1e-7);
}

TEST(TLogDensity, TranslationInvariance) {
    EXPECT_DOUBLE_EQ(t_log_density(5.0, 1.0, 1.0), t_log_density(5.0, 0.0, 0.0));
    EXPECT_DOUBLE_EQ(t_log_density(5.0, 1.0, 3.5), t_log_density(5.0, 0.0, 2.5));
}

TEST(TLogDensity, SymmetricAboutCenter) {
    for (double x : {0.1, 1.0, 2.7, 40.0}) EXPECT_EQ(t_log_density(5.0, 0.0, x), t_log_density(5.0, 0.0, -x));
}

TEST(TLogDensity, RejectsNonPositiveDf) {
    EXPECT_THROW(t_log_density(0.0, 0.0, 0.0), InvalidParameter);
    EXPECT_THROW(t_log_density(-1.0, 0.0, 0.0), InvalidParameter);
    EXPECT_THROW(t_density(0.0, 0.0), InvalidParameter);
}

TEST(TLogDensity, IntegratesToOne) {
    for (double mu : {0.0, 1.0}) {
        const double z = test::integrate_real_line([&](double x) { return std::exp(t_log_density(5.0, mu, x)); }, mu, 2.0);
        EXPECT_NEAR(z, 1.0, 1e-6);
    }
}

TEST(TDensity, AgreesWithFreeFunction) {
    const auto d = t_density(5.0, 0.25, "t");
    for (double x : {-3.0, 0.0, 0.25, 8.0}) EXPECT_NEAR(d(x), t_log_density(5.0, 0.25, x), 1e-15);
}

TEST(DiscreteTable, Examples) {
    const auto a = discrete_table_density({1, 1});
    EXPECT_EQ(a(0), 0.0);
    EXPECT_EQ(a(1), 0.0);
    const auto b = discrete_table_density({3, 1});
    EXPECT_DOUBLE_EQ(b(0), std::log(3.0));
    EXPECT_EQ(b(1), 0.0);
    EXPECT_DOUBLE_EQ(discrete_table_density({2, 4, 2})(1), std::log(4.0));
}

TEST(DiscreteTable, OutOfRangeIsZeroMass) {
    const auto a = discrete_table_density({1, 2, 3});
    EXPECT_EQ(a(-1), neg_inf);
    EXPECT_EQ(a(3), neg_inf);
}

TEST(DiscreteTable, RejectsBadTables) {
    EXPECT_THROW(discrete_table_density({1.0, 0.0}), InvalidParameter);
    EXPECT_THROW(discrete_table_density({1.0, -2.0}), InvalidParameter);
    EXPECT_THROW(discrete_table_density({1.0}), InvalidParameter);
}

TEST(UnnormalizedDensity, ScalingShiftsLogByConstant) {
    const auto t = t_density(5.0, 0.0);
    const double c = 3.7;
    const auto s = t.scaled(std::log(c));
    for (double x : {-2.0, 0.0, 5.0}) EXPECT_NEAR(s(x) - t(x), std::log(c), 1e-14);

    const std::vector<double> tab{1, 2, 5};
    std::vector<double> scaled_tab;
    for (double v : tab) scaled_tab.push_back(c * v);
    const auto d1 = discrete_table_density(tab), d2 = discrete_table_density(scaled_tab);
    for (int x = 0; x < 3; ++x) EXPECT_NEAR(d2(x) - d1(x), std::log(c), 1e-14);
}

TEST(UnnormalizedDensity, DeterministicEvaluation) {
    const auto t = t_density(5.0, 0.3);
    EXPECT_EQ(t(1.2345), t(1.2345));
}

TEST(LogSumExp, StableAndHandlesNegInf) {
    const std::vector<double> xs{1000.0, 1000.0};
    EXPECT_NEAR(log_sum_exp(xs), 1000.0 + std::log(2.0), 1e-12);
    const std::vector<double> ys{neg_inf, 0.0};
    EXPECT_EQ(log_sum_exp(ys), 0.0);
    const std::vector<double> zs{neg_inf, neg_inf};
    EXPECT_EQ(log_sum_exp(zs), neg_inf);
}

TEST(TargetFamily, RequiresAlignedNonEmpty) {
    EXPECT_THROW(TargetFamily<double>({}, {}), InvalidParameter);
    EXPECT_THROW(TargetFamily<double>({t_density(5, 0)}, {}), InvalidParameter);
    TargetFamily<double> fam({t_density(5, 0)}, {{{"mu", 0.0}}});
    EXPECT_EQ(fam.size(), 1u);
}

TEST(Integrand, BuiltIns) {
    EXPECT_EQ(identity_integrand<double>()(2.5), 2.5);
    EXPECT_EQ(identity_integrand<int>()(3), 3.0);
    EXPECT_EQ(constant_integrand<double>(4.0)(-1.0), 4.0);
}
