#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "mcis/gen_is.hpp"
#include "mcis/regen.hpp"
#include "mcis/reverse_logistic.hpp"
#include "mcis/samplers.hpp"

using namespace mcis;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

std::vector<UnnormalizedDensity<double>> toy_refs() { return {t_density(5.0, 1.0, "t5_mu1"), t_density(5.0, 0.0, "t5_mu0")}; }

SampleSet<double> toy_samples(std::size_t n, std::uint64_t seed, Stage stage) {
    auto c1 = sample_t_iid(5.0, 1.0, n, seed, "t5_mu1", true);
    auto c2 = independence_mh(t_density(5.0, 0.0, "t5_mu0"), t_proposal(5.0, 1.0), n, seed + 1, RegenOptions{true});
    return SampleSet<double>({c1, c2}, stage);
}

template <class State>
ChainValues values(const SampleSet<State>& s, const std::function<double(const State&)>& fn) {
    return evaluate_on_chains<State>(s, fn);
}

template <class State>
SampleSet<State> prefixes(const SampleSet<State>& s) {
    std::vector<ChainSample<State>> out;
    for (const auto& c : s.chains) out.push_back(regeneration_prefix(c));
    return SampleSet<State>(out, s.stage);
}

}  // namespace

TEST(SplitTours, MarksEverywhereGiveUnitTours) {
    const Eigen::VectorXd u = vec({0.5, 1.5, 2.0, 4.0});
    const auto t = split_tours(std::vector<bool>(4, true), u);
    ASSERT_EQ(t.count(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(t.T[i], 1u);
        EXPECT_EQ(t.U[i], u(static_cast<Eigen::Index>(i)));
    }
    EXPECT_EQ(t.length(), 3u);
}

TEST(SplitTours, BoundariesAndErrors) {
    const Eigen::VectorXd u = vec({1, 2, 3, 4, 5, 6});
    const Eigen::VectorXd v = vec({1, 1, 1, 1, 1, 1});
    const auto t = split_tours({true, false, false, true, false, true}, u, &v);
    EXPECT_EQ(t.T, (std::vector<std::size_t>{3, 2}));
    EXPECT_EQ(t.U, (std::vector<double>{6, 9}));
    EXPECT_EQ(t.V, (std::vector<double>{3, 2}));
    EXPECT_THROW(split_tours({true, false, false, false, false, false}, u), InsufficientRegeneration);
    EXPECT_THROW(split_tours({false, true, false, true, false, false}, u), InvalidParameter);
    EXPECT_THROW(split_tours({true, true}, u), InvalidParameter);
}

TEST(SplitTours, MixtureTargetGivesUEqualsT) {
    const auto s = toy_samples(3000, 5, Stage::stage2);
    const auto refs = toy_refs();
    const auto ev = evaluate_references(s, refs);
    const Eigen::VectorXd w = vec({0.3, 0.7});
    const auto tv = values<double>(s, [&](const double& x) {
        return std::log(w(0) * std::exp(refs[0](x)) + w(1) * std::exp(refs[1](x)));
    });
    const auto tours = split_tours(regen_marks_of(s), ev, tv, nullptr, w);
    for (const auto& c : tours.chains)
        for (std::size_t t = 0; t < c.count(); ++t) EXPECT_NEAR(c.U[t], static_cast<double>(c.T[t]), 1e-12 * c.T[t]);
    const Eigen::VectorXd d = vec({1.0, 1.3});
    EXPECT_NEAR(rs_estimate_u(tours, w, d), w(0) + w(1) * d(1), 1e-12);
}

TEST(SplitTours, WeightValidation) {
    const auto s = toy_samples(500, 6, Stage::stage2);
    const auto ev = evaluate_references(s, toy_refs());
    const auto tv = values<double>(s, [](const double& x) { return t_log_density(5.0, 0.5, x); });
    EXPECT_NO_THROW(split_tours(regen_marks_of(s), ev, tv, nullptr, vec({1.0, 0.0})));
    EXPECT_THROW(split_tours(regen_marks_of(s), ev, tv, nullptr, vec({1.0, -0.1})), InvalidParameter);
    EXPECT_THROW(split_tours(regen_marks_of(s), ev, tv, nullptr, vec({0.0, 0.0})), InvalidParameter);
}

TEST(SplitTours, ToyTourLengthNearThree) {
    const auto s = toy_samples(100000, 7, Stage::stage2);
    const auto ev = evaluate_references(s, toy_refs());
    const auto tv = values<double>(s, [](const double& x) { return t_log_density(5.0, 0.5, x); });
    const auto tours = split_tours(regen_marks_of(s), ev, tv, nullptr, vec({1.0, 1.0}));
    const auto& c = tours.chains[1];
    const double tbar = static_cast<double>(c.length()) / static_cast<double>(c.count());
    EXPECT_GE(tbar, 2.0);
    EXPECT_LE(tbar, 4.0);
}

TEST(RsEstimates, PrefixIdentityWithGeneralEstimator) {
    const auto s = toy_samples(20000, 8, Stage::stage2);
    const auto refs = toy_refs();
    const auto ev = evaluate_references(s, refs);
    const auto target = t_density(5.0, 0.4);
    const auto tv = values<double>(s, target.log_eval);
    const auto fv = values<double>(s, identity_integrand<double>().eval);
    const Eigen::VectorXd w = vec({0.45, 0.55}), d = vec({1.0, 0.97});
    const auto tours = split_tours(regen_marks_of(s), ev, tv, &fv, w);

    const auto sp = prefixes(s);
    const auto evp = evaluate_references(sp, refs);
    const auto tvp = values<double>(sp, target.log_eval);
    const auto fvp = values<double>(sp, identity_integrand<double>().eval);
    const Eigen::VectorXd a = w.cwiseProduct(d);
    EXPECT_NEAR(rs_estimate_u(tours, w, d), estimate_u(evp, tvp, a, d), 1e-12);
    EXPECT_NEAR(rs_estimate_eta(tours, w, d), estimate_eta(evp, tvp, fvp, a, d), 1e-12);
}

TEST(RsEstimates, SingleChainIsSampleMean) {
    const std::vector<UnnormalizedDensity<double>> refs{t_density(5.0, 0.0, "ref")};
    const SampleSet<double> s({independence_mh(refs[0], t_proposal(5.0, 1.0), 5000, 9, RegenOptions{true})},
                              Stage::stage2);
    const auto ev = evaluate_references(s, refs);
    const auto target = t_density(5.0, 0.3);
    const auto tours = split_tours(regen_marks_of(s), ev, values<double>(s, target.log_eval), nullptr, vec({1.0}));
    const auto sp = prefixes(s);
    double mean = 0.0;
    for (double x : sp.chains[0].states) mean += std::exp(target(x) - refs[0](x));
    mean /= static_cast<double>(sp.chains[0].size());
    EXPECT_NEAR(rs_estimate_u(tours, vec({1.0}), vec({1.0})), mean, 1e-12);
    EXPECT_NEAR(rs_estimate_u(tours, vec({1.0}), vec({1.0})),
                estimate_u(evaluate_references(sp, refs), values<double>(sp, target.log_eval), vec({1.0}), vec({1.0})),
                1e-12);
}

TEST(RsEstimates, ConstantIntegrand) {
    const auto s = toy_samples(4000, 10, Stage::stage2);
    const auto ev = evaluate_references(s, toy_refs());
    const auto tv = values<double>(s, [](const double& x) { return t_log_density(5.0, 0.8, x); });
    const auto fv = values<double>(s, constant_integrand<double>(-3.0).eval);
    const Eigen::VectorXd w = vec({0.5, 0.5}), d = vec({1.0, 1.1});
    const auto tours = split_tours(regen_marks_of(s), ev, tv, &fv, w);
    EXPECT_NEAR(rs_estimate_eta(tours, w, d), -3.0, 1e-13);
    EXPECT_LE(std::abs(rs_variance(tours, true, w, d, Eigen::MatrixXd::Zero(1, 1), 0.0).stage2), 1e-20);
}

TEST(RsEstimates, DiscreteOracleWithinThreeSE) {
    const std::vector<UnnormalizedDensity<int>> refs{discrete_table_density({1, 1}, "flat"),
                                                     discrete_table_density({3, 1}, "skew")};
    auto c1 = discrete_mh(refs[0], 2, 50000, 11, RegenOptions{true});
    auto c2 = discrete_mh(refs[1], 2, 50000, 12, RegenOptions{true});
    c1.density_id = "flat";
    c2.density_id = "skew";
    const SampleSet<int> s({c1, c2}, Stage::stage2);
    const auto ev = evaluate_references(s, refs);
    const auto tv = values<int>(s, discrete_table_density({2, 2}).log_eval);
    const Eigen::VectorXd w = vec({0.5, 0.25}), d = vec({1.0, 2.0});
    const auto tours = split_tours(regen_marks_of(s), ev, tv, nullptr, w);
    const auto var = rs_variance(tours, false, w, d, Eigen::MatrixXd::Zero(1, 1), 0.0);
    EXPECT_LT(std::abs(rs_estimate_u(tours, w, d) - 2.0), 3.0 * var.se());
}

TEST(RsEstimates, ToyEtaWithinThreeSE) {
    const auto refs = toy_refs();
    const auto s1 = toy_samples(100000, 13, Stage::stage1);
    const auto s2 = toy_samples(10000, 14, Stage::stage2);
    const auto ev1 = evaluate_references(s1, refs);
    const auto est = estimate_d(ev1, StageWeights::naive(s1.sizes()));
    const Eigen::MatrixXd W = rs_covariance_d(ev1, est, regen_marks_of(s1));
    const auto ev2 = evaluate_references(s2, refs);
    const auto tv = values<double>(s2, [](const double& x) { return t_log_density(5.0, 0.5, x); });
    const auto fv = values<double>(s2, identity_integrand<double>().eval);
    const Eigen::VectorXd w = vec({1.0, 1.0});
    const auto tours = split_tours(regen_marks_of(s2), ev2, tv, &fv, w);
    const double q = static_cast<double>(tours.total_length()) / static_cast<double>(s1.total());
    const auto var = rs_variance(tours, true, w, est.full_d(), W, q);
    EXPECT_GT(var.stage1, 0.0);
    EXPECT_LT(std::abs(rs_estimate_eta(tours, w, est.full_d()) - 0.5), 3.0 * var.se());
}

TEST(RsVariance, TourPermutationInvariance) {
    const auto s = toy_samples(5000, 15, Stage::stage2);
    const auto ev = evaluate_references(s, toy_refs());
    const auto tv = values<double>(s, [](const double& x) { return t_log_density(5.0, 0.2, x); });
    const auto fv = values<double>(s, identity_integrand<double>().eval);
    const Eigen::VectorXd w = vec({0.6, 0.4}), d = vec({1.0, 1.05});
    Eigen::MatrixXd W(1, 1);
    W << 1.3;
    const auto tours = split_tours(regen_marks_of(s), ev, tv, &fv, w);
    auto shuffled = tours;
    std::mt19937_64 rng(3);
    for (auto& c : shuffled.chains) {
        std::vector<std::size_t> perm(c.count());
        std::iota(perm.begin(), perm.end(), 0u);
        std::shuffle(perm.begin(), perm.end(), rng);
        ChainTours p;
        for (auto i : perm) {
            p.U.push_back(c.U[i]);
            p.V.push_back(c.V[i]);
            p.T.push_back(c.T[i]);
        }
        c = p;
    }
    EXPECT_NEAR(rs_estimate_u(shuffled, w, d), rs_estimate_u(tours, w, d), 1e-12);
    EXPECT_NEAR(rs_estimate_eta(shuffled, w, d), rs_estimate_eta(tours, w, d), 1e-12);
    for (bool eta : {false, true}) {
        const auto a = rs_variance(tours, eta, w, d, W, 0.1), b = rs_variance(shuffled, eta, w, d, W, 0.1);
        EXPECT_NEAR(a.stage1, b.stage1, 1e-12 * a.stage1);
        EXPECT_NEAR(a.stage2, b.stage2, 1e-10 * a.stage2);
    }
}

TEST(RsVariance, IdenticalToursAndZeroQ) {
    TourStatistics tours;
    for (int l = 0; l < 2; ++l) tours.chains.push_back(ChainTours{{2.0, 2.0, 2.0}, {3.0, 3.0, 3.0}, {2, 2, 2}});
    const Eigen::VectorXd w = vec({1.0, 1.0}), d = vec({1.0, 2.0});
    Eigen::MatrixXd W(1, 1);
    W << 4.0;
    for (bool eta : {false, true}) {
        const auto v = rs_variance(tours, eta, w, d, W, 0.0);
        EXPECT_EQ(v.stage2, 0.0);
        EXPECT_EQ(v.stage1, 0.0);
        EXPECT_EQ(v.n, 12u);
    }
    // v / u is the same in every chain, so eta does not move with d
    EXPECT_GT(rs_variance(tours, false, w, d, W, 0.5).stage1, 0.0);
    EXPECT_NEAR(rs_variance(tours, true, w, d, W, 0.5).stage1, 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(rs_estimate_u(tours, w, d), 1.5 * (1.0 + 2.0));
}

TEST(RsVariance, TooFewTours) {
    TourStatistics tours;
    tours.chains.push_back(ChainTours{{1.0}, {1.0}, {1}});
    EXPECT_THROW(rs_variance(tours, false, vec({1.0}), vec({1.0}), Eigen::MatrixXd(), 0.0), InsufficientRegeneration);
    const auto s = SampleSet<double>({sample_t_iid(5.0, 0.0, 10, 1, "a")}, Stage::stage2);
    EXPECT_THROW(regen_marks_of(s), InsufficientRegeneration);
}

TEST(RsChainCov, IidMarksEverywhereIsSampleCovariance) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z;
    Eigen::MatrixXd s(501, 2);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        s(i, 0) = z(rng);
        s(i, 1) = 0.5 * s(i, 0) + z(rng);
    }
    const Eigen::MatrixXd got = rs_chain_cov(s, std::vector<bool>(501, true));
    const Eigen::MatrixXd body = s.topRows(500);
    const Eigen::MatrixXd c = body.rowwise() - body.colwise().mean();
    EXPECT_LT((got - c.transpose() * c / 500.0).norm(), 1e-12);
}

TEST(RsCovarianceD, AgreesWithBatchMeansOnToy) {
    const auto s = toy_samples(100000, 16, Stage::stage1);
    const auto ev = evaluate_references(s, toy_refs());
    const auto est = estimate_d(ev, StageWeights::naive(s.sizes()));
    const Eigen::MatrixXd W = rs_covariance_d(ev, est, regen_marks_of(s));
    EXPECT_NEAR(std::sqrt(W(0, 0) / est.V_hat(0, 0)), 1.0, 0.3);
}

TEST(ToursCsv, Layout) {
    TourStatistics tours;
    tours.chains.push_back(ChainTours{{1.5, 0.25}, {2.0, 1.0}, {2, 1}});
    std::ostringstream os;
    write_tours_csv(os, tours);
    EXPECT_EQ(os.str(), "chain,tour_index,V,U,T\n0,0,1.5,2,2\n0,1,0.25,1,1\n");
}
