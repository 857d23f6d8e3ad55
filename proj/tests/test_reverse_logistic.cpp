#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mcis/linalg.hpp"
#include "mcis/reverse_logistic.hpp"
#include "mcis/samplers.hpp"
#include "test_util.hpp"

using namespace mcis;

namespace {

EvaluatedSamples random_samples(std::size_t k, std::size_t rows, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 2.0);
    EvaluatedSamples ev;
    for (std::size_t l = 0; l < k; ++l) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(rows + l), static_cast<Eigen::Index>(k));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index s = 0; s < m.cols(); ++s) m(i, s) = z(rng);
        ev.log_nu.push_back(m);
    }
    return ev;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

ChainSample<int> fixed_chain(std::string id, std::vector<int> states) {
    return ChainSample<int>{std::move(id), std::move(states), ChainKind::iid, 0, std::nullopt};
}

std::vector<UnnormalizedDensity<int>> oracle_tables() {
    return {discrete_table_density({1, 1}, "flat"), discrete_table_density({3, 1}, "skew")};
}

SampleSet<double> toy_stage1(std::size_t n, std::uint64_t seed) {
    auto c1 = sample_t_iid(5.0, 1.0, n, seed, "t5_mu1");
    auto c2 = independence_mh(t_density(5.0, 0.0, "t5_mu0"), t_proposal(5.0, 1.0), n, seed + 1);
    return SampleSet<double>({c1, c2}, Stage::stage1);
}

std::vector<UnnormalizedDensity<double>> toy_refs() { return {t_density(5.0, 1.0, "t5_mu1"), t_density(5.0, 0.0, "t5_mu0")}; }

SampleSet<int> discrete_mh_stage1(std::size_t n, std::uint64_t seed) {
    const auto refs = oracle_tables();
    auto c1 = discrete_mh(refs[0], 2, n, seed);
    auto c2 = discrete_mh(refs[1], 2, n, seed + 7919);
    c1.density_id = "flat";
    c2.density_id = "skew";
    return SampleSet<int>({c1, c2}, Stage::stage1);
}

}  // namespace

TEST(MembershipProb, Examples) {
    const std::vector<double> eq{0.3, 0.3};
    const Eigen::VectorXd p = membership_prob(std::span<const double>(eq), ZetaVector::zeros(2));
    EXPECT_NEAR(p(0), 0.5, 1e-15);
    EXPECT_NEAR(p(1), 0.5, 1e-15);

    const std::vector<double> r{std::log(4.0), 0.0};
    const Eigen::VectorXd q = membership_prob(std::span<const double>(r), ZetaVector::zeros(2));
    EXPECT_NEAR(q(0), 0.8, 1e-15);
    EXPECT_NEAR(q(1), 0.2, 1e-15);

    const Eigen::VectorXd s = membership_prob(std::span<const double>(r), ZetaVector{vec({-std::log(4.0), 0.0})});
    EXPECT_NEAR(s(0), 0.5, 1e-15);
    EXPECT_NEAR(s(1), 0.5, 1e-15);
}

TEST(MembershipProb, SumsToOneAndRejectsAllZero) {
    const std::vector<double> big{800.0, -800.0, 3.0, neg_inf};
    const Eigen::VectorXd p = membership_prob(std::span<const double>(big), ZetaVector{vec({0.1, -2.0, 5.0, 0.0})});
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_TRUE((p.array() >= 0.0).all() && (p.array() <= 1.0).all());
    const std::vector<double> none{neg_inf, neg_inf};
    EXPECT_THROW(membership_prob(std::span<const double>(none), ZetaVector::zeros(2)), UndefinedPoint);
}

TEST(MembershipProb, FromDensities) {
    const std::vector<UnnormalizedDensity<int>> refs{discrete_table_density({4, 1}, "a"), discrete_table_density({1, 1}, "b")};
    const Eigen::VectorXd p = membership_prob(0, ZetaVector::zeros(2), std::span<const UnnormalizedDensity<int>>(refs));
    EXPECT_NEAR(p(0), 0.8, 1e-15);
}

TEST(EvaluateReferences, AllZeroPointIsUndefined) {
    const std::vector<UnnormalizedDensity<int>> refs{discrete_table_density({1, 1}, "a"), discrete_table_density({1, 1}, "b")};
    const SampleSet<int> s({fixed_chain("a", {0, 5}), fixed_chain("b", {1})}, Stage::stage1);
    EXPECT_THROW(evaluate_references(s, refs), UndefinedPoint);
}

TEST(QuasiLogLikelihood, Examples) {
    EvaluatedSamples ev;
    ev.log_nu = {Eigen::MatrixXd::Constant(1, 2, 0.7), Eigen::MatrixXd::Constant(1, 2, 0.7)};
    const StageWeights w(vec({0.5, 0.5}), ev.sizes());
    EXPECT_NEAR(quasi_log_likelihood(ev, ZetaVector::zeros(2), w), 2.0 * std::log(0.5), 1e-15);
}

TEST(QuasiLogLikelihood, ShiftInvariance) {
    const auto ev = random_samples(3, 20, 1);
    const StageWeights w(vec({0.2, 0.5, 0.3}), ev.sizes());
    const ZetaVector z{vec({0.4, -1.1, 2.0})};
    const double base = quasi_log_likelihood(ev, z, w);
    for (double c : {-3.0, 0.7}) {
        const ZetaVector zc{z.values.array() + c};
        EXPECT_NEAR(quasi_log_likelihood(ev, zc, w), base, 1e-11 * std::abs(base));
    }
}

TEST(QuasiLogLikelihood, WeightScalingIrrelevant) {
    const auto ev = random_samples(3, 15, 2);
    const ZetaVector z{vec({0.1, 0.2, -0.3})};
    const double a = quasi_log_likelihood(ev, z, StageWeights(vec({1.0, 2.0, 3.0}), ev.sizes()));
    const double b = quasi_log_likelihood(ev, z, StageWeights(vec({10.0, 20.0, 30.0}), ev.sizes()));
    EXPECT_NEAR(a, b, 1e-12 * std::abs(a));
}

TEST(QllGradient, ZeroAtSymmetry) {
    EvaluatedSamples ev;
    ev.log_nu = {Eigen::MatrixXd::Zero(5, 2), Eigen::MatrixXd::Zero(5, 2)};
    const Eigen::VectorXd g = qll_gradient(ev, ZetaVector::zeros(2), StageWeights::naive(ev.sizes()));
    EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(QllGradient, MatchesCentralDifferences) {
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        const auto ev = random_samples(3, 25, seed);
        const StageWeights w(vec({0.3, 0.3, 0.4}), ev.sizes());
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> z;
        const ZetaVector zeta{vec({z(rng), z(rng), z(rng)})};
        const Eigen::VectorXd g = qll_gradient(ev, zeta, w);
        EXPECT_NEAR(g.sum(), 0.0, 1e-10 * static_cast<double>(ev.total()));
        const double h = 1e-6;
        for (Eigen::Index r = 0; r < 3; ++r) {
            ZetaVector up = zeta, dn = zeta;
            up.values(r) += h;
            dn.values(r) -= h;
            const double fd = (quasi_log_likelihood(ev, up, w) - quasi_log_likelihood(ev, dn, w)) / (2 * h);
            EXPECT_LE(std::abs(fd - g(r)), 1e-6 * std::max(1.0, std::abs(g(r)))) << "seed " << seed << " r " << r;
        }
    }
}

TEST(MaximizeConstrained, ScoreEquationsHoldAtMaximizer) {
    const auto ev = random_samples(4, 60, 21);
    const StageWeights w(vec({0.1, 0.2, 0.3, 0.4}), ev.sizes());
    const auto res = maximize_constrained(ev, w, ZetaVector::zeros(4));
    EXPECT_NEAR(res.zeta.values.sum(), 0.0, 1e-12);
    const Eigen::VectorXd g = qll_gradient(ev, res.zeta, w);
    EXPECT_LE(g.cwiseAbs().maxCoeff(), 1e-8 * static_cast<double>(ev.total()));
    EXPECT_GE(res.trace.back(), res.trace.front());
}

TEST(MaximizeConstrained, IdenticalDensitiesGiveZero) {
    EvaluatedSamples ev;
    ev.log_nu = {Eigen::MatrixXd::Constant(10, 2, -1.0), Eigen::MatrixXd::Constant(10, 2, 2.0)};
    const auto res = maximize_constrained(ev, StageWeights::naive(ev.sizes()), ZetaVector{vec({1.0, -1.0})});
    EXPECT_LT(res.zeta.values.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MaximizeConstrained, ExhaustiveDiscreteSampleRecoversTruth) {
    // pi_1 = (1/2, 1/2), pi_2 = (3/4, 1/4); m_1 = 2, m_2 = 4
    const SampleSet<int> s({fixed_chain("flat", {0, 1, 0, 1}), fixed_chain("skew", {0, 0, 0, 1})}, Stage::stage1);
    const auto ev = evaluate_references(s, oracle_tables());
    const StageWeights w = StageWeights::naive(ev.sizes());
    const auto res = maximize_constrained(ev, w, ZetaVector::zeros(2));
    EXPECT_NEAR(zeta_to_d(res.zeta, w)(0), 2.0, 1e-8);
}

TEST(MaximizeConstrained, InitShiftInvariance) {
    const auto ev = random_samples(3, 40, 5);
    const StageWeights w(vec({0.5, 0.25, 0.25}), ev.sizes());
    const ZetaVector init{vec({0.3, -0.2, 1.0})};
    const auto a = maximize_constrained(ev, w, init);
    const auto b = maximize_constrained(ev, w, ZetaVector{init.values.array() + 4.2});
    EXPECT_LT((zeta_to_d(a.zeta, w) - zeta_to_d(b.zeta, w)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(MaximizeConstrained, IteratesAreMonotone) {
    const auto ev = random_samples(3, 50, 8);
    const StageWeights w(vec({0.6, 0.3, 0.1}), ev.sizes());
    const auto res = maximize_constrained(ev, w, ZetaVector{vec({5.0, -5.0, 0.0})});
    for (std::size_t i = 1; i < res.trace.size(); ++i) EXPECT_GE(res.trace[i], res.trace[i - 1]);
}

TEST(MaximizeConstrained, NonConvergenceCarriesBestIterate) {
    const auto ev = random_samples(3, 50, 9);
    const StageWeights w(vec({0.6, 0.3, 0.1}), ev.sizes());
    MaximizeOptions opt;
    opt.max_iterations = 0;
    try {
        maximize_constrained(ev, w, ZetaVector{vec({8.0, -8.0, 0.0})}, opt);
        FAIL() << "expected ConvergenceFailure";
    } catch (const ConvergenceFailure& e) {
        EXPECT_EQ(e.best_iterate().size(), 3u);
        EXPECT_GT(e.grad_norm(), 0.0);
    }
}

TEST(ZetaToD, Examples) {
    const std::vector<std::size_t> n{10, 10};
    EXPECT_DOUBLE_EQ(zeta_to_d(ZetaVector::zeros(2), StageWeights(vec({0.5, 0.5}), n))(0), 1.0);
    EXPECT_DOUBLE_EQ(zeta_to_d(ZetaVector::zeros(2), StageWeights(vec({0.8, 0.2}), n))(0), 0.25);
    EXPECT_NEAR(zeta_to_d(ZetaVector{vec({0.5, -0.5})}, StageWeights(vec({0.5, 0.5}), n))(0), std::exp(1.0), 1e-15);
}

TEST(GradientMapD, Examples) {
    Eigen::MatrixXd e1(2, 1);
    e1 << 1, -1;
    EXPECT_EQ(gradient_map_D(vec({1.0})), e1);
    Eigen::MatrixXd e2(3, 2);
    e2 << 2, 3, -2, 0, 0, -3;
    EXPECT_EQ(gradient_map_D(vec({2.0, 3.0})), e2);
    const Eigen::MatrixXd D = gradient_map_D(vec({0.3, 7.1, 2.2, 1e-3}));
    EXPECT_LT(D.colwise().sum().cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EstimateB, SymmetricExample) {
    EvaluatedSamples ev;
    ev.log_nu = {Eigen::MatrixXd::Zero(4, 2), Eigen::MatrixXd::Zero(4, 2)};
    Eigen::MatrixXd expected(2, 2);
    expected << 0.25, -0.25, -0.25, 0.25;
    EXPECT_LT((estimate_B(ev, ZetaVector::zeros(2), StageWeights::naive(ev.sizes())) - expected).norm(), 1e-15);
}

TEST(EstimateB, RowsSumToZero) {
    const auto ev = random_samples(4, 30, 33);
    const Eigen::MatrixXd B = estimate_B(ev, ZetaVector{vec({0.2, -0.1, 0.5, -0.6})}, StageWeights(vec({1, 2, 3, 4}), ev.sizes()));
    EXPECT_LE(B.rowwise().sum().cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ((B - B.transpose()).norm(), 0.0);
}

TEST(EstimateB, MatchesQuadratureOnIidToy) {
    // at the truth with a = (1/2, 1/2): B_11 = (1/2) * integral f1 f2 / (f1 + f2)
    const double b11 = 0.5 * test::integrate_real_line(
                                 [](double x) {
                                     const double f1 = std::exp(t_log_density(5.0, 1.0, x));
                                     const double f2 = std::exp(t_log_density(5.0, 0.0, x));
                                     return f1 * f2 / (f1 + f2);
                                 },
                                 0.5, 2.0);
    const std::size_t n = 200000;
    const SampleSet<double> s({sample_t_iid(5.0, 1.0, n, 101, "t5_mu1"), sample_t_iid(5.0, 0.0, n, 102, "t5_mu0")},
                              Stage::stage1);
    const auto ev = evaluate_references(s, toy_refs());
    const StageWeights w(vec({0.5, 0.5}), ev.sizes());
    const auto res = maximize_constrained(ev, w, ZetaVector::zeros(2));
    const Eigen::MatrixXd B = estimate_B(ev, res.zeta, w);
    Eigen::MatrixXd pop(2, 2);
    pop << b11, -b11, -b11, b11;
    EXPECT_LE(test::rel_err(B, pop), 0.01);
}

TEST(EstimateOmega, ZeroForConstantMemberships) {
    EvaluatedSamples ev;
    ev.log_nu = {Eigen::MatrixXd::Zero(100, 2), Eigen::MatrixXd::Zero(100, 2)};
    EXPECT_EQ(estimate_Omega(ev, ZetaVector::zeros(2), StageWeights::naive(ev.sizes())).norm(), 0.0);
}

TEST(EstimateOmega, BlockwiseAssemblyAgrees) {
    const auto ev = random_samples(3, 400, 44);
    const StageWeights w(vec({0.2, 0.3, 0.5}), ev.sizes());
    const ZetaVector z{vec({0.1, 0.0, -0.1})};
    const auto covs = membership_bm_covs(ev, z, {});
    const Eigen::MatrixXd direct = omega_from_chain_covs(covs, w.a(), ev.sizes());
    const Eigen::MatrixXd block = omega_blockwise(covs, w.a(), ev.sizes());
    EXPECT_LE((direct - block).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, direct.cwiseAbs().maxCoeff()));
    EXPECT_EQ((direct - estimate_Omega(ev, z, w)).norm(), 0.0);
}

TEST(EstimateOmega, TooShortChain) {
    EvaluatedSamples ev;
    ev.log_nu = {Eigen::MatrixXd::Zero(3, 2), Eigen::MatrixXd::Zero(100, 2)};
    EXPECT_THROW(estimate_Omega(ev, ZetaVector::zeros(2), StageWeights::naive(ev.sizes())), InsufficientData);
}

TEST(PseudoInverse, Examples) {
    EXPECT_LT((pseudo_inverse(Eigen::MatrixXd::Identity(3, 3)) - Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-14);
    Eigen::MatrixXd m(2, 2), e(2, 2);
    m << 0.25, -0.25, -0.25, 0.25;
    e << 1, -1, -1, 1;
    EXPECT_LT((pseudo_inverse(m) - e).norm(), 1e-12);
    EXPECT_EQ(pseudo_inverse(Eigen::MatrixXd::Zero(2, 2)).norm(), 0.0);
}

TEST(PseudoInverse, MoorePenroseIdentity) {
    const auto ev = random_samples(4, 30, 55);
    const Eigen::MatrixXd B = estimate_B(ev, ZetaVector::zeros(4), StageWeights::naive(ev.sizes()));
    const Eigen::MatrixXd r = B * pseudo_inverse(B) * B;
    EXPECT_LE(test::rel_err(r, B), 1e-8);
    Eigen::MatrixXd asym(2, 2);
    asym << 1, 0, 1, 1;
    EXPECT_THROW(pseudo_inverse(asym), InvalidParameter);
}

TEST(CovarianceV, ZeroOmegaGivesZero) {
    Eigen::MatrixXd B(2, 2);
    B << 0.25, -0.25, -0.25, 0.25;
    EXPECT_EQ(covariance_V(gradient_map_D(vec({1.3})), B, Eigen::MatrixXd::Zero(2, 2)).norm(), 0.0);
}

TEST(EstimateD, ScaleCovariance) {
    const auto s = toy_stage1(5000, 66);
    auto ev = evaluate_references(s, toy_refs());
    const StageWeights w = StageWeights::naive(ev.sizes());
    const double base = estimate_d(ev, w).d_hat(0);
    const double c = 3.5;
    auto scaled2 = ev, scaled1 = ev;
    for (auto& m : scaled2.log_nu) m.col(1).array() += std::log(c);
    for (auto& m : scaled1.log_nu) m.col(0).array() += std::log(c);
    EXPECT_NEAR(estimate_d(scaled2, w).d_hat(0), c * base, 1e-9 * c * base);
    EXPECT_NEAR(estimate_d(scaled1, w).d_hat(0), base / c, 1e-9 * base / c);
}

TEST(EstimateD, IdenticalDensitiesGiveOnes) {
    const SampleSet<double> s({sample_t_iid(5.0, 0.0, 2000, 1, "a"), sample_t_iid(5.0, 0.0, 3000, 2, "b"),
                               sample_t_iid(5.0, 0.0, 1000, 3, "c")},
                              Stage::stage1);
    const std::vector<UnnormalizedDensity<double>> refs{t_density(5.0, 0.0, "a"), t_density(5.0, 0.0, "b"),
                                                        t_density(5.0, 0.0, "c")};
    const auto r = estimate_d(s, refs, StageWeights::naive(s.sizes()));
    EXPECT_LT((r.d_hat.array() - 1.0).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(EstimateD, ToyWithinThreeSE) {
    const auto s = toy_stage1(100000, 2024);
    const auto r = estimate_d(s, toy_refs(), StageWeights::naive(s.sizes()));
    EXPECT_LT(std::abs(r.d_hat(0) - 1.0), 3.0 * r.se(0));
    EXPECT_EQ(r.V_hat, r.V_hat.transpose());
    EXPECT_GE(r.V_hat(0, 0), 0.0);
}

TEST(EstimateD, DiscreteMarkovChainsWithinThreeSE) {
    const auto s = discrete_mh_stage1(100000, 303);
    const auto r = estimate_d(s, oracle_tables(), StageWeights::naive(s.sizes()));
    EXPECT_LT(std::abs(r.d_hat(0) - 2.0), 3.0 * r.se(0));
}

TEST(EstimateD, ReplicationOracleForOmegaAndV) {
    // 500 replications of the discrete chains; the estimated Omega and V / n are compared
    // with the empirical covariance of the scaled score at the truth and of d_hat.
    const std::size_t n_l = 4000, reps = 500;
    const auto refs = oracle_tables();
    const double n = 2.0 * n_l;
    const ZetaVector zeta0{vec({std::log(0.5 / 2.0), std::log(0.5 / 4.0)})};
    Eigen::MatrixXd omega_mean = Eigen::MatrixXd::Zero(2, 2);
    Eigen::MatrixXd scores(reps, 2);
    std::vector<double> d_hats, v_over_n;
    for (std::size_t r = 0; r < reps; ++r) {
        const auto s = discrete_mh_stage1(n_l, 10000 + 17 * r);
        const auto ev = evaluate_references(s, refs);
        const StageWeights w = StageWeights::naive(ev.sizes());
        const auto est = estimate_d(ev, w);
        omega_mean += est.Omega_hat / static_cast<double>(reps);
        scores.row(static_cast<Eigen::Index>(r)) = qll_gradient(ev, zeta0, w).transpose() / std::sqrt(n);
        d_hats.push_back(est.d_hat(0));
        v_over_n.push_back(est.V_hat(0, 0) / n);
    }
    const Eigen::MatrixXd centered = scores.rowwise() - scores.colwise().mean();
    const Eigen::MatrixXd emp_omega = centered.transpose() * centered / static_cast<double>(reps - 1);
    EXPECT_LE(test::rel_err(omega_mean, emp_omega), 0.25);

    double m = 0.0, v = 0.0, mean_v = 0.0;
    for (double d : d_hats) m += d / reps;
    for (double d : d_hats) v += (d - m) * (d - m) / (reps - 1);
    for (double x : v_over_n) mean_v += x / reps;
    EXPECT_NEAR(mean_v / v, 1.0, 0.25);
}

TEST(StageWeights, DerivedWeights) {
    const StageWeights w(vec({2.0, 6.0}), {100, 300});
    EXPECT_DOUBLE_EQ(w.a()(0), 0.25);
    EXPECT_DOUBLE_EQ(w.w()(0), 1.0);
    EXPECT_DOUBLE_EQ(w.w()(1), 1.0);
    EXPECT_THROW(StageWeights(vec({0.0, 1.0}), {1, 1}), InvalidParameter);
    EXPECT_THROW(StageWeights(vec({1.0}), {1, 1}), InvalidParameter);
}
