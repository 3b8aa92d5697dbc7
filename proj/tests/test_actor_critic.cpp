#include <cmath>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "gesched/actor_critic.hpp"

using namespace gesched;

namespace {

SystemModel default_model() {
    return SystemModel(ChannelParams(0.2, 0.9), ArrivalDist::bernoulli(0.9), CostModel::exponential(1.0, 2), 10,
                       10, 0.5);
}

// log pi(u) straight from the product formula, for finite differencing.
double log_pi_reference(const std::vector<double>& th, int m, int q, double b, int u) {
    auto f = [&](int j) {
        const double x = (b - (th[j - 1] + th[m + j - 1] * q)) * th[2 * m + j - 1];
        return 1.0 / (1.0 + std::exp(-x));
    };
    double p = u == 0 ? 1.0 : f(u);
    for (int i = std::max(u, 0) + 1; i <= m; ++i) p *= 1.0 - f(i);
    return std::log(p);
}

TEST(SigmoidFeature, Examples) {
    const ThetaVector theta(1, {0.9, -0.08, 10.0});
    EXPECT_NEAR(sigmoid_feature(theta, 5, 0.5, 1), 0.5, 1e-15);
    const ThetaVector sharp(1, {0.5, 0.0, 1e6});
    EXPECT_DOUBLE_EQ(sigmoid_feature(sharp, 0, 0.6, 1), 1.0);
    EXPECT_NEAR(sigmoid_feature(sharp, 0, 0.4, 1), 0.0, 1e-300);
    const ThetaVector flat(1, {0.3, 0.1, 0.0});
    EXPECT_DOUBLE_EQ(sigmoid_feature(flat, 7, 0.9, 1), 0.5);
}

TEST(Logistic, SaturatesWithoutOverflow) {
    EXPECT_DOUBLE_EQ(logistic(1e308), 1.0);
    EXPECT_DOUBLE_EQ(logistic(-1e308), 0.0);
    EXPECT_TRUE(std::isfinite(logistic(-800.0)));
}

TEST(PolicyProbs, Examples) {
    // f1 = 1 (b far above tau_1), f2 = 0 (b far below tau_2)
    const ThetaVector split(2, {0.1, 0.9, 0.0, 0.0, 1e6, 1e6});
    const auto a = policy_probs(split, 0, 0.5);
    EXPECT_DOUBLE_EQ(a[0], 0.0);
    EXPECT_DOUBLE_EQ(a[1], 1.0);
    EXPECT_DOUBLE_EQ(a[2], 0.0);

    const ThetaVector idle(2, {0.9, 0.95, 0.0, 0.0, 1e6, 1e6});
    const auto b = policy_probs(idle, 0, 0.5);
    EXPECT_DOUBLE_EQ(b[0], 1.0);

    const ThetaVector half(2, {0.1, 0.2, 0.0, 0.0, 0.0, 0.0});
    const auto c = policy_probs(half, 3, 0.5);
    EXPECT_DOUBLE_EQ(c[1], 0.25);
    EXPECT_DOUBLE_EQ(c[2], 0.5);
    EXPECT_DOUBLE_EQ(c[0], 0.25);
}

TEST(PolicyProbs, IsADistributionEverywhere) {
    RandomStream rng(3);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<double> v(9);
        for (auto& x : v) x = -50.0 + 100.0 * rng.uniform();
        const ThetaVector theta(3, v);
        const auto pi = policy_probs(theta, static_cast<int>(rng.uniform() * 11), rng.uniform());
        double total = 0.0;
        for (double p : pi) {
            EXPECT_GE(p, 0.0);
            EXPECT_LE(p, 1.0);
            total += p;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(SampleAction, SkipsZeroProbability) {
    EXPECT_EQ(sample_action({0.0, 1.0, 0.0}, 0.0), 1);
    EXPECT_EQ(sample_action({0.0, 1.0, 0.0}, 0.9999999), 1);
    EXPECT_EQ(sample_action({0.5, 0.0, 0.5}, 0.5), 2);
}

TEST(ScoreFeatures, MatchesFiniteDifferences) {
    RandomStream rng(RngSpec{99, 0});
    const double h = 1e-6;
    for (int m : {1, 2, 3}) {
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> v(3 * static_cast<std::size_t>(m));
            for (int j = 0; j < m; ++j) {
                v[j] = rng.uniform();
                v[m + j] = -0.1 + 0.2 * rng.uniform();
                v[2 * m + j] = -10.0 + 20.0 * rng.uniform();
            }
            const ThetaVector theta(m, v);
            const int q = static_cast<int>(rng.uniform() * 11);
            const double b = rng.uniform();
            const int u = sample_action(policy_probs(theta, q, b), rng.uniform());
            const auto phi = score_features(theta, q, b, u);
            for (std::size_t i = 0; i < v.size(); ++i) {
                auto plus = v, minus = v;
                plus[i] += h;
                minus[i] -= h;
                const double fd = (log_pi_reference(plus, m, q, b, u) - log_pi_reference(minus, m, q, b, u)) / (2 * h);
                const double scale = std::max({std::abs(fd), std::abs(phi[i]), 1e-3});
                EXPECT_LE(std::abs(phi[i] - fd) / scale, 1e-5) << "m=" << m << " i=" << i << " u=" << u;
            }
        }
    }
}

TEST(ScoreFeatures, ScoreIdentity) {
    RandomStream rng(RngSpec{5, 0});
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> v(6);
        for (auto& x : v) x = -5.0 + 10.0 * rng.uniform();
        const ThetaVector theta(2, v);
        const int q = static_cast<int>(rng.uniform() * 11);
        const double b = rng.uniform();
        const auto pi = policy_probs(theta, q, b);
        std::vector<double> mean(6, 0.0);
        for (int u = 0; u <= 2; ++u) {
            const auto phi = score_features_unchecked(theta, q, b, u);
            for (std::size_t i = 0; i < 6; ++i) mean[i] += pi[static_cast<std::size_t>(u)] * phi[i];
        }
        for (double x : mean) EXPECT_NEAR(x, 0.0, 1e-10);
    }
}

TEST(ScoreFeatures, ZeroSharpnessIntercept) {
    const ThetaVector theta(1, {0.4, -0.02, 0.0});
    const auto phi = score_features(theta, 3, 0.7, 1);
    EXPECT_EQ(phi[0], 0.0);
    EXPECT_EQ(phi[1], 0.0);
    EXPECT_NEAR(phi[2], 0.5 * (0.7 - (0.4 - 0.06)), 1e-15);
}

TEST(ScoreFeatures, RejectsImpossibleAction) {
    const ThetaVector theta(1, {0.0, 0.0, 1e6});
    EXPECT_THROW(score_features(theta, 0, 0.9, 0), NumericError);
    EXPECT_NO_THROW(score_features_unchecked(theta, 0, 0.9, 0));
    EXPECT_THROW(score_features(theta, 0, 0.9, 2), ConfigError);
}

TEST(GradientCheck, PassesIncludingZeroSharpness) {
    EXPECT_TRUE(gradient_check(2, 10, 100, RngSpec{1, 0}).pass());
    EXPECT_TRUE(gradient_check(2, 10, 100, RngSpec{1, 0}, true).pass());
    EXPECT_TRUE(gradient_check(1, 10, 100, RngSpec{2, 0}).pass());
}

TEST(AdvantageApprox, Examples) {
    const std::vector<double> phi{0.3, -1.2, 4.0};
    EXPECT_EQ(advantage_approx(std::vector<double>(3, 0.0), phi), 0.0);
    EXPECT_EQ(advantage_approx(std::vector<double>{0.0, 1.0, 0.0}, phi), -1.2);
    EXPECT_NEAR(advantage_approx(std::vector<double>{2.0, 0.5, -1.0}, phi), 0.6 - 0.6 - 4.0, 1e-15);
    EXPECT_THROW(advantage_approx(std::vector<double>(2, 0.0), phi), ConfigError);
}

LearnerState make_state(const SystemModel& m, int q, double b, int u, ChannelState hidden) {
    LearnerState s;
    s.theta = ThetaVector(m.max_tx(), {0.5, 0.7, -0.01, -0.02, 4.0, 6.0});
    s.w = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    s.trace = score_features(s.theta, q, b, u);
    s.q = q;
    s.b = b;
    s.pending_action = u;
    s.hidden = hidden;
    return s;
}

TEST(AcStep, AverageRewardUpdate) {
    const auto m = default_model();
    auto s = make_state(m, 5, 0.5, 1, ChannelState::Good);
    RandomStream rng(1);
    ac_step(s, m, 0.0005, 0.002, rng);
    // reward(5, 1) = (10 + e^2 - 1) - (5 + e - 1)
    EXPECT_NEAR(s.last_reward, 9.670774, 1e-6);
    EXPECT_NEAR(s.avg_reward, 0.002 * s.last_reward, 1e-15);
    EXPECT_EQ(s.t, 1);
}

TEST(AcStep, TraceResetsAtReferenceState) {
    // One arrival every slot; a successful single transmission from q = 2
    // lands exactly on (2, p11).
    const SystemModel m(ChannelParams(0.2, 0.9), ArrivalDist({0.0, 1.0}), CostModel::exponential(1.0, 2), 10, 10, 0.5);
    auto s = make_state(m, 2, 0.7, 1, ChannelState::Good);
    const ThetaVector theta_before = s.theta;
    RandomStream rng(4);
    ac_step(s, m, 0.0005, 0.002, rng);
    ASSERT_EQ(s.q, 2);
    ASSERT_DOUBLE_EQ(s.b, 0.9);
    const auto phi = score_features_unchecked(theta_before, 2, 0.9, s.pending_action);
    for (std::size_t i = 0; i < phi.size(); ++i) EXPECT_DOUBLE_EQ(s.trace[i], phi[i]);
}

TEST(AcStep, TraceAccumulatesElsewhere) {
    const SystemModel m(ChannelParams(0.2, 0.9), ArrivalDist({0.0, 1.0}), CostModel::exponential(1.0, 2), 10, 10, 0.5);
    auto s = make_state(m, 4, 0.7, 1, ChannelState::Good);
    const auto trace_before = s.trace;
    const ThetaVector theta_before = s.theta;
    RandomStream rng(4);
    ac_step(s, m, 0.0005, 0.002, rng);
    ASSERT_EQ(s.q, 4);
    const auto phi = score_features_unchecked(theta_before, s.q, s.b, s.pending_action);
    for (std::size_t i = 0; i < phi.size(); ++i) EXPECT_NEAR(s.trace[i], trace_before[i] + phi[i], 1e-15);
}

TEST(AcStep, ZeroTraceLeavesCriticUnchanged) {
    const auto m = default_model();
    auto s = make_state(m, 5, 0.5, 1, ChannelState::Bad);
    s.trace.assign(6, 0.0);
    const auto w_before = s.w;
    RandomStream rng(8);
    ac_step(s, m, 0.0005, 0.002, rng);
    EXPECT_EQ(s.w, w_before);
}

TEST(AcStep, DivergenceReportsStep) {
    const auto m = default_model();
    auto s = make_state(m, 5, 0.5, 1, ChannelState::Good);
    s.w[0] = std::numeric_limits<double>::infinity();
    s.t = 41;
    RandomStream rng(1);
    try {
        ac_step(s, m, 0.0005, 0.002, rng);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("step 42"), std::string::npos) << e.what();
    }
}

TEST(AcStep, RejectsNonPositiveStepSizes) {
    const auto m = default_model();
    auto s = make_state(m, 5, 0.5, 1, ChannelState::Good);
    RandomStream rng(1);
    EXPECT_THROW(ac_step(s, m, 0.0, 0.002, rng), ConfigError);
}

TEST(Train, DeterministicAndCadence) {
    const auto m = default_model();
    AcHyper h;
    h.steps = 4050;
    h.alpha_theta = 0.0006;
    h.alpha_w = 0.001;
    h.seed = 17;
    const auto a = train(m, h);
    const auto b = train(m, h);
    ASSERT_EQ(a.curve.size(), 41u); // ceil(4050 / 100)
    EXPECT_EQ(a.curve.back().t, 4050);
    for (std::size_t i = 0; i < a.curve.size(); ++i) EXPECT_EQ(a.curve[i].avg_reward, b.curve[i].avg_reward);
    for (std::size_t i = 0; i < a.theta.size(); ++i) EXPECT_EQ(a.theta[i], b.theta[i]);
    h.run_index = 1;
    EXPECT_NE(train(m, h).curve.back().avg_reward, a.curve.back().avg_reward);
}

TEST(Train, InitialisationDrawsFromUnitCube) {
    const auto m = default_model();
    AcHyper h;
    h.steps = 1;
    RandomStream rng(RngSpec{h.seed, 0});
    const auto s = init_learner(m, h, rng);
    for (double x : s.theta.values()) {
        EXPECT_GE(x, 0.0);
        EXPECT_LT(x, 1.0);
    }
    for (double x : s.w) {
        EXPECT_GE(x, 0.0);
        EXPECT_LT(x, 1.0);
    }
    EXPECT_EQ(s.avg_reward, 0.0);
    EXPECT_EQ(s.q, 5);
    EXPECT_EQ(s.b, 0.5);
}

TEST(Train, BoundariesFollowTheta) {
    const auto m = default_model();
    AcHyper h;
    h.steps = 500;
    const auto r = train(m, h);
    ASSERT_EQ(r.boundaries.size(), 11u);
    for (int q = 0; q <= 10; ++q)
        for (int j = 1; j <= 2; ++j)
            EXPECT_DOUBLE_EQ(r.boundaries[static_cast<std::size_t>(q)][static_cast<std::size_t>(j - 1)],
                             r.theta.boundary(j, q));
}

TEST(Train, RefusesUnstableModel) {
    const SystemModel forced(ChannelParams(0.5, 0.5), ArrivalDist::bernoulli(0.6), CostModel::exponential(1.0, 1),
                             10, 3, 0.5, true);
    AcHyper h;
    h.steps = 10;
    EXPECT_NO_THROW(train(forced, h));
}

TEST(ThetaCsv, RoundTrip) {
    const ThetaVector theta(2, {0.1, 0.2, -0.3, 1.0 / 3.0, 7.5, -2.25});
    std::ostringstream out;
    write_theta_csv(out, theta, CsvMeta{"x", 1});
    std::istringstream in(out.str());
    const auto back = theta_from_csv(read_csv([&](std::string& line) { return bool(std::getline(in, line)); }));
    ASSERT_EQ(back.max_tx(), 2);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(back[i], theta[i]);
}

} // namespace
