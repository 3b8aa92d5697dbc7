#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "gesched/dp.hpp"
#include "gesched/policies.hpp"
#include "oracles.hpp"

using namespace gesched;

namespace {

SystemModel default_model() {
    return SystemModel(ChannelParams(0.2, 0.9), ArrivalDist::bernoulli(0.9), CostModel::exponential(1.0, 2), 10,
                       10, 0.5);
}

SystemModel tiny_model() {
    return SystemModel(ChannelParams(0.2, 0.9), ArrivalDist::bernoulli(0.5), CostModel::exponential(1.0, 1), 3, 10,
                       0.5);
}

TEST(DiscountedBackup, ZeroValueGivesStageCost) {
    const auto m = default_model();
    const auto V = ValueTable::zeros(m, ValueMode::Discounted, 0.9);
    for (std::size_t i = 0; i < m.num_states(); i += 7) {
        const State s = m.unflat(i);
        for (int u = 0; u <= m.max_tx(); ++u) {
            EXPECT_DOUBLE_EQ(discounted_backup(m, V, s, u, 0.9), instantaneous_cost(s.q, u, m.cost()));
        }
    }
}

TEST(DiscountedBackup, HandInstanceSingleBelief) {
    // Channel always good, one belief (b = 1), no arrivals, Q_max = 1:
    // V(0) = 0, V(1) = min(1 + beta V(1), 1 + c(1) + beta V(0)).
    const SystemModel m(ChannelParams::unchecked(1.0, 1.0), ArrivalDist({1.0}), CostModel::exponential(1.0, 1), 1, 0,
                        1.0);
    ASSERT_EQ(m.num_beliefs(), 1u);
    const double beta = 0.9;
    const auto vi = value_iteration(m, beta, 1e-12);
    const double c1 = std::expm1(1.0);
    const double v1 = std::min(1.0 / (1.0 - beta), 1.0 + c1);
    EXPECT_NEAR(vi.values.at(0, 0), 0.0, 1e-12);
    EXPECT_NEAR(vi.values.at(1, 0), v1, 1e-10);
    EXPECT_NEAR(discounted_backup(m, vi.values, {1, 0}, 1, beta), 1.0 + c1 + beta * vi.values.at(0, 0), 1e-12);
    EXPECT_NEAR(discounted_backup(m, vi.values, {1, 0}, 0, beta), 1.0 + beta * vi.values.at(1, 0), 1e-12);
    EXPECT_EQ(vi.policy.at(1, 0), 1);
}

TEST(ValueIteration, MyopicLimitNeverTransmits) {
    const auto vi = value_iteration(default_model(), 1e-6);
    for (int a : vi.policy.actions) EXPECT_EQ(a, 0);
}

TEST(ValueIteration, NoArrivalsEmptyQueueIsFree) {
    const SystemModel m(ChannelParams(0.2, 0.9), ArrivalDist({1.0}), CostModel::exponential(1.0, 2), 10, 10, 0.5);
    const auto vi = value_iteration(m, 0.95);
    for (std::size_t b = 0; b < m.num_beliefs(); ++b) {
        EXPECT_NEAR(vi.values.at(0, b), 0.0, 1e-12);
        EXPECT_EQ(vi.policy.at(0, b), 0);
    }
}

TEST(ValueIteration, IteratesIncreaseFromZero) {
    const auto m = default_model();
    auto V = ValueTable::zeros(m, ValueMode::Discounted, 0.95);
    for (int n = 0; n < 30; ++n) {
        auto next = V;
        for (std::size_t i = 0; i < m.num_states(); ++i) {
            const State s = m.unflat(i);
            double best = discounted_backup(m, V, s, 0, 0.95);
            for (int u = 1; u <= m.max_tx(); ++u) best = std::min(best, discounted_backup(m, V, s, u, 0.95));
            next.values[i] = best;
            EXPECT_GE(best, V.values[i] - 1e-12);
        }
        V = next;
    }
}

TEST(ValueIteration, MatchesFiniteHorizonOracle) {
    const auto m = tiny_model();
    const double beta = 0.9;
    const int H = 200;
    const auto vi = value_iteration(m, beta, 1e-9);
    const auto J = oracle::finite_horizon_values(m, beta, H);
    double max_cost = 0.0;
    for (int u = 0; u <= m.max_tx(); ++u) max_cost = std::max(max_cost, instantaneous_cost(m.q_max(), u, m.cost()));
    const double bound = std::pow(beta, H) * max_cost / (1.0 - beta) + 1e-8;
    for (std::size_t i = 0; i < m.num_states(); ++i) EXPECT_NEAR(vi.values.values[i], J[i], bound);
}

TEST(ValueIteration, DefaultsHaveThresholdStructureAndShape) {
    const auto m = default_model();
    const auto vi = value_iteration(m, 0.95, 1e-9);
    EXPECT_LE(vi.residual, 1e-9);
    EXPECT_TRUE(verify_threshold_structure(vi.policy).pass());
    const auto shape = check_value_properties(vi.values, m.beliefs());
    EXPECT_TRUE(shape.concave()) << shape.worst_concavity_gap;
    EXPECT_TRUE(shape.monotone()) << shape.worst_monotonicity_gap;
    for (double v : vi.values.values) EXPECT_GE(v, 0.0);
}

TEST(ValueIteration, ReportsNonConvergence) {
    try {
        value_iteration(default_model(), 0.99, 1e-12, 5);
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_EQ(e.iterations(), 5);
        EXPECT_GT(e.residual(), 1e-12);
    }
}

TEST(ValueIteration, RejectsBadDiscount) {
    EXPECT_THROW(value_iteration(default_model(), 1.0), ConfigError);
    EXPECT_THROW(value_iteration(default_model(), 0.0), ConfigError);
}

TEST(Rvi, DefaultsConverge) {
    const auto m = default_model();
    const auto r = rvi(m);
    EXPECT_NEAR(r.zeta, 6.3404935842, 1e-8);
    EXPECT_LE(r.residual, 1e-8);
    EXPECT_DOUBLE_EQ(r.h(default_ref_state(m)), 0.0);
    EXPECT_EQ(verify_threshold_structure(r.policy).violations.size(), 0u);
}

TEST(Rvi, ZetaIndependentOfReferenceState) {
    const auto m = default_model();
    const double base = rvi(m).zeta;
    for (const State ref : {State{m.q_max(), m.beliefs().index_p11()}, State{5, m.beliefs().index_b0()},
                            State{2, m.beliefs().index_of(BeliefRoot::P01, 4)}}) {
        const auto r = rvi(m, ref);
        EXPECT_NEAR(r.zeta, base, 1e-6);
        EXPECT_DOUBLE_EQ(r.h(ref), 0.0);
    }
}

TEST(Rvi, RewardFormGivesSamePolicy) {
    const auto m = default_model();
    const auto cost = rvi(m);
    const auto rew = rvi(m, default_ref_state(m), 1e-9, 100000, Objective::MaximizeReward);
    EXPECT_EQ(cost.policy, rew.policy);
    EXPECT_NEAR(rew.zeta, m.reward_offset() - cost.zeta, 1e-7);
}

TEST(Rvi, AcoeResidualWithinTenTol) {
    for (double tol : {1e-6, 1e-8, 1e-10}) {
        const auto r = rvi(default_model(), tol);
        EXPECT_LE(r.residual, 10.0 * tol);
    }
}

TEST(Rvi, ExhaustiveQueuePolicyOracleOnNearlyIidChannel) {
    // p01 = p11 = p: every belief after t = 0 equals p, so the optimum is a
    // queue-only policy; search all 2^(Q_max+1) of them.
    const double p = 1.0 - 1e-6;
    const SystemModel m(ChannelParams(p, p), ArrivalDist::bernoulli(0.3), CostModel::exponential(1.0, 1), 6, 10, 0.5);
    const auto r = rvi(m, State{0, m.beliefs().index_p01()}, 1e-11);
    EXPECT_NEAR(r.zeta, oracle::best_queue_policy_cost(m, p), 1e-8);
}

TEST(Rvi, TruncationSensitivity) {
    // A larger buffer drops fewer packets, so the optimal cost rises toward
    // its untruncated limit with shrinking increments.
    std::vector<double> zeta;
    for (int q_max : {10, 20, 30, 40}) {
        const SystemModel m(ChannelParams(0.2, 0.9), ArrivalDist::bernoulli(0.9), CostModel::exponential(1.0, 2),
                            q_max, 10, 0.5);
        const auto r = rvi(m);
        EXPECT_TRUE(verify_threshold_structure(r.policy).pass()) << "Q_max=" << q_max;
        zeta.push_back(r.zeta);
    }
    for (std::size_t i = 1; i < zeta.size(); ++i) EXPECT_GT(zeta[i], zeta[i - 1]);
    for (std::size_t i = 2; i < zeta.size(); ++i) EXPECT_LT(zeta[i] - zeta[i - 1], zeta[i - 1] - zeta[i - 2]);
}

TEST(Rvi, RefusesUnstableModelUnlessAllowed) {
    const SystemModel forced(ChannelParams(0.5, 0.5), ArrivalDist::bernoulli(0.6), CostModel::exponential(1.0, 1),
                             10, 3, 0.5, true);
    EXPECT_NO_THROW(rvi(forced));
}

TEST(EvaluatePolicy, NeverTransmittingFillsTheQueue) {
    const auto m = default_model();
    EXPECT_NEAR(evaluate_policy_exact(m, PolicyTable::constant(m, 0)), 10.0, 1e-6);
}

TEST(EvaluatePolicy, GreedyPolicyReproducesZeta) {
    const auto m = default_model();
    const auto r = rvi(m);
    EXPECT_NEAR(evaluate_policy_exact(m, r.policy), r.zeta, 1e-6);
}

TEST(EvaluatePolicy, BaselinesAreWorse) {
    const auto m = default_model();
    const double zeta = rvi(m).zeta;
    EXPECT_GT(evaluate_policy_exact(m, baseline_always_one(m)), zeta);
    EXPECT_GE(evaluate_policy_exact(m, baseline_iid_mdp(m)), zeta - 1e-9);
}

TEST(EvaluatePolicy, RejectsMismatchedTable) {
    const auto m = default_model();
    PolicyTable bad = PolicyTable::constant(m, 0);
    bad.actions.pop_back();
    EXPECT_THROW(evaluate_policy_exact(m, bad), ConfigError);
    PolicyTable out_of_range = PolicyTable::constant(m, 3);
    EXPECT_THROW(evaluate_policy_exact(m, out_of_range), ConfigError);
}

TEST(Csv, ValueAndPolicyFiles) {
    const auto m = tiny_model();
    const auto r = rvi(m);
    std::ostringstream v, p;
    write_value_csv(v, m, r.h, CsvMeta{"abc", 3});
    write_policy_csv(p, m, r.policy, CsvMeta{"abc", 3});
    std::istringstream in(v.str());
    std::string first, header;
    std::getline(in, first);
    std::getline(in, header);
    EXPECT_EQ(first, "# config_hash=abc seed=3");
    EXPECT_EQ(header, "q,belief,value");
    std::istringstream pin(p.str());
    const auto table = read_csv([&](std::string& line) { return bool(std::getline(pin, line)); });
    EXPECT_EQ(table.header, (std::vector<std::string>{"q", "belief", "action"}));
    EXPECT_EQ(table.rows.size(), m.num_states());
}

} // namespace
