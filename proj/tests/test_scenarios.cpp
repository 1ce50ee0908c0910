#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace loclab;

TEST(Random, SameSeedSameInstance) {
    RandomInstanceOptions opt;
    opt.state_size = 3;
    const auto a = random_instance(42, opt);
    const auto b = random_instance(42, opt);
    EXPECT_EQ(a.mdp.reward_table(), b.mdp.reward_table());
    for (std::size_t j = 0; j < 3; ++j)
        EXPECT_EQ(a.mdp.kernel(j).table, b.mdp.kernel(j).table);
    EXPECT_TRUE(a.policy == b.policy);
    const auto c = random_instance(43, opt);
    EXPECT_NE(a.mdp.reward_table(), c.mdp.reward_table());
}

TEST(Random, FirstDrawsArePinned) {
    // Guards the documented draw order: agent 0's base row comes first.
    SplitMix64 rng(1);
    const double u0 = rng.uniform_positive(), u1 = rng.uniform_positive();
    RandomInstanceOptions opt;
    opt.coupling = 0.0;
    const auto sc = random_instance(1, opt);
    EXPECT_DOUBLE_EQ(sc.mdp.kernel(0).table[0], u0 / (u0 + u1));
}

TEST(Random, ValidatesAndRespectsRadius) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        RandomInstanceOptions opt;
        opt.n = 4;
        opt.scope_radius = 0;
        const auto sc = random_instance(seed, opt);
        EXPECT_TRUE(validate(sc.mdp, sc.policy).ok());
        const auto Es = env_state_sensitivity(sc.mdp);
        for (Eigen::Index j = 0; j < 4; ++j)
            for (Eigen::Index i = 0; i < 4; ++i)
                if (i != j) {
                    EXPECT_EQ(Es(j, i), 0.0);
                }
    }
}

TEST(Random, SeedOnePassesCoreChecks) {
    const auto sc = random_instance(1);
    const auto rep = influence_report(sc.mdp, sc.policy);
    EXPECT_LE(rep.decomposition_slack, 1e-12);
    Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(8, -1.0, 1.0);
    EXPECT_LE(one_step_oscillation_check(sc.mdp, sc.policy, f).excess(), 1e-12);
    for (std::size_t k = 0; k < 3; ++k)
        EXPECT_GE(block_improvement_check(sc.mdp, sc.policy, k, 1, 1.0).slack(), -1e-9);
}

TEST(Random, RejectsBadOptions) {
    RandomInstanceOptions opt;
    opt.n = 0;
    EXPECT_THROW(random_instance(1, opt), InvalidArgument);
    opt = {};
    opt.coupling = 1.5;
    EXPECT_THROW(random_instance(1, opt), InvalidArgument);
    opt = {};
    opt.n = 40;
    EXPECT_THROW(random_instance(1, opt), CapExceeded);
    Limits tight;
    tight.max_evaluations = 8;
    EXPECT_THROW(random_instance(1, {}, tight), CapExceeded);
}

TEST(Sleepy, ExpectedTableReproduced) {
    for (double alpha : {0.0, 0.3, 1.0}) {
        const auto sc = scenario_sleepy(alpha);
        EXPECT_TRUE(validate(sc.mdp, sc.policy).ok());
        const auto rep = influence_report(sc.mdp, sc.policy);
        EXPECT_NEAR(rep.E_a(1, 0), sc.expected.at("E_a[2<-1]"), 1e-9);
        EXPECT_NEAR(rep.Pi(0, 0), sc.expected.at("Pi[1<-1]"), 1e-9);
        EXPECT_NEAR(rep.C(1, 0), sc.expected.at("C[2<-1]"), 1e-9);
        EXPECT_NEAR(rep.C(1, 0), oracle::interdependence(sc.mdp, sc.policy)(1, 0), 1e-12);
        EXPECT_NEAR(rep.H(1, 0), sc.expected.at("H[2<-1]"), 1e-9);
        EXPECT_EQ(rep.rho, sc.expected.at("rho"));
    }
    EXPECT_THROW(scenario_sleepy(1.1), InvalidArgument);
    EXPECT_THROW(scenario_sleepy(-0.1), InvalidArgument);
}

TEST(LeaderFollower, ExpectedTableReproduced) {
    const auto sc = scenario_leader_follower();
    const auto ev = evaluate_policy(sc.mdp, sc.policy, 2);
    EXPECT_EQ(ev.influence.E_s(1, 0), sc.expected.at("E_s[2<-1]"));
    EXPECT_EQ(ev.influence.C(1, 0), sc.expected.at("C[2<-1]"));
    EXPECT_EQ(ev.influence.H(1, 0), sc.expected.at("H[2<-1]"));
    EXPECT_EQ(ev.certificate.certified() ? 1.0 : 0.0, sc.expected.at("certified"));
}

TEST(HubSpoke, ExpectedTableReproduced) {
    for (int n : {3, 4, 5})
        for (double beta : {0.0, 0.5, 1.0})
            for (double tau : {1.0, 2.0, 4.0}) {
                const auto sc = scenario_hub_spoke(n, beta, tau);
                EXPECT_TRUE(validate(sc.mdp, sc.policy).ok());
                const auto rep = influence_report(sc.mdp, sc.policy);
                EXPECT_TRUE(rep.E_s.isZero(0.0));
                for (Eigen::Index j = 1; j < n; ++j) {
                    EXPECT_EQ(rep.E_a(j, 0), sc.expected.at("E_a[j<-1]"));
                    EXPECT_NEAR(rep.Pi(0, j), sc.expected.at("Pi[1<-i]"), 1e-12);
                }
                EXPECT_NEAR(rep.rho, sc.expected.at("rho"), 1e-9);
                EXPECT_LE(rep.rho, sc.expected.at("rho_bound") + 1e-9);
                EXPECT_NEAR(inf_norm(action_supremum_influence(sc.mdp)), sc.expected.at("baseline_inf_norm"), 1e-12);
                if (beta == 0.0) {
                    EXPECT_EQ(rep.rho, 0.0);
                }
            }
    const auto sc = scenario_hub_spoke(3, 1.0, 2.0);
    EXPECT_DOUBLE_EQ(sc.expected.at("rho_bound"), 0.5);
    EXPECT_THROW(scenario_hub_spoke(2, 1.0, 1.0), InvalidArgument);
    EXPECT_THROW(scenario_hub_spoke(3, 1.0, 0.0), InvalidArgument);
}

TEST(MakeScenario, NamesDefaultsAndErrors) {
    for (const auto& name : scenario_names())
        EXPECT_NO_THROW(make_scenario(name, {}));
    EXPECT_EQ(make_scenario("sleepy", {}).params.at("alpha"), 0.3);
    EXPECT_EQ(make_scenario("hub-spoke", {{"n", 4}}).mdp.agents(), 4u);
    EXPECT_THROW(make_scenario("nope", {}), InvalidArgument);
    EXPECT_THROW(make_scenario("sleepy", {{"beta", 1.0}}), InvalidArgument);
    EXPECT_THROW(make_scenario("hub-spoke", {{"n", 3.5}}), InvalidArgument);
    EXPECT_THROW(make_scenario("random", {{"seed", -1.0}}), InvalidArgument);
    const auto a = make_scenario("random", {{"seed", 9.0}});
    const auto b = random_instance(9);
    EXPECT_EQ(a.mdp.reward_table(), b.mdp.reward_table());
}
