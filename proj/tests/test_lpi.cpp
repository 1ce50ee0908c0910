#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace loclab;

namespace {

Scenario rnd(std::uint64_t seed, int n = 3, int ss = 2, int as = 2, double coupling = 1.0, double tau = 1.0) {
    RandomInstanceOptions opt;
    opt.n = n;
    opt.state_size = ss;
    opt.action_size = as;
    opt.coupling = coupling;
    opt.tau = tau;
    return random_instance(seed, opt);
}

FactoredMDP with_reward(const FactoredMDP& m, std::vector<double> reward) {
    return FactoredMDP(m.states().extents(), m.actions().extents(), m.kernels(), std::move(reward));
}

FactoredMDP constant_reward(const FactoredMDP& m, double c) {
    return with_reward(m, std::vector<double>(m.reward_table().size(), c));
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

} // namespace

TEST(Advantage, ConstantRewardIsZero) {
    const auto sc = rnd(4);
    const auto mdp = constant_reward(sc.mdp, 0.4);
    const auto sol = solve_poisson(induced_kernel(mdp, sc.policy), policy_reward(mdp, sc.policy));
    EXPECT_LE(max_abs(exact_advantage(mdp, sc.policy, sol).values), 1e-14);
}

TEST(Advantage, SingleStateIsRewardMinusMean) {
    KernelFactor f{{}, {}, {1.0}, std::nullopt, std::nullopt};
    FactoredMDP m({1}, {3}, {f}, {0.2, 0.5, 1.1});
    ProductPolicy pi(PolicyLayout(m.states(), {3}, {{}}), {{0.5, 0.25, 0.25}});
    const auto sol = solve_poisson(induced_kernel(m, pi), policy_reward(m, pi));
    const double rbar = 0.5 * 0.2 + 0.25 * 0.5 + 0.25 * 1.1;
    EXPECT_NEAR(sol.rbar, rbar, 1e-15);
    const auto adv = exact_advantage(m, pi, sol);
    EXPECT_NEAR(adv(0, 2), 1.1 - rbar, 1e-15);
    EXPECT_NEAR(policy_mean_residual(pi, adv), 0.0, 1e-15);
}

TEST(Advantage, MatchesOracleAndHasPolicyMeanZero) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto sc = rnd(seed, 2 + static_cast<int>(seed % 2), 2, 2 + static_cast<int>(seed % 2));
        const auto sol = solve_poisson(induced_kernel(sc.mdp, sc.policy), policy_reward(sc.mdp, sc.policy));
        const auto adv = exact_advantage(sc.mdp, sc.policy, sol);
        EXPECT_EQ(adv.flavor, AdvantageTable::Flavor::exact);
        EXPECT_LE(max_abs(adv.values - oracle::advantage(sc.mdp, sol.h, sol.rbar)), 1e-12) << seed;
        EXPECT_LE(policy_mean_residual(sc.policy, adv), 1e-9) << seed;
    }
}

TEST(Advantage, SurrogateIsShiftInvariantAndClose) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto sc = rnd(seed, 3, 2, 2, 0.4);
        for (int kappa : {0, 1, 3}) {
            const auto ev = evaluate_policy(sc.mdp, sc.policy, kappa);
            const auto sur = surrogate_advantage(sc.mdp, sc.policy, ev.certificate, ev.poisson.rbar);
            EXPECT_EQ(sur.flavor, AdvantageTable::Flavor::surrogate);
            const StateFunction shifted = ev.certificate.h_hat.array() + 2.5;
            const auto sur2 = advantage_from_values(sc.mdp, shifted, ev.poisson.rbar, AdvantageTable::Flavor::surrogate);
            EXPECT_LE(max_abs(sur.values - sur2.values), 1e-13);
            const auto ex = exact_advantage(sc.mdp, sc.policy, ev.poisson);
            const double gap = aligned_sup_distance(ev.certificate.h_hat, ev.poisson.h);
            EXPECT_LE(max_abs(sur.values - ex.values), 2.0 * gap + 1e-9) << seed << " kappa " << kappa;
        }
    }
}

TEST(Advantage, SurrogateIsExactOnNilpotentSleepy) {
    const auto sc = scenario_sleepy(0.7);
    const auto ev = evaluate_policy(sc.mdp, sc.policy, 2);
    const auto sur = surrogate_advantage(sc.mdp, sc.policy, ev.certificate, ev.poisson.rbar);
    const auto ex = exact_advantage(sc.mdp, sc.policy, ev.poisson);
    EXPECT_LE(max_abs(sur.values - ex.values), 1e-14);
}

TEST(LocalLogits, MatchOracleAndSingleAgent) {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        const auto sc = rnd(seed, 3, 2, 2 + static_cast<int>(seed % 2));
        const auto sol = solve_poisson(induced_kernel(sc.mdp, sc.policy), policy_reward(sc.mdp, sc.policy));
        const auto adv = exact_advantage(sc.mdp, sc.policy, sol);
        for (std::size_t k = 0; k < 3; ++k)
            EXPECT_LE(max_abs(expected_local_logits(sc.mdp, sc.policy, adv, k) -
                              oracle::local_logits(sc.mdp, sc.policy, adv.values, k)),
                      1e-13);
    }
    const auto one = rnd(3, 1, 3, 2);
    const auto sol = solve_poisson(induced_kernel(one.mdp, one.policy), policy_reward(one.mdp, one.policy));
    const auto adv = exact_advantage(one.mdp, one.policy, sol);
    EXPECT_TRUE(expected_local_logits(one.mdp, one.policy, adv, 0) == adv.values);
    EXPECT_THROW(expected_local_logits(one.mdp, one.policy, adv, 1), InvalidArgument);
}

TEST(LocalLogits, ProjectionOnFullScopeIsIdentity) {
    const auto sc = scenario_hub_spoke(3, 1.0, 2.0);
    Eigen::MatrixXd g(8, 2);
    SplitMix64 rng(4);
    for (auto& v : g.reshaped())
        v = rng.uniform(-1, 1);
    const auto loc = project_logits(sc.policy.layout, 0, g, Eigen::VectorXd::Constant(8, 0.125));
    EXPECT_TRUE(loc.table.isApprox(g, 1e-15));
    EXPECT_EQ(loc.scope_residual, 0.0);
    // Blind spoke: one row, the weighted mean.
    const auto blind = project_logits(sc.policy.layout, 1, g, Eigen::VectorXd::Constant(8, 0.125));
    EXPECT_EQ(blind.table.rows(), 1);
    EXPECT_TRUE(blind.table.row(0).isApprox(g.colwise().mean(), 1e-15));
}

TEST(KlProx, ClosedFormCases) {
    const std::vector<double> q{0.5, 0.5}, g{1.0, 0.0}, zero{0.0, 0.0};
    const auto p = kl_prox_row(q, g, 1.0);
    EXPECT_NEAR(p[0], std::exp(1.0) / (1.0 + std::exp(1.0)), 1e-15);
    EXPECT_NEAR(p[0], 0.7311, 1e-4);
    EXPECT_NEAR(p[1], 0.2689, 1e-4);
    const auto same = kl_prox_row(q, zero, 1.0);
    EXPECT_NEAR(same[0], 0.5, 1e-15);
    const auto damped = kl_prox_row(q, g, 1e6);
    EXPECT_NEAR(damped[0], 0.5, 1e-5);
    EXPECT_THROW(kl_prox_row(q, g, 0.0), InvalidArgument);
    EXPECT_THROW(kl_prox_row(q, std::vector<double>{1.0}, 1.0), DimensionError);
    EXPECT_THROW(kl_prox_row(zero, g, 1.0), InvalidArgument);
}

TEST(KlProx, ZeroSupportIsAbsorbing) {
    const std::vector<double> q{0.0, 0.3, 0.7}, g{50.0, 0.0, 1.0};
    const auto p = kl_prox_row(q, g, 0.1);
    EXPECT_EQ(p[0], 0.0);
    EXPECT_NEAR(p[1] + p[2], 1.0, 1e-15);
}

TEST(KlProx, UpdatesCompose) {
    SplitMix64 rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 2 + rng.below(3);
        std::vector<double> q(m), g1(m), g2(m), gs(m);
        double z = 0;
        for (std::size_t a = 0; a < m; ++a) {
            z += (q[a] = rng.uniform_positive());
            g1[a] = rng.uniform(-3, 3);
            g2[a] = rng.uniform(-3, 3);
            gs[a] = g1[a] + g2[a];
        }
        for (auto& v : q)
            v /= z;
        const double tau = 0.5 + rng.uniform();
        const auto two = kl_prox_row(kl_prox_row(q, g1, tau), g2, tau);
        const auto one = kl_prox_row(q, gs, tau);
        for (std::size_t a = 0; a < m; ++a)
            EXPECT_NEAR(two[a], one[a], 1e-12);
    }
}

TEST(KlProx, TableUpdate) {
    const std::vector<double> table{0.5, 0.5, 0.2, 0.8};
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(2, 2);
    const auto out = kl_prox_update(table, g, 1.0);
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_NEAR(out[i], table[i], 1e-15);
    EXPECT_THROW(kl_prox_update(table, Eigen::MatrixXd::Zero(3, 2), 1.0), DimensionError);
}

TEST(KlDivergence, SentinelAndBasics) {
    const std::vector<double> p{0.5, 0.5}, q{1.0, 0.0};
    EXPECT_TRUE(std::isinf(kl_divergence(p, q)));
    EXPECT_EQ(kl_divergence(q, p), std::log(2.0));
    EXPECT_EQ(kl_divergence(p, p), 0.0);
}

TEST(ProxDuality, ValueAndGridSearch) {
    const std::vector<double> q{0.5, 0.5}, g{1.0, 0.0};
    const auto pd = prox_duality_value(q, g, 1.0);
    EXPECT_NEAR(pd.value, std::log((std::exp(1.0) + 1.0) / 2.0), 1e-15);
    EXPECT_NEAR(pd.value, 0.6201, 1e-4);
    EXPECT_NEAR(pd.primal, pd.value, 1e-12);

    const std::vector<double> c{0.7, 0.7};
    const auto flat = prox_duality_value(q, c, 0.3);
    EXPECT_NEAR(flat.value, 0.7, 1e-15);
    EXPECT_NEAR(flat.maximizer[0], 0.5, 1e-15);

    SplitMix64 rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t m = 2 + rng.below(2);
        std::vector<double> qq(m), gg(m);
        double z = 0;
        for (std::size_t a = 0; a < m; ++a) {
            z += (qq[a] = rng.uniform_positive());
            gg[a] = rng.uniform(-2, 2);
        }
        for (auto& v : qq)
            v /= z;
        const double tau = 0.2 + rng.uniform();
        const auto r = prox_duality_value(qq, gg, tau);
        EXPECT_NEAR(r.primal, r.value, 1e-10);
        double qg = 0;
        for (std::size_t a = 0; a < m; ++a)
            qg += qq[a] * gg[a];
        EXPECT_GE(r.value, qg - 1e-15);
        EXPECT_GE(r.gain, tau * r.kl - 1e-12);
        auto primal = [&](const std::vector<double>& p) {
            double v = 0;
            for (std::size_t a = 0; a < m; ++a)
                v += p[a] * gg[a];
            return v - tau * kl_divergence(p, qq);
        };
        const int steps = m == 2 ? 20000 : 400;
        double best = -1e300;
        for (int i = 0; i <= steps; ++i) {
            if (m == 2) {
                const double x = static_cast<double>(i) / steps;
                best = std::max(best, primal({x, 1.0 - x}));
            } else {
                for (int j = 0; i + j <= steps; ++j) {
                    const double x = static_cast<double>(i) / steps, y = static_cast<double>(j) / steps;
                    best = std::max(best, primal({x, y, std::max(0.0, 1.0 - x - y)}));
                }
            }
        }
        EXPECT_LE(best, r.value + 1e-10);
        EXPECT_GE(best, r.value - (m == 2 ? 1e-6 : 1e-3));
    }
}

TEST(Objectives, MatchOracles) {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const auto a = rnd(seed, 2, 2, 2);
        const auto b = rnd(seed + 100, 2, 2, 2);
        for (double tau : {0.0, 0.5, 2.0}) {
            EXPECT_NEAR(kl_anchored_objective(a.mdp, b.policy, a.policy, tau),
                        oracle::anchored_objective(a.mdp, b.policy, a.policy, tau), 1e-9);
            EXPECT_NEAR(entropy_objective(a.mdp, a.policy, tau), oracle::entropy_objective(a.mdp, a.policy, tau),
                        1e-9);
        }
        const double rbar = average_reward(a.mdp, a.policy);
        EXPECT_DOUBLE_EQ(kl_anchored_objective(a.mdp, a.policy, a.policy, 3.0), rbar);
        EXPECT_DOUBLE_EQ(kl_anchored_objective(a.mdp, b.policy, a.policy, 0.0), average_reward(a.mdp, b.policy));
    }
}

TEST(Objectives, DeterministicAndUniformPolicies) {
    const auto sc = rnd(7, 2, 2, 3);
    const auto& lay = sc.policy.layout;
    std::vector<std::vector<double>> tabs;
    for (std::size_t k = 0; k < lay.agents(); ++k) {
        std::vector<double> t(lay.table_size(k), 0.0);
        for (std::size_t r = 0; r < lay.rows(k); ++r)
            t[r * 3 + r % 3] = 1.0;
        tabs.push_back(t);
    }
    const ProductPolicy det(lay, tabs);
    EXPECT_NEAR(entropy_objective(sc.mdp, det, 1.7), average_reward(sc.mdp, det), 1e-15);
    const auto uni = uniform_policy(lay);
    EXPECT_NEAR(entropy_objective(sc.mdp, uni, 0.5), average_reward(sc.mdp, uni) + 0.5 * 2 * std::log(3.0), 1e-12);
    EXPECT_THROW(entropy_objective(sc.mdp, uni, -1.0), InvalidArgument);
}

TEST(Objectives, InfiniteKlIsReportedNotThrown) {
    const auto sc = rnd(5, 2, 2, 2);
    auto anchor = sc.policy;
    for (std::size_t r = 0; r < anchor.layout.rows(0); ++r) {
        anchor.tables[0][r * 2] = 1.0;
        anchor.tables[0][r * 2 + 1] = 0.0;
    }
    EXPECT_TRUE(std::isinf(kl_anchored_objective(sc.mdp, sc.policy, anchor, 1.0)));
}

TEST(BlockCheck, ConstantRewardIsFixedPoint) {
    const auto sc = rnd(2);
    const auto mdp = constant_reward(sc.mdp, 0.3);
    for (std::size_t k = 0; k < 3; ++k) {
        const auto rec = block_improvement_check(mdp, sc.policy, k, 1, 1.0);
        for (std::size_t i = 0; i < rec.old_table.size(); ++i)
            EXPECT_NEAR(rec.new_table[i], rec.old_table[i], 1e-12);
        EXPECT_NEAR(rec.improvement_lhs, 0.0, 1e-12);
        EXPECT_LE(rec.improvement_rhs, 1e-12);
        EXPECT_GE(rec.slack(), -1e-9);
    }
}

TEST(BlockCheck, SleepyIsExactAndImproves) {
    const auto sc = scenario_sleepy(0.3);
    for (double tau : {0.1, 1.0, 10.0}) {
        const auto rec = block_improvement_check(sc.mdp, sc.policy, 0, 1, tau);
        EXPECT_LE(rec.truncation_penalty, 1e-12);
        EXPECT_GE(rec.improvement_lhs, tau * rec.expected_kl - 1e-12);
        EXPECT_GT(rec.improvement_lhs, 0.0);
        for (double v : rec.kl_per_row)
            EXPECT_GE(v, 0.0);
    }
}

TEST(BlockCheck, RandomInstancesSatisfyInequality) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto sc = rnd(seed, 3, 2, 2, 0.5);
        for (double tau : {0.1, 1.0, 10.0})
            for (int kappa : {0, 1, 2})
                for (std::size_t k = 0; k < 3; ++k) {
                    const auto rec = block_improvement_check(sc.mdp, sc.policy, k, kappa, tau);
                    EXPECT_GE(rec.slack(), -1e-9) << seed << " " << tau << " " << kappa << " " << k;
                    EXPECT_TRUE(validate(apply_block_update(sc.policy, k, rec.local_logits, tau)).ok());
                }
    }
    const auto sc = rnd(1);
    EXPECT_THROW(block_improvement_check(sc.mdp, sc.policy, 3, 1, 1.0), InvalidArgument);
    EXPECT_THROW(block_improvement_check(sc.mdp, sc.policy, 0, 1, 0.0), InvalidArgument);
}

TEST(Iterate, ConstantRewardKeepsPolicy) {
    const auto sc = rnd(6);
    const auto mdp = constant_reward(sc.mdp, 1.0);
    const auto tr = lpi_iterate(mdp, sc.policy, 1, 1.0, 3);
    ASSERT_EQ(tr.snapshots.size(), 4u);
    for (const auto& snap : tr.snapshots)
        for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t i = 0; i < snap.tables[k].size(); ++i)
                EXPECT_NEAR(snap.tables[k][i], sc.policy.tables[k][i], 1e-12);
}

TEST(Iterate, SleepyAverageRewardIsMonotone) {
    const auto sc = scenario_sleepy(0.3);
    const auto tr = lpi_iterate(sc.mdp, sc.policy, 1, 1.0, 3);
    ASSERT_EQ(tr.iterations.size(), 3u);
    double prev = tr.iterations[0].rbar;
    for (std::size_t l = 1; l < tr.iterations.size(); ++l) {
        const double penalty = tr.iterations[l - 1].blocks[0].truncation_penalty;
        EXPECT_GE(tr.iterations[l].rbar, prev - penalty - 1e-12);
        prev = tr.iterations[l].rbar;
    }
    EXPECT_GE(tr.final_rbar, prev - 1e-12);
    for (const auto& it : tr.iterations) {
        EXPECT_LE(it.poisson_residual, 1e-9);
        EXPECT_NEAR(it.entropy_objective, oracle::entropy_objective(sc.mdp, tr.snapshots[it.index], 1.0), 1e-9);
    }
}

TEST(Iterate, SingleAgentMatchesHandRun) {
    // One agent, two states, two actions: action 1 moves toward state 1.
    KernelFactor f{{0}, {0}, {0.9, 0.1, 0.4, 0.6, 0.3, 0.7, 0.2, 0.8}, std::nullopt, std::nullopt};
    FactoredMDP m({2}, {2}, {f}, {0.0, 0.1, 1.0, 0.6});
    const ProductPolicy pi0(PolicyLayout(m.states(), {2}, {{0}}), {{0.5, 0.5, 0.5, 0.5}});
    const int kappa = 2;
    const double tau = 0.5;
    const auto tr = lpi_iterate(m, pi0, kappa, tau, 2);

    ProductPolicy pi = pi0;
    for (int l = 0; l < 2; ++l) {
        const auto P = oracle::induced_kernel(m, pi);
        const auto r = oracle::policy_reward(m, pi);
        const double rbar = oracle::stationary_power(P).dot(r);
        Eigen::VectorXd hhat = oracle::poisson_series(P, r, rbar, kappa);
        hhat.array() -= hhat(0);
        const auto adv = oracle::advantage(m, hhat, rbar);
        std::vector<double> next(4);
        for (int s = 0; s < 2; ++s) {
            double z = 0;
            for (int a = 0; a < 2; ++a)
                z += (next[static_cast<std::size_t>(2 * s + a)] =
                          pi.tables[0][static_cast<std::size_t>(2 * s + a)] * std::exp(adv(s, a) / tau));
            for (int a = 0; a < 2; ++a)
                next[static_cast<std::size_t>(2 * s + a)] /= z;
        }
        pi.tables[0] = next;
        EXPECT_NEAR(tr.iterations[static_cast<std::size_t>(l)].rbar, rbar, 1e-9);
        for (std::size_t i = 0; i < 4; ++i)
            EXPECT_NEAR(tr.snapshots[static_cast<std::size_t>(l + 1)].tables[0][i], next[i], 1e-9);
    }
}

TEST(Iterate, RejectsBadArguments) {
    const auto sc = rnd(1);
    EXPECT_THROW(lpi_iterate(sc.mdp, sc.policy, 1, 0.0, 1), InvalidArgument);
    EXPECT_THROW(lpi_iterate(sc.mdp, sc.policy, 1, 1.0, 0), InvalidArgument);
    EXPECT_THROW(lpi_iterate(sc.mdp, sc.policy, -1, 1.0, 1), InvalidArgument);
}

TEST(Iterate, ReducibleChainNamesIteration) {
    // The identity kernel has two closed classes.
    KernelFactor f{{0}, {}, {1.0, 0.0, 0.0, 1.0}, std::nullopt, std::nullopt};
    FactoredMDP m({2}, {2}, {f}, {0.0, 0.0, 1.0, 1.0});
    const auto pi = uniform_policy(PolicyLayout(m.states(), {2}, {{0}}));
    try {
        lpi_iterate(m, pi, 1, 1.0, 1);
        FAIL() << "no ChainError";
    } catch (const ChainError& e) {
        EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos);
    }
}

TEST(CyclicPass, SingleAgentReducesToBlockCheck) {
    const auto sc = rnd(3, 1, 3, 2);
    const auto rec = block_improvement_check(sc.mdp, sc.policy, 0, 1, 0.7);
    const auto cyc = cyclic_pass_check(sc.mdp, sc.policy, 1, 0.7);
    EXPECT_NEAR(cyc.lhs, rec.improvement_lhs, 1e-14);
    EXPECT_NEAR(cyc.rhs, rec.improvement_rhs, 1e-14);
}

TEST(CyclicPass, RandomInstancesAndConstantReward) {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        const auto sc = rnd(seed, 2, 2, 2);
        for (double tau : {0.1, 1.0, 10.0})
            for (int kappa : {0, 1, 2})
                EXPECT_GE(cyclic_pass_check(sc.mdp, sc.policy, kappa, tau).slack(), -1e-9) << seed;
    }
    const auto sc = rnd(2, 2, 2, 2);
    const auto flat = cyclic_pass_check(constant_reward(sc.mdp, 0.5), sc.policy, 1, 1.0);
    EXPECT_NEAR(flat.lhs, 0.0, 1e-12);
    EXPECT_LE(flat.rhs, 1e-12);
}
