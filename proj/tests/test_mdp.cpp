#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace loclab;

namespace {

Scenario small_random(std::uint64_t seed, int n = 3, int ss = 2, int as = 2, int radius = 1) {
    RandomInstanceOptions opt;
    opt.n = n;
    opt.state_size = ss;
    opt.action_size = as;
    opt.scope_radius = radius;
    return random_instance(seed, opt);
}

} // namespace

TEST(ProductSpace, EncodeDecodeRoundTrip) {
    ProductSpace S({2, 3, 4});
    EXPECT_EQ(S.size(), 24u);
    EXPECT_EQ(S.stride(0), 12u);
    EXPECT_EQ(S.stride(2), 1u);
    for (std::size_t x = 0; x < S.size(); ++x)
        EXPECT_EQ(S.encode(S.decode(x)), x);
    EXPECT_EQ(S.decode(23), (std::vector<int>{1, 2, 3}));
}

TEST(ProductSpace, WithDigitAndHamming) {
    ProductSpace S({3, 3});
    const auto x = S.encode(std::vector<int>{1, 2});
    const auto y = S.with_digit(x, 0, 2);
    EXPECT_EQ(S.decode(y), (std::vector<int>{2, 2}));
    EXPECT_EQ(S.hamming(x, y), 1u);
    EXPECT_EQ(S.hamming(x, x), 0u);
    EXPECT_EQ(S.hamming(S.encode(std::vector<int>{0, 0}), S.encode(std::vector<int>{2, 1})), 2u);
}

TEST(ProductSpace, RejectsEmptyCoordinate) { EXPECT_THROW(ProductSpace({2, 0}), InvalidArgument); }

TEST(ScopeIndexer, ProjectsInMixedRadixOrder) {
    ProductSpace S({2, 3, 2});
    ScopeIndexer ix(S, {0, 2});
    EXPECT_EQ(ix.size(), 4u);
    EXPECT_EQ(ix.project(std::vector<int>{1, 2, 1}), 3u);
    EXPECT_EQ(ix.position(2), 1);
    EXPECT_EQ(ix.position(1), -1);
    EXPECT_THROW(ScopeIndexer(S, {2, 0}), InvalidArgument);
    EXPECT_THROW(ScopeIndexer(S, {0, 0}), InvalidArgument);
    EXPECT_THROW(ScopeIndexer(S, {3}), InvalidArgument);
}

TEST(FactoredMDP, ShapeErrorsThrow) {
    KernelFactor ok{{}, {}, {0.5, 0.5}, std::nullopt, std::nullopt};
    EXPECT_THROW(FactoredMDP({2}, {2, 2}, {ok}, std::vector<double>(4, 0.0)), DimensionError);
    EXPECT_THROW(FactoredMDP({2}, {2}, {ok, ok}, std::vector<double>(4, 0.0)), DimensionError);
    EXPECT_THROW(FactoredMDP({2}, {2}, {ok}, std::vector<double>(3, 0.0)), DimensionError);
    KernelFactor short_table{{0}, {}, {0.5, 0.5}, std::nullopt, std::nullopt};
    EXPECT_THROW(FactoredMDP({2}, {2}, {short_table}, std::vector<double>(4, 0.0)), DimensionError);
    KernelFactor bad_decl{{}, {}, {0.5, 0.5}, Scope{0}, std::nullopt};
    EXPECT_THROW(FactoredMDP({2}, {2}, {bad_decl}, std::vector<double>(4, 0.0)), DimensionError);
    EXPECT_NO_THROW(FactoredMDP({2}, {2}, {ok}, std::vector<double>(4, 0.0)));
}

TEST(Validate, ReportsRowProblems) {
    KernelFactor f{{}, {}, {0.6, 0.5}, std::nullopt, std::nullopt};
    FactoredMDP m({2}, {1}, {f}, {0.0, 0.0});
    EXPECT_TRUE(validate(m).has(Violation::Kind::row_sum));

    f.table = {1.5, -0.5};
    EXPECT_TRUE(validate(FactoredMDP({2}, {1}, {f}, {0.0, 0.0})).has(Violation::Kind::negative_entry));

    f.table = {std::nan(""), 1.0};
    EXPECT_TRUE(validate(FactoredMDP({2}, {1}, {f}, {0.0, 0.0})).has(Violation::Kind::non_finite));

    f.table = {0.5, 0.5};
    EXPECT_TRUE(validate(FactoredMDP({2}, {1}, {f}, {0.0, std::numeric_limits<double>::infinity()}))
                    .has(Violation::Kind::non_finite));
    EXPECT_TRUE(validate(FactoredMDP({2}, {1}, {f}, {0.0, 1.0})).ok());
}

TEST(Validate, DetectsUndeclaredDependence) {
    // Stored over s_0 but declared independent of it; the rows differ.
    KernelFactor f{{0}, {}, {1.0, 0.0, 0.0, 1.0}, Scope{}, std::nullopt};
    FactoredMDP m({2}, {1}, {f}, {0.0, 0.0});
    const auto rep = validate(m);
    EXPECT_TRUE(rep.has(Violation::Kind::scope));
    // Same storage with identical rows satisfies the claim.
    f.table = {0.3, 0.7, 0.3, 0.7};
    EXPECT_TRUE(validate(FactoredMDP({2}, {1}, {f}, {0.0, 0.0})).ok());
}

TEST(Validate, PolicyMismatchIsDimensionViolation) {
    const auto sc = small_random(3);
    const auto other = small_random(3, 2);
    const auto rep = validate(sc.mdp, other.policy);
    EXPECT_TRUE(rep.has(Violation::Kind::dimension));
    EXPECT_THROW(induced_kernel(sc.mdp, other.policy), DimensionError);
}

TEST(InducedKernel, MatchesBruteForceAndIsStochastic) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto sc = small_random(seed, 1 + static_cast<int>(seed % 3), 2 + static_cast<int>(seed % 2), 2);
        const auto P = induced_kernel(sc.mdp, sc.policy);
        const auto Q = oracle::induced_kernel(sc.mdp, sc.policy);
        EXPECT_LE((P - Q).cwiseAbs().maxCoeff(), 1e-12) << "seed " << seed;
        for (Eigen::Index s = 0; s < P.rows(); ++s)
            EXPECT_NEAR(P.row(s).sum(), 1.0, 1e-12);
        EXPECT_TRUE(P == induced_kernel(sc.mdp, sc.policy)) << "not bitwise reproducible";
        EXPECT_LE((policy_reward(sc.mdp, sc.policy) - oracle::policy_reward(sc.mdp, sc.policy)).cwiseAbs().maxCoeff(),
                  1e-12);
    }
}

TEST(InducedKernel, SingleAgentDeterministicPolicyPicksRows) {
    // One agent, two states, two actions; action 0 stays, action 1 flips.
    KernelFactor f{{0}, {0}, {1, 0, 0, 1, 0, 1, 1, 0}, std::nullopt, std::nullopt};
    FactoredMDP m({2}, {2}, {f}, {0, 0, 0, 0});
    PolicyLayout layout(m.states(), {2}, {{0}});
    ProductPolicy pi(layout, {{0.0, 1.0, 1.0, 0.0}});
    const auto P = induced_kernel(m, pi);
    Eigen::Matrix2d expected;
    expected << 0, 1, 0, 1;
    EXPECT_TRUE(P.isApprox(expected));
}

TEST(InducedKernel, CapExceededThrows) {
    const auto sc = small_random(1);
    Limits tight;
    tight.max_evaluations = 10;
    EXPECT_THROW(induced_kernel(sc.mdp, sc.policy, tight), CapExceeded);
    EXPECT_THROW(env_state_sensitivity(sc.mdp, tight), CapExceeded);
}

TEST(NextStateMarginals, MatchBruteForce) {
    const auto sc = small_random(4, 3, 3, 2);
    const auto marg = next_state_marginals(sc.mdp, sc.policy);
    const auto P = oracle::induced_kernel(sc.mdp, sc.policy);
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t s = 0; s < sc.mdp.states().size(); ++s) {
            const auto m = oracle::marginal_pi(P, sc.mdp.states(), j, s);
            for (std::size_t y = 0; y < m.size(); ++y)
                EXPECT_NEAR(marg[j](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(y)), m[y], 1e-12);
        }
}

TEST(JointActionWeights, FormADistribution) {
    const auto sc = small_random(5, 3, 2, 3);
    std::vector<int> sd(3);
    for (std::size_t s = 0; s < sc.mdp.states().size(); ++s) {
        sc.mdp.states().decode(s, sd);
        const auto w = joint_action_weights(sc.policy, sd);
        double sum = 0.0;
        for (double v : w)
            sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Softmax, RowIsStableAndChecksTemperature) {
    const std::vector<double> big{1000.0, 1000.0};
    const auto p = softmax_row(big, 1.0);
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_THROW(softmax_row(big, 0.0), InvalidArgument);
    EXPECT_THROW(softmax_row(big, -1.0), InvalidArgument);
    const std::vector<double> g{1.0, 0.0};
    const auto q = softmax_row(g, 1.0);
    EXPECT_NEAR(q[0], std::exp(1.0) / (1.0 + std::exp(1.0)), 1e-15);
}

TEST(Softmax, MaterializeRejectsBadInput) {
    const auto sc = small_random(2);
    auto sp = *sc.softmax;
    sp.temperature = 0.0;
    EXPECT_THROW(materialize_softmax(sp), InvalidArgument);
    sp = *sc.softmax;
    sp.logits[0][0] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(materialize_softmax(sp), InvalidArgument);
    sp = *sc.softmax;
    sp.logits[0].pop_back();
    EXPECT_THROW(materialize_softmax(sp), DimensionError);
}

TEST(UniformPolicy, RowsAreUniform) {
    ProductSpace S({2, 3});
    const auto pi = uniform_policy(PolicyLayout(S, {3, 2}, {{1}, {}}));
    EXPECT_TRUE(validate(pi).ok());
    EXPECT_DOUBLE_EQ(pi.row(0, 2)[1], 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(pi.row(1, 0)[0], 0.5);
}
