#pragma once

#include "loclab/mdp.hpp"
#include "loclab/rng.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace loclab {

/// A named instance with the quantities it is built to exhibit.
struct Scenario {
    std::string name;
    std::map<std::string, double> params;
    FactoredMDP mdp;
    ProductPolicy policy;
    std::optional<SoftmaxPolicy> softmax;   ///< set when `policy` is a materialized softmax
    std::map<std::string, double> expected;
};

namespace detail {

inline std::vector<double> reward_from_state(const ProductSpace& S, const ProductSpace& A,
                                             double (*f)(const std::vector<int>&)) {
    std::vector<double> r(S.size() * A.size());
    for (std::size_t s = 0; s < S.size(); ++s) {
        const double v = f(S.decode(s));
        for (std::size_t a = 0; a < A.size(); ++a)
            r[s * A.size() + a] = v;
    }
    return r;
}

inline KernelFactor uniform_factor(int m) {
    return {{}, {}, std::vector<double>(static_cast<std::size_t>(m), 1.0 / m), std::nullopt, std::nullopt};
}

/// Binary factor whose next value copies one state or action coordinate.
inline KernelFactor copy_factor(Scope state_scope, Scope action_scope) {
    return {std::move(state_scope), std::move(action_scope), {1.0, 0.0, 0.0, 1.0}, std::nullopt, std::nullopt};
}

} // namespace detail

/// Two binary agents. s_1 is redrawn uniformly; s_2 copies a_1. Agent 1 plays
/// a_1 = 1 with probability 1/2 -+ alpha/2 at s_1 = 0 / 1; agent 2 is uniform
/// and blind. Reward s_2.
inline Scenario scenario_sleepy(double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw InvalidArgument("sleepy: alpha must lie in [0, 1]");
    Scenario sc;
    sc.name = "sleepy";
    sc.params = {{"alpha", alpha}};
    const std::vector<int> two{2, 2};
    std::vector<KernelFactor> kernels{detail::uniform_factor(2), detail::copy_factor({}, {0})};
    const ProductSpace S(two), A(two);
    sc.mdp = FactoredMDP(two, two, std::move(kernels),
                         detail::reward_from_state(S, A, [](const std::vector<int>& s) { return double(s[1]); }));
    PolicyLayout layout(S, two, {{0}, {}});
    const double lo = 0.5 - alpha / 2.0, hi = 0.5 + alpha / 2.0;
    sc.policy = ProductPolicy(layout, {{hi, lo, lo, hi}, {0.5, 0.5}});
    sc.expected = {{"E_a[2<-1]", 1.0}, {"Pi[1<-1]", alpha}, {"C[2<-1]", alpha}, {"H[2<-1]", alpha}, {"rho", 0.0}};
    return sc;
}

/// Two binary agents. s_1 is redrawn uniformly and s_2 copies s_1 whatever
/// anyone does. Reward s_2, uniform blind policy.
inline Scenario scenario_leader_follower() {
    Scenario sc;
    sc.name = "leader-follower";
    const std::vector<int> two{2, 2};
    std::vector<KernelFactor> kernels{detail::uniform_factor(2), detail::copy_factor({0}, {})};
    const ProductSpace S(two), A(two);
    sc.mdp = FactoredMDP(two, two, std::move(kernels),
                         detail::reward_from_state(S, A, [](const std::vector<int>& s) { return double(s[1]); }));
    sc.policy = uniform_policy(PolicyLayout(S, two, {{}, {}}));
    sc.expected = {{"E_s[2<-1]", 1.0}, {"C[2<-1]", 1.0}, {"H[2<-1]", 1.0}, {"certified", 0.0}};
    return sc;
}

/// Hub g_1(s, 1) = beta * parity(s), g_1(s, 0) = 0 over the full state, so
/// every one-coordinate flip moves the logit by exactly beta. Spokes copy the
/// hub's action and act uniformly; the hub's own state is redrawn uniformly.
/// Reward is the mean of the state bits.
inline Scenario scenario_hub_spoke(int n, double beta, double tau) {
    if (n < 3)
        throw InvalidArgument("hub-spoke: need n >= 3");
    if (!(tau > 0.0))
        throw InvalidArgument("hub-spoke: temperature must be positive");
    if (!(beta >= 0.0) || !std::isfinite(beta))
        throw InvalidArgument("hub-spoke: beta must be finite and nonnegative");
    Scenario sc;
    sc.name = "hub-spoke";
    sc.params = {{"n", n}, {"beta", beta}, {"tau", tau}};
    const std::vector<int> bits(static_cast<std::size_t>(n), 2);
    std::vector<KernelFactor> kernels{detail::uniform_factor(2)};
    for (int j = 1; j < n; ++j)
        kernels.push_back(detail::copy_factor({}, {0}));
    const ProductSpace S(bits), A(bits);
    sc.mdp = FactoredMDP(bits, bits, std::move(kernels), detail::reward_from_state(S, A, [](const std::vector<int>& s) {
                             double acc = 0.0;
                             for (int v : s)
                                 acc += v;
                             return acc / static_cast<double>(s.size());
                         }));
    std::vector<Scope> scopes(static_cast<std::size_t>(n));
    scopes[0] = full_scope(static_cast<std::size_t>(n));
    PolicyLayout layout(S, bits, scopes);
    SoftmaxPolicy sp{layout, {}, tau};
    sp.logits.resize(static_cast<std::size_t>(n));
    for (std::size_t s = 0; s < S.size(); ++s) {
        int parity = 0;
        for (int v : S.decode(s))
            parity ^= v;
        sp.logits[0].push_back(0.0);
        sp.logits[0].push_back(beta * parity);
    }
    for (int k = 1; k < n; ++k)
        sp.logits[static_cast<std::size_t>(k)] = {0.0, 0.0};
    sc.policy = materialize_softmax(sp);
    sc.softmax = std::move(sp);
    const double pi_entry = 1.0 / (1.0 + std::exp(-beta / tau)) - 0.5;
    sc.expected = {{"E_a[j<-1]", 1.0},
                   {"Pi[1<-i]", pi_entry},
                   {"rho", (n - 1) * pi_entry},
                   {"rho_bound", (n - 1) * beta / (2.0 * tau)},
                   {"baseline_inf_norm", 1.0}};
    return sc;
}

struct RandomInstanceOptions {
    int n = 3;
    int state_size = 2;
    int action_size = 2;
    int scope_radius = 1;
    /// Weight of the state/action dependent part of every transition row; 0
    /// gives rows that ignore (s, a), 1 gives fully random rows.
    double coupling = 1.0;
    double tau = 1.0;
};

/// Agents 0..n-1 on a ring; agent j's kernel and policy read the radius-r
/// neighbourhood. Draw order from SplitMix64(seed): for each agent its base
/// row then every stored table row (entries uniform on (0,1], normalized),
/// then rewards uniform on [0,1], then logits uniform on [-1,1].
inline Scenario random_instance(std::uint64_t seed, const RandomInstanceOptions& opt = {},
                                const Limits& limits = {}) {
    if (opt.n < 1 || opt.state_size < 1 || opt.action_size < 1 || opt.scope_radius < 0)
        throw InvalidArgument("random_instance: sizes must be positive and the radius nonnegative");
    if (!(opt.coupling >= 0.0 && opt.coupling <= 1.0))
        throw InvalidArgument("random_instance: coupling must lie in [0, 1]");
    if (!(opt.tau > 0.0))
        throw InvalidArgument("random_instance: temperature must be positive");
    if (opt.n * std::log2(std::max(opt.state_size, opt.action_size)) > 50.0)
        throw CapExceeded("random_instance: joint spaces too large to enumerate");
    const auto n = static_cast<std::size_t>(opt.n);
    std::vector<Scope> hoods(n);
    for (int j = 0; j < opt.n; ++j)
        for (int i = 0; i < opt.n; ++i) {
            const int d = std::abs(i - j);
            if (std::min(d, opt.n - d) <= opt.scope_radius)
                hoods[static_cast<std::size_t>(j)].push_back(i);
        }
    const std::vector<int> ss(n, opt.state_size), as(n, opt.action_size);
    const ProductSpace S(ss), A(as);
    const double probe = static_cast<double>(S.size()) * static_cast<double>(std::max(S.size(), A.size()));
    if (probe > static_cast<double>(limits.max_evaluations))
        throw CapExceeded("random_instance: " + std::to_string(static_cast<long long>(probe)) +
                          " evaluations exceed the cap of " + std::to_string(limits.max_evaluations));

    SplitMix64 rng(seed);
    auto draw_row = [&](std::size_t m) {
        std::vector<double> row(m);
        double z = 0.0;
        for (auto& v : row)
            z += (v = rng.uniform_positive());
        for (auto& v : row)
            v /= z;
        return row;
    };

    std::vector<KernelFactor> kernels;
    for (std::size_t j = 0; j < n; ++j) {
        const auto m = static_cast<std::size_t>(opt.state_size);
        const auto base = draw_row(m);
        KernelFactor f{hoods[j], hoods[j], {}, std::nullopt, std::nullopt};
        const std::size_t rows = ScopeIndexer(S, hoods[j]).size() * ScopeIndexer(A, hoods[j]).size();
        f.table.reserve(rows * m);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto q = draw_row(m);
            for (std::size_t y = 0; y < m; ++y)
                f.table.push_back((1.0 - opt.coupling) * base[y] + opt.coupling * q[y]);
        }
        kernels.push_back(std::move(f));
    }
    std::vector<double> reward(S.size() * A.size());
    for (auto& v : reward)
        v = rng.uniform();

    Scenario sc;
    sc.name = "random";
    sc.params = {{"seed", static_cast<double>(seed)},     {"n", opt.n},
                 {"states", opt.state_size},               {"actions", opt.action_size},
                 {"radius", opt.scope_radius},             {"coupling", opt.coupling},
                 {"tau", opt.tau}};
    sc.mdp = FactoredMDP(ss, as, std::move(kernels), std::move(reward));
    PolicyLayout layout(S, as, hoods);
    SoftmaxPolicy sp{layout, {}, opt.tau};
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> g(layout.table_size(k));
        for (auto& v : g)
            v = rng.uniform(-1.0, 1.0);
        sp.logits.push_back(std::move(g));
    }
    sc.policy = materialize_softmax(sp);
    sc.softmax = std::move(sp);
    return sc;
}

inline const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> names{"sleepy", "leader-follower", "hub-spoke", "random"};
    return names;
}

/// Builds a scenario by name from key=value parameters. Unknown names and
/// unknown parameters throw InvalidArgument.
inline Scenario make_scenario(const std::string& name, const std::map<std::string, double>& params,
                              const Limits& limits = {}) {
    auto take = [&](std::initializer_list<const char*> allowed) {
        for (const auto& [k, v] : params) {
            bool ok = false;
            for (const char* a : allowed)
                ok = ok || k == a;
            if (!ok)
                throw InvalidArgument("scenario " + name + ": unknown parameter '" + k + "'");
        }
    };
    auto get = [&](const char* key, double fallback) {
        const auto it = params.find(key);
        return it == params.end() ? fallback : it->second;
    };
    auto get_int = [&](const char* key, int fallback) {
        const double v = get(key, fallback);
        if (v != std::floor(v) || std::abs(v) > 1e9)
            throw InvalidArgument(std::string("parameter ") + key + " must be an integer");
        return static_cast<int>(v);
    };
    if (name == "sleepy") {
        take({"alpha"});
        return scenario_sleepy(get("alpha", 0.3));
    }
    if (name == "leader-follower") {
        take({});
        return scenario_leader_follower();
    }
    if (name == "hub-spoke") {
        take({"n", "beta", "tau"});
        return scenario_hub_spoke(get_int("n", 3), get("beta", 1.0), get("tau", 2.0));
    }
    if (name == "random") {
        take({"seed", "n", "states", "actions", "radius", "coupling", "tau"});
        RandomInstanceOptions opt;
        opt.n = get_int("n", opt.n);
        opt.state_size = get_int("states", opt.state_size);
        opt.action_size = get_int("actions", opt.action_size);
        opt.scope_radius = get_int("radius", opt.scope_radius);
        opt.coupling = get("coupling", opt.coupling);
        opt.tau = get("tau", opt.tau);
        const double seed = get("seed", 1.0);
        if (seed < 0.0 || seed != std::floor(seed) || seed > 9007199254740992.0)
            throw InvalidArgument("parameter seed must be a nonnegative integer");
        return random_instance(static_cast<std::uint64_t>(seed), opt, limits);
    }
    throw InvalidArgument("unknown scenario '" + name + "'");
}

} // namespace loclab
