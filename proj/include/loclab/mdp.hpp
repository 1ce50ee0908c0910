#pragma once

#include "loclab/errors.hpp"
#include "loclab/space.hpp"
#include "loclab/types.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace loclab {

/// Transition factor P_j(s'_j | s, a) of one agent, stored over a subset of
/// state and action coordinates. Rows are ordered scoped-state major,
/// scoped-action minor; each row is a distribution over S_j.
///
/// A factor may additionally declare a narrower dependency claim than its
/// storage (for instance a dense table that is meant to depend on a few
/// neighbours). validate() checks the claim; the sensitivity computations
/// trust it once validated.
struct KernelFactor {
    Scope state_scope;
    Scope action_scope;
    std::vector<double> table;
    std::optional<Scope> declared_state_scope;
    std::optional<Scope> declared_action_scope;

    const Scope& effective_state_scope() const { return declared_state_scope ? *declared_state_scope : state_scope; }
    const Scope& effective_action_scope() const { return declared_action_scope ? *declared_action_scope : action_scope; }
};

/// Finite factored MDP: n agents, per-agent state/action sets, product-form
/// transition P(s'|s,a) = prod_j P_j(s'_j|s,a) and a global reward r(s,a).
class FactoredMDP {
public:
    FactoredMDP() = default;

    /// `reward` is |S| * |A| long, indexed s * |A| + a. Shape errors throw
    /// DimensionError; stochasticity is checked by validate().
    FactoredMDP(std::vector<int> state_sizes, std::vector<int> action_sizes, std::vector<KernelFactor> kernels,
                std::vector<double> reward)
        : states_(state_sizes), actions_(action_sizes), kernels_(std::move(kernels)), reward_(std::move(reward)) {
        const std::size_t n = states_.rank();
        if (n == 0)
            throw DimensionError("at least one agent is required");
        if (actions_.rank() != n)
            throw DimensionError("state and action size lists differ in length");
        if (kernels_.size() != n)
            throw DimensionError("expected one kernel factor per agent");
        state_ix_.reserve(n);
        action_ix_.reserve(n);
        for (std::size_t j = 0; j < n; ++j) {
            const auto& k = kernels_[j];
            state_ix_.emplace_back(states_, k.state_scope);
            action_ix_.emplace_back(actions_, k.action_scope);
            const std::size_t rows = state_ix_[j].size() * action_ix_[j].size();
            if (k.table.size() != rows * static_cast<std::size_t>(states_.extent(j)))
                throw DimensionError("kernel " + std::to_string(j) + " table has " + std::to_string(k.table.size()) +
                                     " entries, expected " + std::to_string(rows * states_.extent(j)));
            // Declared scopes must be inside the storage scope.
            if (k.declared_state_scope) {
                ScopeIndexer check(states_, *k.declared_state_scope);
                for (int c : *k.declared_state_scope)
                    if (!state_ix_[j].contains(c))
                        throw DimensionError("declared state scope of kernel " + std::to_string(j) +
                                             " is not inside its storage scope");
            }
            if (k.declared_action_scope) {
                ScopeIndexer check(actions_, *k.declared_action_scope);
                for (int c : *k.declared_action_scope)
                    if (!action_ix_[j].contains(c))
                        throw DimensionError("declared action scope of kernel " + std::to_string(j) +
                                             " is not inside its storage scope");
            }
        }
        if (reward_.size() != states_.size() * actions_.size())
            throw DimensionError("reward table has " + std::to_string(reward_.size()) + " entries, expected " +
                                 std::to_string(states_.size() * actions_.size()));
    }

    std::size_t agents() const { return states_.rank(); }
    const ProductSpace& states() const { return states_; }
    const ProductSpace& actions() const { return actions_; }
    const std::vector<KernelFactor>& kernels() const { return kernels_; }
    const KernelFactor& kernel(std::size_t j) const { return kernels_[j]; }
    const ScopeIndexer& kernel_state_indexer(std::size_t j) const { return state_ix_[j]; }
    const ScopeIndexer& kernel_action_indexer(std::size_t j) const { return action_ix_[j]; }
    const std::vector<double>& reward_table() const { return reward_; }

    double reward(std::size_t s, std::size_t a) const { return reward_[s * actions_.size() + a]; }

    std::size_t kernel_row_index(std::size_t j, std::span<const int> s_digits, std::span<const int> a_digits) const {
        return state_ix_[j].project(s_digits) * action_ix_[j].size() + action_ix_[j].project(a_digits);
    }

    std::span<const double> kernel_row(std::size_t j, std::size_t row) const {
        const auto m = static_cast<std::size_t>(states_.extent(j));
        return {kernels_[j].table.data() + row * m, m};
    }

    std::span<const double> kernel_row(std::size_t j, std::span<const int> s_digits,
                                       std::span<const int> a_digits) const {
        return kernel_row(j, kernel_row_index(j, s_digits, a_digits));
    }

    /// P_j(y | s, a) for joint indices.
    double transition(std::size_t j, std::size_t s, std::size_t a, int y) const {
        const auto sd = states_.decode(s);
        const auto ad = actions_.decode(a);
        return kernel_row(j, sd, ad)[static_cast<std::size_t>(y)];
    }

    std::size_t evaluation_count() const {
        return states_.size() * std::max(actions_.size(), states_.size());
    }

    void check_cap(const Limits& limits) const {
        if (evaluation_count() > limits.max_evaluations)
            throw CapExceeded("instance needs " + std::to_string(evaluation_count()) +
                              " kernel evaluations, cap is " + std::to_string(limits.max_evaluations));
    }

private:
    ProductSpace states_;
    ProductSpace actions_;
    std::vector<KernelFactor> kernels_;
    std::vector<double> reward_;
    std::vector<ScopeIndexer> state_ix_;
    std::vector<ScopeIndexer> action_ix_;
};

/// Shared shape of product-form policies: agent k reads the state coordinates
/// in its observation scope O_k and emits a row over A_k.
class PolicyLayout {
public:
    PolicyLayout() = default;

    PolicyLayout(const ProductSpace& states, std::vector<int> action_sizes, std::vector<Scope> scopes)
        : states_(states), action_sizes_(std::move(action_sizes)) {
        if (action_sizes_.size() != states_.rank() || scopes.size() != states_.rank())
            throw DimensionError("policy layout needs one action size and one scope per agent");
        for (int m : action_sizes_)
            if (m < 1)
                throw InvalidArgument("action cardinality < 1");
        scopes_.reserve(scopes.size());
        for (auto& sc : scopes)
            scopes_.emplace_back(states_, std::move(sc));
    }

    std::size_t agents() const { return states_.rank(); }
    const ProductSpace& states() const { return states_; }
    int action_count(std::size_t k) const { return action_sizes_[k]; }
    const std::vector<int>& action_sizes() const { return action_sizes_; }
    const ScopeIndexer& scope(std::size_t k) const { return scopes_[k]; }
    std::size_t rows(std::size_t k) const { return scopes_[k].size(); }
    std::size_t row_of(std::size_t k, std::span<const int> s_digits) const { return scopes_[k].project(s_digits); }
    std::size_t table_size(std::size_t k) const { return rows(k) * static_cast<std::size_t>(action_sizes_[k]); }

    friend bool operator==(const PolicyLayout& a, const PolicyLayout& b) {
        if (!(a.states_ == b.states_) || a.action_sizes_ != b.action_sizes_)
            return false;
        for (std::size_t k = 0; k < a.scopes_.size(); ++k)
            if (a.scopes_[k].scope() != b.scopes_[k].scope())
                return false;
        return true;
    }

private:
    ProductSpace states_;
    std::vector<int> action_sizes_;
    std::vector<ScopeIndexer> scopes_;
};

/// pi(a|s) = prod_k pi_k(a_k | s_{O_k}). Table k holds rows(k) distributions
/// over A_k, one per projected state.
struct ProductPolicy {
    PolicyLayout layout;
    std::vector<std::vector<double>> tables;

    ProductPolicy() = default;
    ProductPolicy(PolicyLayout l, std::vector<std::vector<double>> t) : layout(std::move(l)), tables(std::move(t)) {
        if (tables.size() != layout.agents())
            throw DimensionError("policy needs one table per agent");
        for (std::size_t k = 0; k < tables.size(); ++k)
            if (tables[k].size() != layout.table_size(k))
                throw DimensionError("policy table " + std::to_string(k) + " has wrong length");
    }

    std::span<const double> row(std::size_t k, std::size_t local) const {
        const auto m = static_cast<std::size_t>(layout.action_count(k));
        return {tables[k].data() + local * m, m};
    }
    std::span<double> row(std::size_t k, std::size_t local) {
        const auto m = static_cast<std::size_t>(layout.action_count(k));
        return {tables[k].data() + local * m, m};
    }
    std::span<const double> row_at(std::size_t k, std::span<const int> s_digits) const {
        return row(k, layout.row_of(k, s_digits));
    }

    friend bool operator==(const ProductPolicy& a, const ProductPolicy& b) {
        return a.layout == b.layout && a.tables == b.tables;
    }
};

/// Temperature-tau softmax policy over per-agent logits g_k(s_{O_k}, a_k).
struct SoftmaxPolicy {
    PolicyLayout layout;
    std::vector<std::vector<double>> logits;
    double temperature = 1.0;
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct Violation {
    enum class Kind { row_sum, negative_entry, non_finite, scope, dimension };
    Kind kind;
    int agent = -1;
    std::size_t row = 0;
    std::string detail;
};

inline const char* to_string(Violation::Kind k) {
    switch (k) {
    case Violation::Kind::row_sum: return "row_sum";
    case Violation::Kind::negative_entry: return "negative_entry";
    case Violation::Kind::non_finite: return "non_finite";
    case Violation::Kind::scope: return "scope";
    case Violation::Kind::dimension: return "dimension";
    }
    return "unknown";
}

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    bool has(Violation::Kind k) const {
        return std::any_of(violations.begin(), violations.end(), [k](const Violation& v) { return v.kind == k; });
    }
};

inline constexpr double kStochasticTolerance = 1e-12;

namespace detail {

inline void check_rows(std::span<const double> table, std::size_t width, int agent, const char* what,
                       std::vector<Violation>& out) {
    const std::size_t rows = width ? table.size() / width : 0;
    for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        bool finite = true;
        bool negative = false;
        for (std::size_t c = 0; c < width; ++c) {
            const double v = table[r * width + c];
            finite = finite && std::isfinite(v);
            negative = negative || v < 0.0;
            sum += v;
        }
        if (!finite) {
            out.push_back({Violation::Kind::non_finite, agent, r, std::string(what) + " row has non-finite entries"});
            continue;
        }
        if (negative)
            out.push_back({Violation::Kind::negative_entry, agent, r, std::string(what) + " row has a negative entry"});
        if (std::abs(sum - 1.0) > kStochasticTolerance)
            out.push_back({Violation::Kind::row_sum, agent, r,
                           std::string(what) + " row sums to " + std::to_string(sum)});
    }
}

} // namespace detail

/// Lists every violated invariant of the MDP; an empty list certifies it.
inline ValidationReport validate(const FactoredMDP& mdp) {
    ValidationReport rep;
    for (std::size_t j = 0; j < mdp.agents(); ++j) {
        const auto& k = mdp.kernel(j);
        const auto width = static_cast<std::size_t>(mdp.states().extent(j));
        detail::check_rows(k.table, width, static_cast<int>(j), "kernel", rep.violations);

        if (!k.declared_state_scope && !k.declared_action_scope)
            continue;
        // Rows must not move when an undeclared storage coordinate changes.
        const auto& six = mdp.kernel_state_indexer(j);
        const auto& aix = mdp.kernel_action_indexer(j);
        const auto& decl_s = k.effective_state_scope();
        const auto& decl_a = k.effective_action_scope();
        const std::size_t na = aix.size();
        for (std::size_t ls = 0; ls < six.size(); ++ls) {
            for (std::size_t la = 0; la < na; ++la) {
                const std::size_t row = ls * na + la;
                auto check = [&](std::size_t other_row, int coord, const char* kind) {
                    auto r1 = mdp.kernel_row(j, row);
                    auto r2 = mdp.kernel_row(j, other_row);
                    for (std::size_t y = 0; y < width; ++y) {
                        if (std::abs(r1[y] - r2[y]) > kStochasticTolerance) {
                            rep.violations.push_back({Violation::Kind::scope, static_cast<int>(j), row,
                                                      std::string("kernel varies with undeclared ") + kind +
                                                          " coordinate " + std::to_string(coord)});
                            return;
                        }
                    }
                };
                for (std::size_t p = 0; p < six.scope().size(); ++p) {
                    const int c = six.scope()[p];
                    if (std::binary_search(decl_s.begin(), decl_s.end(), c))
                        continue;
                    const std::size_t pinned = six.local().with_digit(ls, p, 0);
                    if (pinned != ls)
                        check(pinned * na + la, c, "state");
                }
                for (std::size_t p = 0; p < aix.scope().size(); ++p) {
                    const int c = aix.scope()[p];
                    if (std::binary_search(decl_a.begin(), decl_a.end(), c))
                        continue;
                    const std::size_t pinned = aix.local().with_digit(la, p, 0);
                    if (pinned != la)
                        check(ls * na + pinned, c, "action");
                }
            }
        }
    }
    for (std::size_t i = 0; i < mdp.reward_table().size(); ++i)
        if (!std::isfinite(mdp.reward_table()[i]))
            rep.violations.push_back({Violation::Kind::non_finite, -1, i, "reward entry is not finite"});
    return rep;
}

inline ValidationReport validate(const ProductPolicy& pi) {
    ValidationReport rep;
    for (std::size_t k = 0; k < pi.layout.agents(); ++k)
        detail::check_rows(pi.tables[k], static_cast<std::size_t>(pi.layout.action_count(k)), static_cast<int>(k),
                           "policy", rep.violations);
    return rep;
}

/// MDP, policy, and their agreement on state/action shapes.
inline ValidationReport validate(const FactoredMDP& mdp, const ProductPolicy& pi) {
    auto rep = validate(mdp);
    auto prep = validate(pi);
    rep.violations.insert(rep.violations.end(), prep.violations.begin(), prep.violations.end());
    if (!(pi.layout.states() == mdp.states()) || pi.layout.action_sizes() != mdp.actions().extents())
        rep.violations.push_back({Violation::Kind::dimension, -1, 0, "policy shape does not match the MDP"});
    return rep;
}

inline void require_compatible(const FactoredMDP& mdp, const ProductPolicy& pi) {
    if (!(pi.layout.states() == mdp.states()) || pi.layout.action_sizes() != mdp.actions().extents())
        throw DimensionError("policy shape does not match the MDP");
}

// ---------------------------------------------------------------------------
// Policy-induced quantities
// ---------------------------------------------------------------------------

/// Joint action law pi(.|s) as a vector over the joint action space.
inline std::vector<double> joint_action_weights(const ProductPolicy& pi, std::span<const int> s_digits) {
    std::vector<double> w{1.0};
    for (std::size_t k = 0; k < pi.layout.agents(); ++k) {
        const auto row = pi.row_at(k, s_digits);
        std::vector<double> next(w.size() * row.size());
        for (std::size_t p = 0; p < w.size(); ++p)
            for (std::size_t b = 0; b < row.size(); ++b)
                next[p * row.size() + b] = w[p] * row[b];
        w = std::move(next);
    }
    return w;
}

/// P^pi(s'|s) = sum_a prod_j P_j(s'_j|s,a) prod_k pi_k(a_k|s_{O_k}).
inline StateKernel induced_kernel(const FactoredMDP& mdp, const ProductPolicy& pi, const Limits& limits = {}) {
    require_compatible(mdp, pi);
    mdp.check_cap(limits);
    const auto& S = mdp.states();
    const auto& A = mdp.actions();
    const std::size_t n = mdp.agents();
    StateKernel P = StateKernel::Zero(static_cast<Eigen::Index>(S.size()), static_cast<Eigen::Index>(S.size()));
    std::vector<int> sd(n), ad(n);
    std::vector<double> joint;
    for (std::size_t s = 0; s < S.size(); ++s) {
        S.decode(s, sd);
        const auto w = joint_action_weights(pi, sd);
        for (std::size_t a = 0; a < A.size(); ++a) {
            if (w[a] == 0.0)
                continue;
            A.decode(a, ad);
            joint.assign(1, 1.0);
            for (std::size_t j = 0; j < n; ++j) {
                const auto row = mdp.kernel_row(j, sd, ad);
                std::vector<double> next(joint.size() * row.size());
                for (std::size_t p = 0; p < joint.size(); ++p)
                    for (std::size_t y = 0; y < row.size(); ++y)
                        next[p * row.size() + y] = joint[p] * row[y];
                joint = std::move(next);
            }
            for (std::size_t t = 0; t < S.size(); ++t)
                P(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) += w[a] * joint[t];
        }
    }
    return P;
}

/// Per-agent policy-mixed next-state marginals P^pi_j(.|s), one |S| x |S_j| matrix per agent.
inline std::vector<Eigen::MatrixXd> next_state_marginals(const FactoredMDP& mdp, const ProductPolicy& pi,
                                                         const Limits& limits = {}) {
    require_compatible(mdp, pi);
    mdp.check_cap(limits);
    const auto& S = mdp.states();
    const auto& A = mdp.actions();
    const std::size_t n = mdp.agents();
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t j = 0; j < n; ++j)
        out.push_back(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(S.size()), S.extent(j)));
    std::vector<int> sd(n), ad(n);
    for (std::size_t s = 0; s < S.size(); ++s) {
        S.decode(s, sd);
        const auto w = joint_action_weights(pi, sd);
        for (std::size_t a = 0; a < A.size(); ++a) {
            if (w[a] == 0.0)
                continue;
            A.decode(a, ad);
            for (std::size_t j = 0; j < n; ++j) {
                const auto row = mdp.kernel_row(j, sd, ad);
                for (std::size_t y = 0; y < row.size(); ++y)
                    out[j](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(y)) += w[a] * row[y];
            }
        }
    }
    return out;
}

/// r^pi(s) = sum_a r(s,a) prod_k pi_k(a_k|s_{O_k}).
inline StateFunction policy_reward(const FactoredMDP& mdp, const ProductPolicy& pi, const Limits& limits = {}) {
    require_compatible(mdp, pi);
    mdp.check_cap(limits);
    const auto& S = mdp.states();
    StateFunction r(static_cast<Eigen::Index>(S.size()));
    std::vector<int> sd(mdp.agents());
    for (std::size_t s = 0; s < S.size(); ++s) {
        S.decode(s, sd);
        const auto w = joint_action_weights(pi, sd);
        double acc = 0.0;
        for (std::size_t a = 0; a < w.size(); ++a)
            acc += w[a] * mdp.reward(s, a);
        r(static_cast<Eigen::Index>(s)) = acc;
    }
    return r;
}

/// Row softmax of logits / tau, computed with the row maximum subtracted.
inline std::vector<double> softmax_row(std::span<const double> logits, double tau) {
    if (!(tau > 0.0))
        throw InvalidArgument("temperature must be positive");
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t a = 0; a < logits.size(); ++a) {
        p[a] = std::exp((logits[a] - mx) / tau);
        z += p[a];
    }
    for (double& v : p)
        v /= z;
    return p;
}

inline ProductPolicy materialize_softmax(const SoftmaxPolicy& sp) {
    if (!(sp.temperature > 0.0))
        throw InvalidArgument("softmax temperature must be positive");
    if (sp.logits.size() != sp.layout.agents())
        throw DimensionError("softmax policy needs one logit table per agent");
    std::vector<std::vector<double>> tables(sp.layout.agents());
    for (std::size_t k = 0; k < sp.layout.agents(); ++k) {
        const auto m = static_cast<std::size_t>(sp.layout.action_count(k));
        if (sp.logits[k].size() != sp.layout.table_size(k))
            throw DimensionError("logit table " + std::to_string(k) + " has wrong length");
        tables[k].resize(sp.logits[k].size());
        for (std::size_t r = 0; r < sp.layout.rows(k); ++r) {
            for (std::size_t a = 0; a < m; ++a)
                if (!std::isfinite(sp.logits[k][r * m + a]))
                    throw InvalidArgument("logits must be finite");
            const auto p = softmax_row(std::span<const double>(sp.logits[k].data() + r * m, m), sp.temperature);
            std::copy(p.begin(), p.end(), tables[k].begin() + static_cast<std::ptrdiff_t>(r * m));
        }
    }
    return ProductPolicy(sp.layout, std::move(tables));
}

/// (T f)(s) = sum_{s'} P(s'|s) f(s').
inline StateFunction apply_operator(const StateKernel& kernel, const StateFunction& f) {
    if (kernel.rows() != kernel.cols() || kernel.cols() != f.size())
        throw DimensionError("kernel and function sizes disagree");
    return kernel * f;
}

/// Policy whose agents all use the uniform row, with the given scopes.
inline ProductPolicy uniform_policy(const PolicyLayout& layout) {
    std::vector<std::vector<double>> tables(layout.agents());
    for (std::size_t k = 0; k < layout.agents(); ++k)
        tables[k].assign(layout.table_size(k), 1.0 / layout.action_count(k));
    return ProductPolicy(layout, std::move(tables));
}

} // namespace loclab
