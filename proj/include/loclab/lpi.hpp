#pragma once

#include "loclab/influence.hpp"
#include "loclab/poisson.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace loclab {

// ---------------------------------------------------------------------------
// Advantages
// ---------------------------------------------------------------------------

struct AdvantageTable {
    enum class Flavor { exact, surrogate };
    Flavor flavor = Flavor::exact;
    double rbar_used = 0.0;
    Eigen::MatrixXd values;  ///< |S| x |A|, joint indices

    double operator()(std::size_t s, std::size_t a) const {
        return values(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
    }
};

namespace detail {

/// sum_y P(y | s, a) h(y), contracting one coordinate at a time (last digit first).
inline double expected_next_value(const FactoredMDP& mdp, std::span<const int> sd, std::span<const int> ad,
                                  const StateFunction& h, std::vector<double>& buf) {
    const auto& S = mdp.states();
    buf.assign(h.data(), h.data() + h.size());
    std::size_t len = buf.size();
    for (std::size_t i = S.rank(); i-- > 0;) {
        const auto m = static_cast<std::size_t>(S.extent(i));
        const auto row = mdp.kernel_row(i, sd, ad);
        len /= m;
        for (std::size_t p = 0; p < len; ++p) {
            double acc = 0.0;
            for (std::size_t y = 0; y < m; ++y)
                acc += row[y] * buf[p * m + y];
            buf[p] = acc;
        }
    }
    return buf[0];
}

inline void require_function_size(const FactoredMDP& mdp, const StateFunction& h, const char* who) {
    if (static_cast<std::size_t>(h.size()) != mdp.states().size())
        throw DimensionError(std::string(who) + ": value function size does not match the state space");
}

} // namespace detail

/// r(s,a) - rbar + sum_y P(y|s,a) h(y) - h(s) for an arbitrary h.
inline AdvantageTable advantage_from_values(const FactoredMDP& mdp, const StateFunction& h, double rbar,
                                            AdvantageTable::Flavor flavor, const Limits& limits = {}) {
    mdp.check_cap(limits);
    detail::require_function_size(mdp, h, "advantage");
    const auto& S = mdp.states();
    const auto& A = mdp.actions();
    AdvantageTable out;
    out.flavor = flavor;
    out.rbar_used = rbar;
    out.values.resize(static_cast<Eigen::Index>(S.size()), static_cast<Eigen::Index>(A.size()));
    std::vector<int> sd(mdp.agents()), ad(mdp.agents());
    std::vector<double> buf;
    for (std::size_t s = 0; s < S.size(); ++s) {
        S.decode(s, sd);
        for (std::size_t a = 0; a < A.size(); ++a) {
            A.decode(a, ad);
            out.values(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) =
                mdp.reward(s, a) - rbar + detail::expected_next_value(mdp, sd, ad, h, buf) -
                h(static_cast<Eigen::Index>(s));
        }
    }
    return out;
}

inline AdvantageTable exact_advantage(const FactoredMDP& mdp, const ProductPolicy& pi, const PoissonSolution& sol,
                                      const Limits& limits = {}) {
    require_compatible(mdp, pi);
    return advantage_from_values(mdp, sol.h, sol.rbar, AdvantageTable::Flavor::exact, limits);
}

inline AdvantageTable surrogate_advantage(const FactoredMDP& mdp, const ProductPolicy& pi,
                                          const LocalityCertificate& cert, double rbar, const Limits& limits = {}) {
    require_compatible(mdp, pi);
    return advantage_from_values(mdp, cert.h_hat, rbar, AdvantageTable::Flavor::surrogate, limits);
}

/// max_s |sum_a pi(a|s) A(s,a)|; zero for the exact advantage.
inline double policy_mean_residual(const ProductPolicy& pi, const AdvantageTable& adv) {
    const auto& S = pi.layout.states();
    std::vector<int> sd(S.rank());
    double worst = 0.0;
    for (std::size_t s = 0; s < S.size(); ++s) {
        S.decode(s, sd);
        const auto w = joint_action_weights(pi, sd);
        double acc = 0.0;
        for (std::size_t a = 0; a < w.size(); ++a)
            acc += w[a] * adv(s, a);
        worst = std::max(worst, std::abs(acc));
    }
    return worst;
}

/// g_k(s, a_k) = E_{a_-k ~ prod_{j != k} pi_j(.|s)} adv(s, (a_k, a_-k)); |S| x |A_k|.
inline Eigen::MatrixXd expected_local_logits(const FactoredMDP& mdp, const ProductPolicy& pi,
                                             const AdvantageTable& adv, std::size_t k) {
    require_compatible(mdp, pi);
    if (k >= mdp.agents())
        throw InvalidArgument("expected_local_logits: agent index out of range");
    const auto& S = mdp.states();
    const auto& A = mdp.actions();
    if (adv.values.rows() != static_cast<Eigen::Index>(S.size()) ||
        adv.values.cols() != static_cast<Eigen::Index>(A.size()))
        throw DimensionError("expected_local_logits: advantage table has the wrong shape");
    const int mk = A.extent(k);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(S.size()), mk);
    std::vector<int> sd(mdp.agents()), ad(mdp.agents());
    for (std::size_t s = 0; s < S.size(); ++s) {
        S.decode(s, sd);
        for (std::size_t a = 0; a < A.size(); ++a) {
            A.decode(a, ad);
            double w = 1.0;
            for (std::size_t j = 0; j < mdp.agents() && w != 0.0; ++j)
                if (j != k)
                    w *= pi.row_at(j, sd)[static_cast<std::size_t>(ad[j])];
            if (w != 0.0)
                g(static_cast<Eigen::Index>(s), ad[k]) += w * adv(s, a);
        }
    }
    return g;
}

struct LocalLogits {
    Eigen::MatrixXd table;        ///< rows(k) x |A_k|, indexed by s_{O_k}
    /// max over s of the range over a of g(s,a) - table(s_{O_k}, a). Zero when
    /// the projection changes nothing the update can see.
    double scope_residual = 0.0;
};

/// Projects full-state logits onto agent k's observation scope by averaging
/// each fiber {s : s_{O_k} fixed} under `weights` (uniform on fibers of zero mass).
inline LocalLogits project_logits(const PolicyLayout& layout, std::size_t k, const Eigen::MatrixXd& g,
                                  const Distribution& weights) {
    const auto& S = layout.states();
    const auto rows = static_cast<Eigen::Index>(layout.rows(k));
    const Eigen::Index m = g.cols();
    Eigen::MatrixXd num = Eigen::MatrixXd::Zero(rows, m), unif = Eigen::MatrixXd::Zero(rows, m);
    Eigen::VectorXd mass = Eigen::VectorXd::Zero(rows), count = Eigen::VectorXd::Zero(rows);
    std::vector<int> sd(S.rank());
    for (std::size_t s = 0; s < S.size(); ++s) {
        S.decode(s, sd);
        const auto r = static_cast<Eigen::Index>(layout.row_of(k, sd));
        const auto si = static_cast<Eigen::Index>(s);
        num.row(r) += weights(si) * g.row(si);
        mass(r) += weights(si);
        unif.row(r) += g.row(si);
        count(r) += 1.0;
    }
    LocalLogits out;
    out.table.resize(rows, m);
    for (Eigen::Index r = 0; r < rows; ++r)
        out.table.row(r) = mass(r) > 0.0 ? Eigen::RowVectorXd(num.row(r) / mass(r))
                                         : Eigen::RowVectorXd(unif.row(r) / count(r));
    for (std::size_t s = 0; s < S.size(); ++s) {
        S.decode(s, sd);
        const auto r = static_cast<Eigen::Index>(layout.row_of(k, sd));
        const Eigen::RowVectorXd diff = g.row(static_cast<Eigen::Index>(s)) - out.table.row(r);
        out.scope_residual = std::max(out.scope_residual, diff.maxCoeff() - diff.minCoeff());
    }
    return out;
}

// ---------------------------------------------------------------------------
// KL-proximal step
// ---------------------------------------------------------------------------

/// KL(p || q) in nats with 0 log 0 = 0; +inf when p puts mass where q has none.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw DimensionError("kl_divergence: length mismatch");
    double acc = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
        if (p[a] <= 0.0)
            continue;
        if (q[a] <= 0.0)
            return std::numeric_limits<double>::infinity();
        acc += p[a] * std::log(p[a] / q[a]);
    }
    return std::max(acc, 0.0);
}

/// p(a) proportional to q(a) exp(g(a) / tau), zero wherever q is zero.
inline std::vector<double> kl_prox_row(std::span<const double> q, std::span<const double> g, double tau) {
    if (!(tau > 0.0))
        throw InvalidArgument("kl_prox_update: temperature must be positive");
    if (q.size() != g.size())
        throw DimensionError("kl_prox_update: row and logit lengths differ");
    double mx = -std::numeric_limits<double>::infinity();
    double mass = 0.0;
    for (std::size_t a = 0; a < q.size(); ++a) {
        if (!std::isfinite(q[a]) || q[a] < 0.0 || !std::isfinite(g[a]))
            throw InvalidArgument("kl_prox_update: invalid input row");
        mass += q[a];
        if (q[a] > 0.0)
            mx = std::max(mx, g[a]);
    }
    if (!(mass > 0.0))
        throw InvalidArgument("kl_prox_update: input row has no mass");
    std::vector<double> p(q.size(), 0.0);
    double z = 0.0;
    for (std::size_t a = 0; a < q.size(); ++a)
        if (q[a] > 0.0) {
            p[a] = q[a] * std::exp((g[a] - mx) / tau);
            z += p[a];
        }
    for (double& v : p)
        v /= z;
    return p;
}

/// Row-wise update of a policy table (rows of width g.cols()).
inline std::vector<double> kl_prox_update(std::span<const double> table, const Eigen::MatrixXd& g, double tau) {
    const auto m = static_cast<std::size_t>(g.cols());
    if (m == 0 || table.size() != static_cast<std::size_t>(g.rows()) * m)
        throw DimensionError("kl_prox_update: table and logits disagree in shape");
    std::vector<double> out(table.size());
    std::vector<double> gr(m);
    for (std::size_t r = 0; r < static_cast<std::size_t>(g.rows()); ++r) {
        for (std::size_t a = 0; a < m; ++a)
            gr[a] = g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(a));
        const auto p = kl_prox_row(table.subspan(r * m, m), gr, tau);
        std::copy(p.begin(), p.end(), out.begin() + static_cast<std::ptrdiff_t>(r * m));
    }
    return out;
}

struct ProxDuality {
    double value = 0.0;              ///< tau log sum_a q(a) exp(g(a)/tau)
    std::vector<double> maximizer;
    double primal = 0.0;             ///< <p*, g> - tau KL(p* || q)
    double gain = 0.0;               ///< <p* - q, g>
    double kl = 0.0;                 ///< KL(p* || q)
};

inline ProxDuality prox_duality_value(std::span<const double> q, std::span<const double> g, double tau) {
    ProxDuality out;
    out.maximizer = kl_prox_row(q, g, tau);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < q.size(); ++a)
        if (q[a] > 0.0)
            mx = std::max(mx, g[a]);
    double z = 0.0;
    for (std::size_t a = 0; a < q.size(); ++a)
        if (q[a] > 0.0)
            z += q[a] * std::exp((g[a] - mx) / tau);
    out.value = mx + tau * std::log(z);
    out.kl = kl_divergence(out.maximizer, q);
    double pg = 0.0, qg = 0.0;
    for (std::size_t a = 0; a < q.size(); ++a) {
        pg += out.maximizer[a] * g[a];
        qg += q[a] * g[a];
    }
    out.primal = pg - tau * out.kl;
    out.gain = pg - qg;
    return out;
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

/// Plain average reward d^pi . r^pi.
inline double average_reward(const FactoredMDP& mdp, const ProductPolicy& pi, const Limits& limits = {}) {
    const auto P = induced_kernel(mdp, pi, limits);
    return stationary_distribution(P).dot(policy_reward(mdp, pi, limits));
}

/// E_{S ~ d} KL(mu_k(.|S_O) || pi_k(.|S_O)).
inline double expected_block_kl(const ProductPolicy& mu, const ProductPolicy& anchor, std::size_t k,
                                const Distribution& d) {
    if (!(mu.layout == anchor.layout))
        throw DimensionError("expected_block_kl: policies have different layouts");
    const auto& S = mu.layout.states();
    std::vector<int> sd(S.rank());
    double acc = 0.0;
    for (std::size_t s = 0; s < S.size(); ++s) {
        const double w = d(static_cast<Eigen::Index>(s));
        if (w == 0.0)
            continue;
        S.decode(s, sd);
        acc += w * kl_divergence(mu.row_at(k, sd), anchor.row_at(k, sd));
    }
    return acc;
}

/// E_{d^mu, mu}[r] - tau sum_k E_{S ~ d^mu} KL(mu_k || pi_k).
inline double kl_anchored_objective(const FactoredMDP& mdp, const ProductPolicy& mu, const ProductPolicy& anchor,
                                    double tau, const Limits& limits = {}) {
    if (tau < 0.0)
        throw InvalidArgument("kl_anchored_objective: temperature must be nonnegative");
    require_compatible(mdp, anchor);
    const auto P = induced_kernel(mdp, mu, limits);
    const auto d = stationary_distribution(P);
    double value = d.dot(policy_reward(mdp, mu, limits));
    if (tau == 0.0)
        return value;
    for (std::size_t k = 0; k < mdp.agents(); ++k)
        value -= tau * expected_block_kl(mu, anchor, k, d);
    return value;
}

/// J_tau(pi) = E_{d^pi, pi}[r(s,a) - tau sum_k log pi_k(a_k | s_O_k)].
inline double entropy_objective(const FactoredMDP& mdp, const ProductPolicy& pi, double tau,
                                const Limits& limits = {}) {
    if (tau < 0.0)
        throw InvalidArgument("entropy_objective: temperature must be nonnegative");
    const auto P = induced_kernel(mdp, pi, limits);
    const auto d = stationary_distribution(P);
    double value = d.dot(policy_reward(mdp, pi, limits));
    const auto& S = mdp.states();
    std::vector<int> sd(mdp.agents());
    for (std::size_t s = 0; s < S.size(); ++s) {
        const double w = d(static_cast<Eigen::Index>(s));
        if (w == 0.0)
            continue;
        S.decode(s, sd);
        for (std::size_t k = 0; k < mdp.agents(); ++k)
            for (double p : pi.row_at(k, sd))
                if (p > 0.0)
                    value -= tau * w * p * std::log(p);
    }
    return value;
}

// ---------------------------------------------------------------------------
// Block updates and the improvement audit
// ---------------------------------------------------------------------------

/// Everything the evaluation phase produces at one policy.
struct Evaluation {
    StateKernel P;
    StateFunction r_pi;
    PoissonSolution poisson;
    InfluenceReport influence;
    LocalityCertificate certificate;
};

inline Evaluation evaluate_policy(const FactoredMDP& mdp, const ProductPolicy& pi, int kappa,
                                  const Limits& limits = {}) {
    Evaluation ev;
    ev.P = induced_kernel(mdp, pi, limits);
    ev.r_pi = policy_reward(mdp, pi, limits);
    ev.poisson = solve_poisson(ev.P, ev.r_pi);
    ev.influence = influence_report(mdp, pi, limits);
    ev.certificate = build_certificate(ev.influence, ev.P, ev.r_pi, ev.poisson, mdp.states(), kappa);
    return ev;
}

struct BlockUpdateRecord {
    std::size_t agent = 0;
    std::vector<double> old_table;
    std::vector<double> new_table;
    Eigen::MatrixXd logits;        ///< full-state g_k(s, a_k)
    LocalLogits local_logits;      ///< g_k projected onto s_{O_k}
    double tau = 0.0;
    std::vector<double> kl_per_row;
    double expected_kl = 0.0;      ///< E_{S ~ d^mu} KL(new || old)
    double truncation_penalty = 0.0; ///< 2 inf_c ||h_hat - h - c||_inf
    double improvement_lhs = 0.0;  ///< rbar(mu) - rbar(pi)
    double improvement_rhs = 0.0;  ///< tau E KL - truncation_penalty
    double anchored_lhs = 0.0;     ///< rbar_{tau,pi}(mu) - rbar_{tau,pi}(pi)
    double slack() const { return improvement_lhs - improvement_rhs; }
};

/// Copy of `base` with block k replaced by its KL-prox update under the local logits.
inline ProductPolicy apply_block_update(const ProductPolicy& base, std::size_t k, const LocalLogits& local,
                                        double tau) {
    ProductPolicy mu = base;
    mu.tables[k] = kl_prox_update(base.tables[k], local.table, tau);
    return mu;
}

namespace detail {

inline BlockUpdateRecord audit_block(const FactoredMDP& mdp, const ProductPolicy& pi, const ProductPolicy& mu,
                                     std::size_t k, const Eigen::MatrixXd& g, const LocalLogits& local, double tau,
                                     const Evaluation& ev, const Limits& limits) {
    BlockUpdateRecord rec;
    rec.agent = k;
    rec.old_table = pi.tables[k];
    rec.new_table = mu.tables[k];
    rec.logits = g;
    rec.local_logits = local;
    rec.tau = tau;
    for (std::size_t r = 0; r < pi.layout.rows(k); ++r)
        rec.kl_per_row.push_back(kl_divergence(mu.row(k, r), pi.row(k, r)));
    const auto Pmu = induced_kernel(mdp, mu, limits);
    const auto dmu = stationary_distribution(Pmu);
    const double rbar_mu = dmu.dot(policy_reward(mdp, mu, limits));
    rec.expected_kl = expected_block_kl(mu, pi, k, dmu);
    rec.truncation_penalty = 2.0 * aligned_sup_distance(ev.certificate.h_hat, ev.poisson.h);
    rec.improvement_lhs = rbar_mu - ev.poisson.rbar;
    rec.improvement_rhs = tau * rec.expected_kl - rec.truncation_penalty;
    rec.anchored_lhs = rbar_mu - tau * rec.expected_kl - ev.poisson.rbar;
    return rec;
}

inline Eigen::MatrixXd block_logits(const FactoredMDP& mdp, const ProductPolicy& pi, std::size_t k,
                                    const Evaluation& ev, const Limits& limits) {
    const auto adv = surrogate_advantage(mdp, pi, ev.certificate, ev.poisson.rbar, limits);
    return expected_local_logits(mdp, pi, adv, k);
}

} // namespace detail

/// One-block update of agent k from pi with a certificate of radius kappa, and
/// the audit of the improvement inequality against the exact Poisson solution.
inline BlockUpdateRecord block_improvement_check(const FactoredMDP& mdp, const ProductPolicy& pi, std::size_t k,
                                                 int kappa, double tau, const Limits& limits = {}) {
    if (!(tau > 0.0))
        throw InvalidArgument("block_improvement_check: temperature must be positive");
    if (k >= mdp.agents())
        throw InvalidArgument("block_improvement_check: agent index out of range");
    const auto ev = evaluate_policy(mdp, pi, kappa, limits);
    const auto g = detail::block_logits(mdp, pi, k, ev, limits);
    const auto local = project_logits(pi.layout, k, g, ev.poisson.d);
    const auto mu = apply_block_update(pi, k, local, tau);
    return detail::audit_block(mdp, pi, mu, k, g, local, tau, ev, limits);
}

struct LPIIteration {
    std::size_t index = 0;
    InfluenceReport influence;
    LocalityCertificate certificate;
    double rbar = 0.0;
    double poisson_residual = 0.0;
    double entropy_objective = 0.0;
    /// One-block audits, each relative to the iteration-start policy.
    std::vector<BlockUpdateRecord> blocks;
    /// rbar(next) - tau sum_k E_{d^next} KL(next_k || this_k) - rbar(this).
    double anchored_gain = 0.0;
};

struct LPITrace {
    int kappa = 0;
    double tau = 0.0;
    std::vector<ProductPolicy> snapshots;  ///< pi^(0) .. pi^(iters)
    std::vector<LPIIteration> iterations;
    double final_rbar = 0.0;
    double final_entropy_objective = 0.0;
};

/// Outer iterations of localized policy improvement. Phase 1 evaluates the
/// iteration-start policy once; Phase 2 updates every block against that
/// policy (other agents' expectations and the proximal anchor both taken at
/// pi^(l)) and writes the results into pi_temp.
inline LPITrace lpi_iterate(const FactoredMDP& mdp, const ProductPolicy& pi0, int kappa, double tau, int outer_iters,
                            const Limits& limits = {}) {
    if (!(tau > 0.0))
        throw InvalidArgument("lpi_iterate: temperature must be positive");
    if (outer_iters < 1)
        throw InvalidArgument("lpi_iterate: need at least one iteration");
    if (kappa < 0)
        throw InvalidArgument("lpi_iterate: kappa must be nonnegative");
    require_compatible(mdp, pi0);
    LPITrace trace;
    trace.kappa = kappa;
    trace.tau = tau;
    trace.snapshots.push_back(pi0);
    auto at_iteration = [](std::size_t l, const ChainError& e) {
        return ChainError("iteration " + std::to_string(l) + ": " + e.what());
    };
    for (std::size_t l = 0; l < static_cast<std::size_t>(outer_iters); ++l) {
        const ProductPolicy pi = trace.snapshots.back();
        LPIIteration it;
        it.index = l;
        Evaluation ev;
        try {
            ev = evaluate_policy(mdp, pi, kappa, limits);
        } catch (const ChainError& e) {
            throw at_iteration(l, e);
        }
        it.influence = ev.influence;
        it.certificate = ev.certificate;
        it.rbar = ev.poisson.rbar;
        it.poisson_residual = ev.poisson.residual;
        it.entropy_objective = entropy_objective(mdp, pi, tau, limits);
        const auto adv = surrogate_advantage(mdp, pi, ev.certificate, ev.poisson.rbar, limits);
        ProductPolicy temp = pi;
        for (std::size_t k = 0; k < mdp.agents(); ++k) {
            const auto g = expected_local_logits(mdp, pi, adv, k);
            const auto local = project_logits(pi.layout, k, g, ev.poisson.d);
            const auto mu = apply_block_update(pi, k, local, tau);
            temp.tables[k] = mu.tables[k];
            try {
                it.blocks.push_back(detail::audit_block(mdp, pi, mu, k, g, local, tau, ev, limits));
            } catch (const ChainError& e) {
                throw at_iteration(l, e);
            }
        }
        try {
            const auto Pn = induced_kernel(mdp, temp, limits);
            const auto dn = stationary_distribution(Pn);
            double kl = 0.0;
            for (std::size_t k = 0; k < mdp.agents(); ++k)
                kl += expected_block_kl(temp, pi, k, dn);
            it.anchored_gain = dn.dot(policy_reward(mdp, temp, limits)) - tau * kl - it.rbar;
        } catch (const ChainError& e) {
            throw at_iteration(l + 1, e);
        }
        trace.iterations.push_back(std::move(it));
        trace.snapshots.push_back(std::move(temp));
    }
    trace.final_rbar = average_reward(mdp, trace.snapshots.back(), limits);
    trace.final_entropy_objective = entropy_objective(mdp, trace.snapshots.back(), tau, limits);
    return trace;
}

struct CyclicPassRecord {
    std::vector<BlockUpdateRecord> blocks;  ///< block k audited against pi^(k-1)
    ProductPolicy final_policy;
    double lhs = 0.0;                       ///< rbar(pi^(n)) - rbar(pi)
    double rhs = 0.0;                       ///< tau sum_k E KL_k - sum_k penalty_k
    double slack() const { return lhs - rhs; }
};

/// Cyclic pass k = 1..n, each block updated against the current policy with a
/// freshly computed certificate.
inline CyclicPassRecord cyclic_pass_check(const FactoredMDP& mdp, const ProductPolicy& pi, int kappa, double tau,
                                          const Limits& limits = {}) {
    if (!(tau > 0.0))
        throw InvalidArgument("cyclic_pass_check: temperature must be positive");
    CyclicPassRecord out;
    ProductPolicy cur = pi;
    for (std::size_t k = 0; k < mdp.agents(); ++k) {
        const auto ev = evaluate_policy(mdp, cur, kappa, limits);
        const auto g = detail::block_logits(mdp, cur, k, ev, limits);
        const auto local = project_logits(cur.layout, k, g, ev.poisson.d);
        const auto next = apply_block_update(cur, k, local, tau);
        auto rec = detail::audit_block(mdp, cur, next, k, g, local, tau, ev, limits);
        out.lhs += rec.improvement_lhs;
        out.rhs += rec.improvement_rhs;
        out.blocks.push_back(std::move(rec));
        cur = next;
    }
    out.final_policy = cur;
    // Recompute the left side end to end rather than trusting the telescoped sum.
    out.lhs = average_reward(mdp, cur, limits) - average_reward(mdp, pi, limits);
    return out;
}

} // namespace loclab
