#pragma once

#include "loclab/mdp.hpp"
#include "loclab/measures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace loclab {

/// Every sensitivity matrix of one (MDP, policy) pair, in the fixed
/// (influenced row, influencing column) orientation.
struct InfluenceReport {
    NonnegMatrix E_s;  ///< state sensitivity of the environment
    NonnegMatrix E_a;  ///< action sensitivity of the environment
    NonnegMatrix Pi;   ///< policy sensitivity Pi_{k<-i}
    NonnegMatrix C;    ///< exact closed-loop interdependence
    NonnegMatrix H;    ///< decomposition bound E_s + E_a * Pi
    double rho = 0.0;  ///< spectral radius of H
    /// max_{j,i} (C - H)(j, i); nonpositive up to float dust when the decomposition holds.
    double decomposition_slack = 0.0;
};

struct AsyncInfluence {
    Eigen::VectorXd nu;
    NonnegMatrix M;
    double rho = 0.0;
};

using LogitLipschitz = NonnegMatrix;

namespace detail {

inline double clip_unit(double v) { return std::clamp(v, 0.0, 1.0); }

inline Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

} // namespace detail

/// E^s_{j<-i}: worst TV shift of P_j(.|s,a) when only s_i changes, action fixed.
/// Enumerates the stored table of each factor; coordinates outside the
/// (declared) state scope contribute zero.
inline NonnegMatrix env_state_sensitivity(const FactoredMDP& mdp, const Limits& limits = {}) {
    mdp.check_cap(limits);
    const std::size_t n = mdp.agents();
    NonnegMatrix E = NonnegMatrix::Zero(detail::ix(n), detail::ix(n));
    for (std::size_t j = 0; j < n; ++j) {
        const auto& six = mdp.kernel_state_indexer(j);
        const auto& decl = mdp.kernel(j).effective_state_scope();
        const std::size_t na = mdp.kernel_action_indexer(j).size();
        for (std::size_t p = 0; p < six.scope().size(); ++p) {
            const int i = six.scope()[p];
            if (!std::binary_search(decl.begin(), decl.end(), i))
                continue;
            const int m = six.local().extent(p);
            double best = 0.0;
            for (std::size_t ls = 0; ls < six.size(); ++ls) {
                const int cur = six.local().digit(ls, p);
                for (int v = cur + 1; v < m; ++v) {
                    const std::size_t other = six.local().with_digit(ls, p, v);
                    for (std::size_t la = 0; la < na; ++la)
                        best = std::max(best, tv_unchecked(mdp.kernel_row(j, ls * na + la),
                                                           mdp.kernel_row(j, other * na + la)));
                }
            }
            E(detail::ix(j), i) = detail::clip_unit(best);
        }
    }
    return E;
}

/// E^a_{j<-k}: worst TV shift of P_j(.|s,a) when only a_k changes, state fixed.
inline NonnegMatrix env_action_sensitivity(const FactoredMDP& mdp, const Limits& limits = {}) {
    mdp.check_cap(limits);
    const std::size_t n = mdp.agents();
    NonnegMatrix E = NonnegMatrix::Zero(detail::ix(n), detail::ix(n));
    for (std::size_t j = 0; j < n; ++j) {
        const auto& six = mdp.kernel_state_indexer(j);
        const auto& aix = mdp.kernel_action_indexer(j);
        const auto& decl = mdp.kernel(j).effective_action_scope();
        const std::size_t na = aix.size();
        for (std::size_t p = 0; p < aix.scope().size(); ++p) {
            const int k = aix.scope()[p];
            if (!std::binary_search(decl.begin(), decl.end(), k))
                continue;
            const int m = aix.local().extent(p);
            double best = 0.0;
            for (std::size_t ls = 0; ls < six.size(); ++ls)
                for (std::size_t la = 0; la < na; ++la) {
                    const int cur = aix.local().digit(la, p);
                    for (int v = cur + 1; v < m; ++v) {
                        const std::size_t other = aix.local().with_digit(la, p, v);
                        best = std::max(best, tv_unchecked(mdp.kernel_row(j, ls * na + la),
                                                           mdp.kernel_row(j, ls * na + other)));
                    }
                }
            E(detail::ix(j), k) = detail::clip_unit(best);
        }
    }
    return E;
}

/// Pi_{k<-i}(pi): worst TV shift of pi_k when only s_i changes. Zero for i outside O_k.
inline NonnegMatrix policy_sensitivity(const ProductPolicy& pi) {
    const std::size_t n = pi.layout.agents();
    NonnegMatrix P = NonnegMatrix::Zero(detail::ix(n), detail::ix(n));
    for (std::size_t k = 0; k < n; ++k) {
        const auto& sc = pi.layout.scope(k);
        for (std::size_t p = 0; p < sc.scope().size(); ++p) {
            const int m = sc.local().extent(p);
            double best = 0.0;
            for (std::size_t r = 0; r < sc.size(); ++r) {
                const int cur = sc.local().digit(r, p);
                for (int v = cur + 1; v < m; ++v)
                    best = std::max(best, tv_unchecked(pi.row(k, r), pi.row(k, sc.local().with_digit(r, p, v))));
            }
            P(detail::ix(k), sc.scope()[p]) = detail::clip_unit(best);
        }
    }
    return P;
}

inline NonnegMatrix policy_sensitivity(const FactoredMDP& mdp, const ProductPolicy& pi, const Limits& limits = {}) {
    require_compatible(mdp, pi);
    mdp.check_cap(limits);
    return policy_sensitivity(pi);
}

/// C^pi_{j<-i}: exact worst TV shift of the policy-mixed marginal P^pi_j(.|s)
/// across one-coordinate state changes.
inline NonnegMatrix interdependence_exact(const FactoredMDP& mdp, const ProductPolicy& pi, const Limits& limits = {}) {
    const auto marg = next_state_marginals(mdp, pi, limits);
    const auto& S = mdp.states();
    const std::size_t n = mdp.agents();
    NonnegMatrix C = NonnegMatrix::Zero(detail::ix(n), detail::ix(n));
    for (std::size_t j = 0; j < n; ++j) {
        // Row-major copy so rows are contiguous spans.
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mj = marg[j];
        const auto width = static_cast<std::size_t>(mj.cols());
        auto row = [&](std::size_t s) { return std::span<const double>(mj.data() + s * width, width); };
        for (std::size_t i = 0; i < n; ++i) {
            double best = 0.0;
            for (std::size_t s = 0; s < S.size(); ++s) {
                const int cur = S.digit(s, i);
                for (int v = cur + 1; v < S.extent(i); ++v)
                    best = std::max(best, tv_unchecked(row(s), row(S.with_digit(s, i, v))));
            }
            C(detail::ix(j), detail::ix(i)) = detail::clip_unit(best);
        }
    }
    return C;
}

/// H = E_s + E_a * Pi.
inline NonnegMatrix influence_bound(const NonnegMatrix& E_s, const NonnegMatrix& E_a, const NonnegMatrix& Pi) {
    if (E_s.rows() != E_s.cols() || E_a.rows() != E_s.rows() || E_a.cols() != Pi.rows() ||
        Pi.cols() != E_s.cols())
        throw DimensionError("influence_bound: shape mismatch");
    NonnegMatrix H = E_s;
    for (Eigen::Index j = 0; j < H.rows(); ++j)
        for (Eigen::Index i = 0; i < H.cols(); ++i) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k < E_a.cols(); ++k)
                acc += E_a(j, k) * Pi(k, i);
            H(j, i) += acc;
        }
    return H;
}

inline InfluenceReport influence_report(const FactoredMDP& mdp, const ProductPolicy& pi, const Limits& limits = {}) {
    require_compatible(mdp, pi);
    InfluenceReport rep;
    rep.E_s = env_state_sensitivity(mdp, limits);
    rep.E_a = env_action_sensitivity(mdp, limits);
    rep.Pi = policy_sensitivity(mdp, pi, limits);
    rep.C = interdependence_exact(mdp, pi, limits);
    rep.H = influence_bound(rep.E_s, rep.E_a, rep.Pi);
    rep.rho = spectral_radius(rep.H);
    rep.decomposition_slack = (rep.C - rep.H).maxCoeff();
    return rep;
}

/// Policy-independent comparison matrix: the worst TV shift of P_j when agent
/// i's state and action both change arbitrarily (everything else fixed).
inline NonnegMatrix action_supremum_influence(const FactoredMDP& mdp, const Limits& limits = {}) {
    mdp.check_cap(limits);
    const auto& S = mdp.states();
    const auto& A = mdp.actions();
    const std::size_t n = mdp.agents();
    NonnegMatrix B = NonnegMatrix::Zero(detail::ix(n), detail::ix(n));
    std::vector<int> sd(n), ad(n), sd2(n), ad2(n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) {
            double best = 0.0;
            for (std::size_t s = 0; s < S.size(); ++s) {
                S.decode(s, sd);
                for (std::size_t a = 0; a < A.size(); ++a) {
                    A.decode(a, ad);
                    const auto base = mdp.kernel_row(j, sd, ad);
                    sd2 = sd;
                    ad2 = ad;
                    for (int x = 0; x < S.extent(i); ++x)
                        for (int y = 0; y < A.extent(i); ++y) {
                            sd2[i] = x;
                            ad2[i] = y;
                            best = std::max(best, tv_unchecked(base, mdp.kernel_row(j, sd2, ad2)));
                        }
                }
            }
            B(detail::ix(j), detail::ix(i)) = detail::clip_unit(best);
        }
    return B;
}

// ---------------------------------------------------------------------------
// Oscillation contraction
// ---------------------------------------------------------------------------

struct OscillationCheck {
    OscillationVector lhs;
    OscillationVector rhs;
    /// max_i (lhs_i - rhs_i); the bound holds when this is <= tolerance.
    double excess() const { return (lhs - rhs).maxCoeff(); }
};

/// lhs = delta(T^pi f) exactly; rhs_i = sum_j H(j,i) delta_j(f).
inline OscillationCheck one_step_oscillation_check(const FactoredMDP& mdp, const ProductPolicy& pi,
                                                   const StateFunction& f, const Limits& limits = {}) {
    const auto rep = influence_report(mdp, pi, limits);
    const auto P = induced_kernel(mdp, pi, limits);
    return {oscillation(apply_operator(P, f), mdp.states()), propagate(rep.H, oscillation(f, mdp.states()))};
}

/// t-step version: delta((T^pi)^t f) against (H^T)^t delta(f).
inline OscillationCheck multi_step_oscillation_check(const FactoredMDP& mdp, const ProductPolicy& pi,
                                                     const StateFunction& f, int steps, const Limits& limits = {}) {
    const auto rep = influence_report(mdp, pi, limits);
    const auto P = induced_kernel(mdp, pi, limits);
    StateFunction g = f;
    for (int t = 0; t < steps; ++t)
        g = apply_operator(P, g);
    return {oscillation(g, mdp.states()), propagate(rep.H, oscillation(f, mdp.states()), steps)};
}

// ---------------------------------------------------------------------------
// Softmax policies
// ---------------------------------------------------------------------------

/// L_{k<-i} = max over one-coordinate state changes at i of ||g_k(s,.) - g_k(s',.)||_inf.
inline LogitLipschitz logit_lipschitz(const SoftmaxPolicy& sp) {
    const auto& lay = sp.layout;
    const std::size_t n = lay.agents();
    LogitLipschitz L = LogitLipschitz::Zero(detail::ix(n), detail::ix(n));
    for (std::size_t k = 0; k < n; ++k) {
        const auto& sc = lay.scope(k);
        const auto m = static_cast<std::size_t>(lay.action_count(k));
        for (std::size_t p = 0; p < sc.scope().size(); ++p) {
            double best = 0.0;
            for (std::size_t r = 0; r < sc.size(); ++r) {
                const int cur = sc.local().digit(r, p);
                for (int v = cur + 1; v < sc.local().extent(p); ++v) {
                    const std::size_t o = sc.local().with_digit(r, p, v);
                    for (std::size_t a = 0; a < m; ++a)
                        best = std::max(best, std::abs(sp.logits[k][r * m + a] - sp.logits[k][o * m + a]));
                }
            }
            L(detail::ix(k), sc.scope()[p]) = best;
        }
    }
    return L;
}

inline LogitLipschitz logit_lipschitz(const SoftmaxPolicy& sp, const FactoredMDP& mdp, const Limits& limits = {}) {
    if (!(sp.layout.states() == mdp.states()))
        throw DimensionError("softmax policy shape does not match the MDP");
    mdp.check_cap(limits);
    return logit_lipschitz(sp);
}

/// Entrywise min{1, L / (2 tau)}.
inline NonnegMatrix softmax_pi_bound(const LogitLipschitz& L, double tau) {
    if (!(tau > 0.0))
        throw InvalidArgument("softmax_pi_bound: temperature must be positive");
    return (L.array() / (2.0 * tau)).min(1.0).matrix();
}

/// TV(soft(u), soft(v)) / (||u - v||_inf / (2 tau)) for v = 0 and u = eps * (+1, -1, +1, ...)
/// (last entry 0 when m is odd). Tends to 1 as eps -> 0 for even m.
inline double softmax_sharpness_ratio(double eps, double tau, int m) {
    if (m < 2 || !(eps > 0.0) || !(tau > 0.0))
        throw InvalidArgument("softmax_sharpness_ratio: need m >= 2, eps > 0, tau > 0");
    std::vector<double> u(static_cast<std::size_t>(m), 0.0), v(static_cast<std::size_t>(m), 0.0);
    const int paired = m - (m % 2);
    for (int a = 0; a < paired; ++a)
        u[static_cast<std::size_t>(a)] = (a % 2 == 0) ? eps : -eps;
    const auto p = softmax_row(u, tau);
    const auto q = softmax_row(v, tau);
    return tv_unchecked(p, q) / (eps / (2.0 * tau));
}

// ---------------------------------------------------------------------------
// Asynchronous (single-site) dynamics
// ---------------------------------------------------------------------------

inline void require_full_support(const Eigen::VectorXd& nu, Eigen::Index n) {
    if (nu.size() != n)
        throw DimensionError("site distribution has the wrong length");
    for (Eigen::Index j = 0; j < n; ++j)
        if (!std::isfinite(nu(j)) || nu(j) <= 0.0)
            throw InvalidArgument("site distribution must give every agent positive mass");
    if (std::abs(nu.sum() - 1.0) > kDistributionTolerance)
        throw InvalidArgument("site distribution must sum to one");
}

/// M = (I - diag nu) + diag nu * (E_s + E_a Pi), with its spectral radius.
inline AsyncInfluence async_influence(const NonnegMatrix& E_s, const NonnegMatrix& E_a, const NonnegMatrix& Pi,
                                      const Eigen::VectorXd& nu) {
    const NonnegMatrix H = influence_bound(E_s, E_a, Pi);
    require_full_support(nu, H.rows());
    AsyncInfluence out;
    out.nu = nu;
    out.M = NonnegMatrix::Identity(H.rows(), H.cols());
    out.M.diagonal() -= nu;
    out.M += nu.asDiagonal() * H;
    out.rho = spectral_radius(out.M);
    return out;
}

/// Exact single-site kernel: pick agent j with probability nu_j, redraw s_j from
/// the policy-mixed marginal P^pi_j(.|s), keep every other coordinate.
inline StateKernel async_kernel(const FactoredMDP& mdp, const ProductPolicy& pi, const Eigen::VectorXd& nu,
                                const Limits& limits = {}) {
    require_full_support(nu, static_cast<Eigen::Index>(mdp.agents()));
    const auto marg = next_state_marginals(mdp, pi, limits);
    const auto& S = mdp.states();
    StateKernel K = StateKernel::Zero(detail::ix(S.size()), detail::ix(S.size()));
    for (std::size_t s = 0; s < S.size(); ++s)
        for (std::size_t j = 0; j < mdp.agents(); ++j)
            for (int y = 0; y < S.extent(j); ++y)
                K(detail::ix(s), detail::ix(S.with_digit(s, j, y))) +=
                    nu(detail::ix(j)) * marg[j](detail::ix(s), y);
    return K;
}

} // namespace loclab
