#pragma once

#include "loclab/influence.hpp"
#include "loclab/measures.hpp"

#include <Eigen/LU>

#include <cmath>
#include <deque>
#include <numeric>
#include <optional>
#include <stack>
#include <string>
#include <vector>

namespace loclab {

// ---------------------------------------------------------------------------
// Chain structure
// ---------------------------------------------------------------------------

/// Communicating-class structure of the positive-entry graph of a kernel.
struct ChainStructure {
    std::vector<int> component;     ///< strongly connected component of each state
    int components = 0;
    std::vector<int> closed;        ///< components with no edge leaving them
    int period = 0;                 ///< period of the closed class when it is unique
    bool irreducible() const { return components == 1; }
    bool unichain() const { return closed.size() == 1; }
    bool aperiodic() const { return period == 1; }
};

/// Tarjan's strongly connected components (iterative), closed classes, and the
/// period of the closed class as the gcd of level[u] + 1 - level[v] over its
/// edges, levels taken from a breadth-first search.
inline ChainStructure analyze_chain(const StateKernel& P) {
    if (P.rows() != P.cols())
        throw DimensionError("analyze_chain: kernel is not square");
    const int n = static_cast<int>(P.rows());
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s)
        for (int t = 0; t < n; ++t)
            if (P(s, t) > 0.0)
                adj[static_cast<std::size_t>(s)].push_back(t);

    ChainStructure cs;
    cs.component.assign(static_cast<std::size_t>(n), -1);
    std::vector<int> index(static_cast<std::size_t>(n), -1), low(static_cast<std::size_t>(n), 0);
    std::vector<char> on_stack(static_cast<std::size_t>(n), 0);
    std::vector<int> stack;
    int counter = 0;
    for (int root = 0; root < n; ++root) {
        if (index[static_cast<std::size_t>(root)] >= 0)
            continue;
        std::vector<std::pair<int, std::size_t>> work{{root, 0}};
        while (!work.empty()) {
            auto& [v, next] = work.back();
            const auto uv = static_cast<std::size_t>(v);
            if (next == 0) {
                index[uv] = low[uv] = counter++;
                stack.push_back(v);
                on_stack[uv] = 1;
            }
            bool descended = false;
            while (next < adj[uv].size()) {
                const int w = adj[uv][next++];
                const auto uw = static_cast<std::size_t>(w);
                if (index[uw] < 0) {
                    work.emplace_back(w, 0);
                    descended = true;
                    break;
                }
                if (on_stack[uw])
                    low[uv] = std::min(low[uv], index[uw]);
            }
            if (descended)
                continue;
            if (low[uv] == index[uv]) {
                int w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on_stack[static_cast<std::size_t>(w)] = 0;
                    cs.component[static_cast<std::size_t>(w)] = cs.components;
                } while (w != v);
                ++cs.components;
            }
            const int finished = v;
            work.pop_back();
            if (!work.empty()) {
                const auto up = static_cast<std::size_t>(work.back().first);
                low[up] = std::min(low[up], low[static_cast<std::size_t>(finished)]);
            }
        }
    }

    std::vector<char> leaks(static_cast<std::size_t>(cs.components), 0);
    for (int s = 0; s < n; ++s)
        for (int t : adj[static_cast<std::size_t>(s)])
            if (cs.component[static_cast<std::size_t>(s)] != cs.component[static_cast<std::size_t>(t)])
                leaks[static_cast<std::size_t>(cs.component[static_cast<std::size_t>(s)])] = 1;
    for (int c = 0; c < cs.components; ++c)
        if (!leaks[static_cast<std::size_t>(c)])
            cs.closed.push_back(c);

    if (cs.closed.size() == 1) {
        const int cls = cs.closed.front();
        int start = 0;
        while (cs.component[static_cast<std::size_t>(start)] != cls)
            ++start;
        std::vector<int> level(static_cast<std::size_t>(n), -1);
        std::deque<int> q{start};
        level[static_cast<std::size_t>(start)] = 0;
        int g = 0;
        while (!q.empty()) {
            const int u = q.front();
            q.pop_front();
            for (int v : adj[static_cast<std::size_t>(u)]) {
                auto& lv = level[static_cast<std::size_t>(v)];
                if (lv < 0) {
                    lv = level[static_cast<std::size_t>(u)] + 1;
                    q.push_back(v);
                } else {
                    g = std::gcd(g, std::abs(level[static_cast<std::size_t>(u)] + 1 - lv));
                }
            }
        }
        cs.period = g;
    }
    return cs;
}

/// Throws ChainError naming the failing check unless the kernel has a single
/// closed class and that class is aperiodic.
inline void require_ergodic(const StateKernel& P) {
    const auto cs = analyze_chain(P);
    if (!cs.unichain())
        throw ChainError("chain is reducible: " + std::to_string(cs.closed.size()) +
                         " closed communicating classes (single-class check failed)");
    if (!cs.aperiodic())
        throw ChainError("chain is periodic with period " + std::to_string(cs.period) + " (aperiodicity check failed)");
}

/// Unique d with d^T P = d^T and sum d = 1, from a dense solve of (P^T - I)
/// with one equation replaced by normalization.
inline Distribution stationary_distribution(const StateKernel& P) {
    require_ergodic(P);
    const Eigen::Index n = P.rows();
    Eigen::MatrixXd A = P.transpose() - Eigen::MatrixXd::Identity(n, n);
    A.row(n - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs(n - 1) = 1.0;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    Distribution d = lu.solve(rhs);
    // One step of iterative refinement.
    d += lu.solve(rhs - A * d);
    for (Eigen::Index s = 0; s < n; ++s)
        if (d(s) < 0.0 && d(s) > -1e-12)
            d(s) = 0.0;
    d /= d.sum();
    const double residual = (P.transpose() * d - d).cwiseAbs().sum();
    if (!(residual <= 1e-10) || d.minCoeff() < 0.0)
        throw NumericalError("stationary_distribution: residual " + std::to_string(residual) + " above 1e-10");
    return d;
}

// ---------------------------------------------------------------------------
// Poisson equation
// ---------------------------------------------------------------------------

enum class Anchor {
    first_state,      ///< h(s0) = 0
    stationary_mean,  ///< sum_s d(s) h(s) = 0
};

struct PoissonSolution {
    Distribution d;
    double rbar = 0.0;
    StateFunction h;          ///< anchored so h(s0) = 0
    double residual = 0.0;    ///< max_s |h - T h - (r - rbar)|
    /// Oscillation of the difference between the two anchor conventions; zero
    /// exactly when they differ by a constant.
    double uniqueness_gap = 0.0;
};

namespace detail {

inline StateFunction solve_anchored(const StateKernel& P, const StateFunction& g, const Distribution& d,
                                    Anchor anchor) {
    const Eigen::Index n = P.rows();
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - P;
    Eigen::VectorXd rhs = g;
    if (anchor == Anchor::first_state) {
        A.row(0).setZero();
        A(0, 0) = 1.0;
        rhs(0) = 0.0;
    } else {
        A.row(n - 1) = d.transpose();
        rhs(n - 1) = 0.0;
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    StateFunction h = lu.solve(rhs);
    h += lu.solve(rhs - A * h);
    return h;
}

} // namespace detail

/// Solves h - T h = r - rbar with rbar = d^T r, anchored at the first joint state.
inline PoissonSolution solve_poisson(const StateKernel& P, const StateFunction& r_pi) {
    if (P.rows() != P.cols() || P.rows() != r_pi.size())
        throw DimensionError("solve_poisson: kernel and reward sizes disagree");
    PoissonSolution sol;
    sol.d = stationary_distribution(P);
    sol.rbar = sol.d.dot(r_pi);
    const StateFunction g = r_pi.array() - sol.rbar;
    sol.h = detail::solve_anchored(P, g, sol.d, Anchor::first_state);
    sol.h(0) = 0.0;
    sol.residual = (sol.h - P * sol.h - g).cwiseAbs().maxCoeff();
    if (!(sol.residual <= 1e-9))
        throw NumericalError("solve_poisson: residual " + std::to_string(sol.residual) + " above 1e-9");
    const StateFunction alt = detail::solve_anchored(P, g, sol.d, Anchor::stationary_mean);
    sol.uniqueness_gap = total_oscillation(sol.h - alt);
    return sol;
}

/// Same solve, returned under a chosen anchor convention.
inline StateFunction solve_poisson_anchored(const StateKernel& P, const StateFunction& r_pi, Anchor anchor) {
    const auto d = stationary_distribution(P);
    const StateFunction g = r_pi.array() - d.dot(r_pi);
    return detail::solve_anchored(P, g, d, anchor);
}

// ---------------------------------------------------------------------------
// Support graph and certificates
// ---------------------------------------------------------------------------

/// Directed graph on agents with an edge i -> j whenever H(j, i) > threshold.
class SupportGraph {
public:
    SupportGraph() = default;

    SupportGraph(const NonnegMatrix& H, double threshold = 0.0) : threshold_(threshold) {
        if (H.rows() != H.cols())
            throw DimensionError("support_graph: matrix is not square");
        if (threshold < 0.0)
            throw InvalidArgument("support_graph: threshold must be nonnegative");
        const auto n = static_cast<std::size_t>(H.rows());
        out_.resize(n);
        in_.resize(n);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < n; ++i)
                if (H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) > threshold) {
                    out_[i].push_back(static_cast<int>(j));
                    in_[j].push_back(static_cast<int>(i));
                }
    }

    std::size_t nodes() const { return out_.size(); }
    double threshold() const { return threshold_; }
    /// Targets j of edges i -> j, ascending.
    const std::vector<int>& successors(int i) const { return out_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& predecessors(int j) const { return in_[static_cast<std::size_t>(j)]; }
    bool has_edge(int i, int j) const {
        const auto& s = successors(i);
        return std::binary_search(s.begin(), s.end(), j);
    }
    std::size_t edge_count() const {
        std::size_t c = 0;
        for (const auto& s : out_)
            c += s.size();
        return c;
    }

    enum class Direction { undirected, downstream, upstream };

    /// Nodes within graph distance kappa of i. `downstream` follows edges
    /// i -> j, `upstream` follows them backwards, `undirected` ignores direction.
    std::vector<int> ball(int i, int kappa, Direction dir = Direction::undirected) const {
        if (kappa < 0)
            throw InvalidArgument("ball: radius must be nonnegative");
        std::vector<int> dist(nodes(), -1);
        std::deque<int> q{i};
        dist[static_cast<std::size_t>(i)] = 0;
        while (!q.empty()) {
            const int u = q.front();
            q.pop_front();
            if (dist[static_cast<std::size_t>(u)] == kappa)
                continue;
            auto visit = [&](const std::vector<int>& nb) {
                for (int v : nb)
                    if (dist[static_cast<std::size_t>(v)] < 0) {
                        dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
                        q.push_back(v);
                    }
            };
            if (dir != Direction::upstream)
                visit(successors(u));
            if (dir != Direction::downstream)
                visit(predecessors(u));
        }
        std::vector<int> out;
        for (std::size_t v = 0; v < nodes(); ++v)
            if (dist[v] >= 0)
                out.push_back(static_cast<int>(v));
        return out;
    }

    /// True when every positive entry of H is an edge and every edge is positive.
    bool consistent_with(const NonnegMatrix& H) const {
        if (static_cast<std::size_t>(H.rows()) != nodes() || H.rows() != H.cols())
            return false;
        for (std::size_t j = 0; j < nodes(); ++j)
            for (std::size_t i = 0; i < nodes(); ++i) {
                const double v = H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
                if ((v > 0.0) != has_edge(static_cast<int>(i), static_cast<int>(j)))
                    return false;
            }
        return true;
    }

private:
    double threshold_ = 0.0;
    std::vector<std::vector<int>> out_;
    std::vector<std::vector<int>> in_;
};

inline SupportGraph support_graph(const NonnegMatrix& H, double threshold = 0.0) { return SupportGraph(H, threshold); }

/// sum_{t=0}^{kappa} (H^T)^t b, accumulated term by term.
inline OscillationVector truncated_certificate(const NonnegMatrix& H, const OscillationVector& b, int kappa) {
    if (kappa < 0)
        throw InvalidArgument("truncated_certificate: kappa must be nonnegative");
    if (H.rows() != H.cols() || H.rows() != b.size())
        throw DimensionError("truncated_certificate: shape mismatch");
    OscillationVector acc = b;
    OscillationVector term = b;
    for (int t = 1; t <= kappa; ++t) {
        term = propagate(H, term);
        acc += term;
    }
    return acc;
}

struct MessagePassingResult {
    OscillationVector certificate;
    std::size_t messages = 0;
    /// term vector of each round, round 0 = b
    std::vector<OscillationVector> rounds;
};

/// Same certificate by kappa bulk-synchronous rounds on the support graph.
/// In round t every node j holding term value v_j sends H(j,i) * v_j to each
/// i with an edge i -> j; node i sums its inbox in ascending sender order, so
/// the result is bitwise equal to truncated_certificate.
inline MessagePassingResult certificate_message_passing(const SupportGraph& graph, const NonnegMatrix& H,
                                                        const OscillationVector& b, int kappa) {
    if (kappa < 0)
        throw InvalidArgument("certificate_message_passing: kappa must be nonnegative");
    if (!graph.consistent_with(H))
        throw InvalidArgument("certificate_message_passing: graph does not cover the positive entries of H");
    if (b.size() != H.rows())
        throw DimensionError("certificate_message_passing: shape mismatch");
    const auto n = graph.nodes();
    MessagePassingResult out;
    out.certificate = b;
    OscillationVector term = b;
    out.rounds.push_back(term);
    for (int t = 1; t <= kappa; ++t) {
        std::vector<std::vector<std::pair<int, double>>> inbox(n);
        for (std::size_t j = 0; j < n; ++j)
            for (int i : graph.predecessors(static_cast<int>(j))) {
                inbox[static_cast<std::size_t>(i)].emplace_back(
                    static_cast<int>(j), H(static_cast<Eigen::Index>(j), i) * term(static_cast<Eigen::Index>(j)));
                ++out.messages;
            }
        OscillationVector next(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            auto& box = inbox[i];
            std::sort(box.begin(), box.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
            double acc = 0.0;
            for (const auto& msg : box)
                acc += msg.second;
            next(static_cast<Eigen::Index>(i)) = acc;
        }
        term = std::move(next);
        out.rounds.push_back(term);
        out.certificate += term;
    }
    return out;
}

/// h_kappa = sum_{t=0}^{kappa} (T^pi)^t (r - rbar), shifted so h_kappa(s0) = 0.
inline StateFunction truncated_poisson(const StateKernel& P, const StateFunction& r_pi, double rbar, int kappa) {
    if (kappa < 0)
        throw InvalidArgument("truncated_poisson: kappa must be nonnegative");
    if (P.rows() != P.cols() || P.rows() != r_pi.size())
        throw DimensionError("truncated_poisson: shape mismatch");
    StateFunction term = r_pi.array() - rbar;
    StateFunction acc = term;
    for (int t = 1; t <= kappa; ++t) {
        term = P * term;
        acc += term;
    }
    acc.array() -= acc(0);
    return acc;
}

struct TruncationBounds {
    double bias_bound = 0.0;      ///< C / (2 (1 - lambda)) lambda^{kappa+1} ||delta(r)||_1
    double cert_gap_bound = 0.0;  ///< C / (1 - lambda) lambda^{kappa+1} ||b||_inf
};

inline TruncationBounds bias_and_cert_bounds(double C_est, double lambda, int kappa, const OscillationVector& b,
                                             const OscillationVector& delta_r) {
    if (!(lambda > 0.0 && lambda < 1.0))
        throw InvalidArgument("bias_and_cert_bounds: lambda must lie in (0, 1)");
    if (!(C_est >= 1.0))
        throw InvalidArgument("bias_and_cert_bounds: C must be at least 1");
    if (kappa < 0)
        throw InvalidArgument("bias_and_cert_bounds: kappa must be nonnegative");
    const double tail = std::pow(lambda, kappa + 1) / (1.0 - lambda);
    return {0.5 * C_est * tail * delta_r.lpNorm<1>(), C_est * tail * (b.size() ? b.lpNorm<Eigen::Infinity>() : 0.0)};
}

// ---------------------------------------------------------------------------
// Discounted extension
// ---------------------------------------------------------------------------

inline double discounted_rate(double gamma, double rho) {
    if (!(gamma > 0.0 && gamma <= 1.0))
        throw InvalidArgument("discounted_rate: gamma must lie in (0, 1]");
    if (!(rho >= 0.0) || !std::isfinite(rho))
        throw InvalidArgument("discounted_rate: rho must be finite and nonnegative");
    return gamma * rho;
}

/// Smallest integer kappa with lambda^kappa <= epsilon. lambda = 0 gives 1.
inline int required_radius(double lambda, double epsilon) {
    if (!(lambda >= 0.0 && lambda < 1.0))
        throw InvalidArgument("required_radius: lambda must lie in [0, 1)");
    if (!(epsilon > 0.0 && epsilon < 1.0))
        throw InvalidArgument("required_radius: epsilon must lie in (0, 1)");
    if (lambda == 0.0)
        return 1;
    auto k = static_cast<int>(std::ceil(std::log(epsilon) / std::log(lambda)));
    // Settle rounding at exact powers.
    while (k > 0 && std::pow(lambda, k - 1) <= epsilon)
        --k;
    while (std::pow(lambda, k) > epsilon)
        ++k;
    return k;
}

/// lhs = delta(gamma T f), rhs = gamma * H^T delta(f).
inline OscillationCheck discounted_contraction_check(const FactoredMDP& mdp, const ProductPolicy& pi, double gamma,
                                                     const StateFunction& f, const Limits& limits = {}) {
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw InvalidArgument("discounted_contraction_check: gamma must lie in [0, 1)");
    const auto rep = influence_report(mdp, pi, limits);
    const auto P = induced_kernel(mdp, pi, limits);
    const StateFunction gf = gamma * apply_operator(P, f);
    return {oscillation(gf, mdp.states()), gamma * propagate(rep.H, oscillation(f, mdp.states()))};
}

// ---------------------------------------------------------------------------
// Full locality certificate
// ---------------------------------------------------------------------------

struct CertificateOptions {
    double lambda_margin = 1e-9;
    int t_max = 64;
    double graph_threshold = 0.0;
};

struct DecayRow {
    int kappa = 0;
    double cert_norm = 0.0;       ///< ||delta_hat^(kappa)||_inf
    double measured_bias = 0.0;   ///< constant-aligned ||h_kappa - h||_inf
    std::optional<double> bias_bound;
    std::optional<double> cert_gap_bound;
};

struct LocalityCertificate {
    int kappa = 0;
    OscillationVector b;            ///< delta(r^pi)
    OscillationVector cert;         ///< delta_hat^(kappa)
    StateFunction h_hat;            ///< truncated Poisson surrogate, h_hat(s0) = 0
    double rho = 0.0;
    double lambda = 0.0;
    double C_est = 1.0;
    std::optional<double> bias_bound;
    std::optional<double> cert_gap_bound;
    /// rho(H) < 1: the Neumann series converges and the bounds are available.
    bool spectral_ok = false;
    /// No off-diagonal entry of H transmits a full unit of oscillation in one step.
    bool decay_ok = false;
    bool certified() const { return spectral_ok && decay_ok; }
    std::size_t messages = 0;
    std::vector<DecayRow> decay;    ///< kappa' = 0..kappa
};

/// Off-diagonal entries of H strictly below one.
inline bool no_undamped_coupling(const NonnegMatrix& H) {
    for (Eigen::Index j = 0; j < H.rows(); ++j)
        for (Eigen::Index i = 0; i < H.cols(); ++i)
            if (i != j && H(j, i) >= 1.0)
                return false;
    return true;
}

/// Everything the localized evaluation step produces for one policy. The power
/// constant is measured for both H and H^T so that the bias bound (l1 in b)
/// and the certificate-gap bound (sup in b) share one valid C.
inline LocalityCertificate build_certificate(const InfluenceReport& rep, const StateKernel& P, const StateFunction& r_pi,
                                             const PoissonSolution& sol, const ProductSpace& space, int kappa,
                                             const CertificateOptions& opt = {}) {
    if (kappa < 0)
        throw InvalidArgument("build_certificate: kappa must be nonnegative");
    LocalityCertificate c;
    c.kappa = kappa;
    c.rho = rep.rho;
    c.b = oscillation(r_pi, space);
    const auto graph = support_graph(rep.H, opt.graph_threshold);
    const NonnegMatrix H_used = opt.graph_threshold > 0.0
                                    ? NonnegMatrix((rep.H.array() > opt.graph_threshold).select(rep.H, 0.0))
                                    : rep.H;
    auto mp = certificate_message_passing(graph, H_used, c.b, kappa);
    c.cert = mp.certificate;
    c.messages = mp.messages;
    c.h_hat = truncated_poisson(P, r_pi, sol.rbar, kappa);
    c.spectral_ok = rep.rho < 1.0;
    c.decay_ok = no_undamped_coupling(rep.H);
    c.lambda = rep.rho + opt.lambda_margin;
    if (c.lambda < 1.0) {
        c.C_est = std::max(power_norm_constant(rep.H, c.lambda, opt.t_max),
                           power_norm_constant(rep.H.transpose(), c.lambda, opt.t_max));
        const auto bounds = bias_and_cert_bounds(c.C_est, c.lambda, kappa, c.b, c.b);
        c.bias_bound = bounds.bias_bound;
        c.cert_gap_bound = bounds.cert_gap_bound;
    } else {
        c.spectral_ok = false;
    }
    for (int k = 0; k <= kappa; ++k) {
        DecayRow row;
        row.kappa = k;
        OscillationVector partial = mp.rounds[0];
        for (int t = 1; t <= k; ++t)
            partial += mp.rounds[static_cast<std::size_t>(t)];
        row.cert_norm = partial.size() ? partial.lpNorm<Eigen::Infinity>() : 0.0;
        row.measured_bias = aligned_sup_distance(truncated_poisson(P, r_pi, sol.rbar, k), sol.h);
        if (c.lambda < 1.0) {
            const auto bounds = bias_and_cert_bounds(c.C_est, c.lambda, k, c.b, c.b);
            row.bias_bound = bounds.bias_bound;
            row.cert_gap_bound = bounds.cert_gap_bound;
        }
        c.decay.push_back(row);
    }
    return c;
}

/// (I - H^T)^{-1} b, the Neumann bound on delta(h) when rho(H) < 1.
inline OscillationVector neumann_bound(const NonnegMatrix& H, const OscillationVector& b) {
    const Eigen::Index n = H.rows();
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - H.transpose();
    return Eigen::PartialPivLU<Eigen::MatrixXd>(A).solve(b);
}

} // namespace loclab
