#pragma once

#include "loclab/errors.hpp"
#include "loclab/space.hpp"
#include "loclab/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace loclab {

inline constexpr double kDistributionTolerance = 1e-9;

/// Total variation without input checks, for inner loops over validated rows.
inline double tv_unchecked(std::span<const double> p, std::span<const double> q) {
    double acc = 0.0;
    for (std::size_t x = 0; x < p.size(); ++x)
        acc += std::abs(p[x] - q[x]);
    return 0.5 * acc;
}

/// Normalized total variation 1/2 sum_x |p(x) - q(x)|.
inline double tv(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw DimensionError("tv: distributions have different lengths");
    auto check = [](std::span<const double> d) {
        double s = 0.0;
        for (double v : d) {
            if (!std::isfinite(v) || v < 0.0)
                throw InvalidArgument("tv: input is not a distribution");
            s += v;
        }
        if (std::abs(s - 1.0) > kDistributionTolerance)
            throw InvalidArgument("tv: input does not sum to one");
    };
    check(p);
    check(q);
    return tv_unchecked(p, q);
}

inline double tv(const Distribution& p, const Distribution& q) {
    return tv(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())),
              std::span<const double>(q.data(), static_cast<std::size_t>(q.size())));
}

/// Coordinatewise oscillations delta_i(f) = max |f(x) - f(y)| over x, y that
/// agree off coordinate i. Each line {x : x_{-i} fixed} contributes its range.
inline OscillationVector oscillation(const StateFunction& f, const ProductSpace& space) {
    if (static_cast<std::size_t>(f.size()) != space.size())
        throw DimensionError("oscillation: function size does not match the state space");
    const std::size_t n = space.rank();
    OscillationVector d = OscillationVector::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const int m = space.extent(i);
        if (m == 1)
            continue;
        const std::size_t stride = space.stride(i);
        double best = 0.0;
        for (std::size_t s = 0; s < space.size(); ++s) {
            if (space.digit(s, i) != 0)
                continue;
            double lo = f(static_cast<Eigen::Index>(s));
            double hi = lo;
            for (int v = 1; v < m; ++v) {
                const double x = f(static_cast<Eigen::Index>(s + static_cast<std::size_t>(v) * stride));
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
            best = std::max(best, hi - lo);
        }
        d(static_cast<Eigen::Index>(i)) = best;
    }
    return d;
}

/// p(f) = ||delta(f)||_inf, the least Hamming-Lipschitz constant of f.
inline double oscillation_seminorm(const StateFunction& f, const ProductSpace& space) {
    return oscillation(f, space).maxCoeff();
}

/// max - min, the total oscillation of f.
inline double total_oscillation(const StateFunction& f) {
    return f.size() == 0 ? 0.0 : f.maxCoeff() - f.minCoeff();
}

/// inf_c ||f - c||_inf, attained at the midrange.
inline double aligned_sup_distance(const StateFunction& f, const StateFunction& g) {
    return 0.5 * total_oscillation(f - g);
}

/// Induced infinity norm: max absolute row sum.
inline double inf_norm(const Eigen::MatrixXd& m) {
    if (m.size() == 0)
        return 0.0;
    return m.cwiseAbs().rowwise().sum().maxCoeff();
}

inline void require_nonneg_square(const Eigen::MatrixXd& m, const char* who) {
    if (m.rows() != m.cols())
        throw DimensionError(std::string(who) + ": matrix is not square");
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const double v = m(r, c);
            if (std::isnan(v))
                throw InvalidArgument(std::string(who) + ": NaN entry");
            if (!std::isfinite(v) || v < 0.0)
                throw InvalidArgument(std::string(who) + ": entries must be finite and nonnegative");
        }
}

struct SpectralRadiusOptions {
    double shift = 1e-12;
    double tolerance = 1e-12;
    int max_iterations = 100'000;
    /// Accept the power estimate only when the Collatz-Wielandt bracket is this tight.
    double bracket_tolerance = 1e-10;
};

namespace detail {

/// A nonnegative matrix has spectral radius zero exactly when its support
/// digraph is acyclic. Kahn's algorithm on the positive entries.
inline bool support_is_acyclic(const Eigen::MatrixXd& m) {
    const Eigen::Index n = m.rows();
    std::vector<int> indeg(static_cast<std::size_t>(n), 0);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < n; ++c)
            if (m(r, c) > 0.0)
                ++indeg[static_cast<std::size_t>(c)];
    std::vector<Eigen::Index> ready;
    for (Eigen::Index v = 0; v < n; ++v)
        if (indeg[static_cast<std::size_t>(v)] == 0)
            ready.push_back(v);
    Eigen::Index seen = 0;
    while (!ready.empty()) {
        const Eigen::Index r = ready.back();
        ready.pop_back();
        ++seen;
        for (Eigen::Index c = 0; c < n; ++c)
            if (m(r, c) > 0.0 && --indeg[static_cast<std::size_t>(c)] == 0)
                ready.push_back(c);
    }
    return seen == n;
}

inline double dense_spectral_radius(const Eigen::MatrixXd& m) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
    if (es.info() != Eigen::Success)
        throw NumericalError("spectral_radius: dense eigensolver failed");
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

} // namespace detail

/// Perron root of a nonnegative matrix. Power iteration on m + shift*I from the
/// uniform vector; the result is accepted once successive estimates agree and
/// the Collatz-Wielandt bracket min/max (Ax)_i / x_i has closed, otherwise a
/// dense eigensolve decides.
inline double spectral_radius(const NonnegMatrix& m, const SpectralRadiusOptions& opt = {}) {
    require_nonneg_square(m, "spectral_radius");
    const Eigen::Index n = m.rows();
    if (n == 0 || detail::support_is_acyclic(m))
        return 0.0;

    Eigen::MatrixXd a = m;
    a.diagonal().array() += opt.shift;
    Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    double prev = -1.0;
    for (int it = 0; it < opt.max_iterations; ++it) {
        Eigen::VectorXd y = a * x;
        const double est = y.sum() / x.sum();
        y /= y.sum();
        const bool settled = std::abs(est - prev) < opt.tolerance;
        prev = est;
        x = std::move(y);
        if (!settled)
            continue;
        const Eigen::VectorXd ax = a * x;
        double lo = std::numeric_limits<double>::infinity();
        double hi = 0.0;
        bool positive = true;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (x(i) <= 1e-200) {
                positive = false;
                break;
            }
            const double ratio = ax(i) / x(i);
            lo = std::min(lo, ratio);
            hi = std::max(hi, ratio);
        }
        if (positive && hi - lo <= opt.bracket_tolerance)
            return std::max(0.0, 0.5 * (lo + hi) - opt.shift);
        break;
    }
    return detail::dense_spectral_radius(m);
}

/// max over t in [0, t_max] of ||m^t||_inf / lambda^t: an empirical stand-in
/// for the constant C in ||m^t|| <= C lambda^t. Powers that vanish exactly
/// end the scan.
inline double power_norm_constant(const NonnegMatrix& m, double lambda, int t_max = 64) {
    if (!(lambda > 0.0 && lambda < 1.0))
        throw InvalidArgument("power_norm_constant: lambda must lie in (0, 1)");
    if (t_max < 1)
        throw InvalidArgument("power_norm_constant: t_max must be at least 1");
    if (m.rows() != m.cols())
        throw DimensionError("power_norm_constant: matrix is not square");
    double best = 1.0; // t = 0
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(m.rows(), m.cols());
    double scale = 1.0;
    for (int t = 1; t <= t_max; ++t) {
        power = power * m;
        scale *= lambda;
        const double norm = inf_norm(power);
        if (norm == 0.0)
            break;
        best = std::max(best, norm / scale);
    }
    return best;
}

/// One propagation step of oscillations in the fixed orientation:
/// out_i = sum_j H(j, i) v_j, i.e. H^T v, summed in ascending j.
inline OscillationVector propagate(const NonnegMatrix& h, const OscillationVector& v) {
    if (h.rows() != h.cols() || h.rows() != v.size())
        throw DimensionError("propagate: shape mismatch");
    const Eigen::Index n = h.rows();
    OscillationVector out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < n; ++j)
            acc += h(j, i) * v(j);
        out(i) = acc;
    }
    return out;
}

inline OscillationVector propagate(const NonnegMatrix& h, OscillationVector v, int steps) {
    for (int t = 0; t < steps; ++t)
        v = propagate(h, v);
    return v;
}

} // namespace loclab
