#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdlib>
#include <string>

namespace loclab {

/// Real-valued function on the joint state space, indexed in mixed-radix order.
using StateFunction = Eigen::VectorXd;

/// Row-stochastic |S| x |S| matrix, entry (s, s') = P(s' | s).
using StateKernel = Eigen::MatrixXd;

/// n x n nonnegative matrix. Row = influenced coordinate j, column = influencing
/// coordinate i, so entry (j, i) reads "influence of i on j".
using NonnegMatrix = Eigen::MatrixXd;

/// Per-coordinate sensitivities delta_i(f).
using OscillationVector = Eigen::VectorXd;

using Distribution = Eigen::VectorXd;

/// Enumeration guardrail. The evaluation count of an instance is
/// |S| * max(|A|, |S|), i.e. the number of conditional rows visited while
/// building the induced kernel or the dense state-to-state operator.
struct Limits {
    std::size_t max_evaluations = 1'000'000;

    /// Default limits, honouring LOCLAB_CAP when it holds a positive integer.
    static Limits from_environment() {
        Limits l;
        if (const char* env = std::getenv("LOCLAB_CAP")) {
            char* end = nullptr;
            const unsigned long long v = std::strtoull(env, &end, 10);
            if (end != env && *end == '\0' && v > 0)
                l.max_evaluations = static_cast<std::size_t>(v);
        }
        return l;
    }
};

} // namespace loclab
