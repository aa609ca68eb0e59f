#pragma once

#include "ask/core_math.hpp"

#include <vector>

namespace ask {

/// Entropic transport plan with uniform marginals 1/B on both sides.
struct TransportPlan {
    Mat Q;
    double epsilon = 0.05;
    int iterations_used = 0;
    bool converged = false;
    /// Value of the concave dual that Sinkhorn ascends, one entry per
    /// iteration. Non-decreasing; its negation is an upper bound on the
    /// optimal regularized objective and meets it at convergence.
    std::vector<double> dual_history;
};

struct SinkhornOptions {
    double epsilon = 0.05;
    int max_iters = 200;
    double tol = 1e-6;
};

/// Log-domain Sinkhorn-Knopp for max <Q,S> + eps H(Q) with uniform marginals.
/// Non-convergence is reported through `converged`, never thrown.
TransportPlan sinkhorn(const SimMatrix& S, const SinkhornOptions& options = {});

/// <Q,S> + eps H(Q), with H(Q) = -sum Q log Q and 0 log 0 = 0.
double entropic_objective(const Mat& Q, const SimMatrix& S, double epsilon);

/// Largest absolute deviation of any row or column sum from 1/B.
double marginal_violation(const Mat& Q);

enum class PlanScaling {
    RowStochastic,  // mix with B * Q so every row of the mixing matrix sums to 1
    Literal,        // mix with Q as is
};

/// (1 - beta) I + beta * P, where P is the scaled plan.
Mat mixing_matrix(const TransportPlan& plan, double beta, PlanScaling scaling = PlanScaling::RowStochastic);

/// S* = mixing_matrix(plan, beta) * S.
SimMatrix realign(const SimMatrix& S, const TransportPlan& plan, double beta,
                  PlanScaling scaling = PlanScaling::RowStochastic);

}  // namespace ask
