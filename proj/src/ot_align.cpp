#include "ask/ot_align.hpp"

#include "ask/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace ask {

TransportPlan sinkhorn(const SimMatrix& S, const SinkhornOptions& options) {
    if (!(options.epsilon > 0.0)) {
        throw Error(ErrorCode::NonPositiveEpsilon, fmt::format("epsilon = {}", options.epsilon));
    }
    if (S.rows() == 0 || S.rows() != S.cols()) {
        throw Error(ErrorCode::ShapeMismatch, fmt::format("expected a non-empty square matrix, got {}x{}", S.rows(), S.cols()));
    }
    if (!S.allFinite()) throw Error(ErrorCode::NonFiniteInput, "similarity matrix has non-finite entries");

    const Eigen::Index b = S.rows();
    const double eps = options.epsilon;
    TransportPlan plan;
    plan.epsilon = eps;
    if (b == 1) {
        plan.Q = Mat::Ones(1, 1);
        plan.converged = true;
        return plan;
    }

    const double log_marginal = -std::log(static_cast<double>(b));
    const double target = 1.0 / static_cast<double>(b);
    const Mat scaled = S / eps;
    // Row-wise log-sum-exp of scaled + 1 g^T / eps, and its column analog.
    auto row_lse = [&](const Vec& g) -> Vec {
        const Mat t = scaled.rowwise() + (g / eps).transpose();
        const Vec mx = t.rowwise().maxCoeff();
        return mx.array() + (t.colwise() - mx).array().exp().rowwise().sum().log();
    };
    auto col_lse = [&](const Vec& f) -> Vec {
        const Mat t = scaled.colwise() + f / eps;
        const Vec mx = t.colwise().maxCoeff().transpose();
        return mx.array() + (t.rowwise() - mx.transpose()).array().exp().colwise().sum().log().transpose();
    };

    Vec f = Vec::Zero(b);
    Vec g = Vec::Zero(b);
    Vec lse_rows = row_lse(g);
    for (int it = 1; it <= options.max_iters; ++it) {
        f = eps * (log_marginal - lse_rows.array());
        const Vec lse_cols = col_lse(f);
        g = eps * (log_marginal - lse_cols.array());
        // Marginals of the current plan without materializing it: row i sums
        // to exp(f_i / eps + lse_i), column j to exp(g_j / eps + lse_j).
        lse_rows = row_lse(g);
        const Vec row_sums = (f / eps + lse_rows).array().exp();
        const Vec col_sums = (g / eps + lse_cols).array().exp();
        const double violation = std::max((row_sums.array() - target).abs().maxCoeff(),
                                          (col_sums.array() - target).abs().maxCoeff());
        plan.dual_history.push_back((f.sum() + g.sum()) / static_cast<double>(b) + eps - eps * row_sums.sum());
        plan.iterations_used = it;
        if (violation < options.tol) {
            plan.converged = true;
            break;
        }
    }
    Mat Q = ((scaled.colwise() + f / eps).rowwise() + (g / eps).transpose()).array().exp();
    plan.Q = std::move(Q);
    return plan;
}

double entropic_objective(const Mat& Q, const SimMatrix& S, double epsilon) {
    double inner = 0.0;
    double entropy = 0.0;
    for (Eigen::Index i = 0; i < Q.rows(); ++i) {
        for (Eigen::Index j = 0; j < Q.cols(); ++j) {
            const double q = Q(i, j);
            inner += q * S(i, j);
            if (q > 0.0) entropy -= q * std::log(q);
        }
    }
    return inner + epsilon * entropy;
}

double marginal_violation(const Mat& Q) {
    const double target = 1.0 / static_cast<double>(Q.rows());
    const double rows = (Q.rowwise().sum().array() - target).abs().maxCoeff();
    const double cols = (Q.colwise().sum().array() - target).abs().maxCoeff();
    return std::max(rows, cols);
}

Mat mixing_matrix(const TransportPlan& plan, double beta, PlanScaling scaling) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::BetaOutOfRange, fmt::format("beta = {}", beta));
    const Eigen::Index b = plan.Q.rows();
    const double scale = scaling == PlanScaling::RowStochastic ? static_cast<double>(b) : 1.0;
    return (1.0 - beta) * Mat::Identity(b, b) + (beta * scale) * plan.Q;
}

SimMatrix realign(const SimMatrix& S, const TransportPlan& plan, double beta, PlanScaling scaling) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::BetaOutOfRange, fmt::format("beta = {}", beta));
    if (plan.Q.rows() != S.rows() || plan.Q.cols() != S.rows()) {
        throw Error(ErrorCode::ShapeMismatch, "plan and similarity shapes disagree");
    }
    if (beta == 0.0) return S;
    return mixing_matrix(plan, beta, scaling) * S;
}

}  // namespace ask
