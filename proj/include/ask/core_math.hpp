#pragma once

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

namespace ask {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Row i = text item i, column j = audio item j for text-to-audio matrices.
using SimMatrix = Eigen::MatrixXd;

constexpr double kZeroNormThreshold = 1e-12;
constexpr double kUnitNormTolerance = 1e-6;
constexpr double kProbSumTolerance = 1e-9;

/// An L2-normalized embedding. Construction validates the unit-norm
/// invariant, so every UnitVector in flight has ||v|| = 1 within 1e-6.
class UnitVector {
public:
    /// Wraps an already-normalized vector; throws ZeroNorm/InvalidArgument
    /// if the norm is not 1 within kUnitNormTolerance.
    static UnitVector from_normalized(Vec values);

    const Vec& values() const noexcept { return values_; }
    Eigen::Index dim() const noexcept { return values_.size(); }
    double operator[](Eigen::Index i) const { return values_[i]; }

private:
    explicit UnitVector(Vec values) : values_(std::move(values)) {}
    friend UnitVector l2_normalize(const Vec& v);

    Vec values_;
};

/// A discrete probability distribution: non-negative, sums to 1 within 1e-9.
class ProbDist {
public:
    static ProbDist from_values(Vec p);

    const Vec& values() const noexcept { return p_; }
    Eigen::Index size() const noexcept { return p_.size(); }
    double operator[](Eigen::Index i) const { return p_[i]; }

private:
    explicit ProbDist(Vec p) : p_(std::move(p)) {}
    friend ProbDist softmax(const Vec& x, double temperature);

    Vec p_;
};

UnitVector l2_normalize(const Vec& v);

double cosine_sim(const UnitVector& u, const UnitVector& v);

/// Entry (i, j) = U[i] . V[j].
SimMatrix pairwise_sim(std::span<const UnitVector> U, std::span<const UnitVector> V);

/// Same as pairwise_sim for row-stacked embeddings: (U * V^T).
SimMatrix pairwise_sim(const Mat& U, const Mat& V);

ProbDist softmax(const Vec& x, double temperature = 1.0);

/// Stable log(sum(exp(x))).
double log_sum_exp(const Eigen::Ref<const Vec>& x);

/// KL(p || q) in nats with 0 ln 0 = 0.
double kl_divergence(const ProbDist& p, const ProbDist& q);

double total_variation(const ProbDist& p, const ProbDist& q);

using ScalarFn = std::function<double(const Vec&)>;

/// Central-difference gradient. Step must lie in [1e-7, 1e-3].
Vec fd_gradient(const ScalarFn& f, const Vec& x, double h = 1e-5);

/// Stacks unit vectors as rows of a matrix.
Mat stack_rows(std::span<const UnitVector> vs);

/// Flattens a row-major view of the matrix into a vector and back. Used by
/// finite-difference checks that need to perturb whole embedding sets.
Vec flatten(const Mat& m);
Mat unflatten(const Vec& v, Eigen::Index rows, Eigen::Index cols);

}  // namespace ask
