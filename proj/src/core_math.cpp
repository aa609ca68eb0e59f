#include "ask/core_math.hpp"

#include "ask/error.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace ask {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::ZeroNorm: return "ZeroNorm";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::EmptyBatch: return "EmptyBatch";
        case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::SupportViolation: return "SupportViolation";
        case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
        case ErrorCode::InvalidStep: return "InvalidStep";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::EncoderDimensionMismatch: return "EncoderDimensionMismatch";
        case ErrorCode::TooManyClusters: return "TooManyClusters";
        case ErrorCode::KTooLarge: return "KTooLarge";
        case ErrorCode::NonPositivePeriod: return "NonPositivePeriod";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::RhoOutOfRange: return "RhoOutOfRange";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::NonPositiveEpsilon: return "NonPositiveEpsilon";
        case ErrorCode::BetaOutOfRange: return "BetaOutOfRange";
        case ErrorCode::NonPositiveTau: return "NonPositiveTau";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonPositivePotential: return "NonPositivePotential";
        case ErrorCode::EmptyOutOfBatchSet: return "EmptyOutOfBatchSet";
        case ErrorCode::EmptyKB: return "EmptyKB";
        case ErrorCode::IndexMisalignment: return "IndexMisalignment";
        case ErrorCode::InvalidCounts: return "InvalidCounts";
        case ErrorCode::KExceedsPoolSize: return "KExceedsPoolSize";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::IOError: return "IOError";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

UnitVector UnitVector::from_normalized(Vec values) {
    const double norm = values.norm();
    if (!(norm > kZeroNormThreshold)) {
        throw Error(ErrorCode::ZeroNorm, "vector norm is zero");
    }
    if (std::abs(norm - 1.0) > kUnitNormTolerance) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("expected unit norm, got {}", norm));
    }
    return UnitVector(std::move(values));
}

ProbDist ProbDist::from_values(Vec p) {
    if (p.size() == 0) {
        throw Error(ErrorCode::InvalidArgument, "empty distribution");
    }
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (!std::isfinite(p[i]) || p[i] < 0.0) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("invalid probability p[{}] = {}", i, p[i]));
        }
    }
    if (std::abs(p.sum() - 1.0) > kProbSumTolerance) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("probabilities sum to {}", p.sum()));
    }
    return ProbDist(std::move(p));
}

UnitVector l2_normalize(const Vec& v) {
    const double norm = v.norm();
    if (!(norm > kZeroNormThreshold)) {
        throw Error(ErrorCode::ZeroNorm, "cannot normalize a zero vector");
    }
    return UnitVector(v / norm);
}

double cosine_sim(const UnitVector& u, const UnitVector& v) {
    if (u.dim() != v.dim()) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("{} vs {}", u.dim(), v.dim()));
    }
    return u.values().dot(v.values());
}

Mat stack_rows(std::span<const UnitVector> vs) {
    if (vs.empty()) return Mat(0, 0);
    const Eigen::Index d = vs.front().dim();
    Mat m(static_cast<Eigen::Index>(vs.size()), d);
    for (std::size_t i = 0; i < vs.size(); ++i) {
        if (vs[i].dim() != d) {
            throw Error(ErrorCode::DimensionMismatch, fmt::format("row {} has dimension {}, expected {}", i, vs[i].dim(), d));
        }
        m.row(static_cast<Eigen::Index>(i)) = vs[i].values().transpose();
    }
    return m;
}

SimMatrix pairwise_sim(std::span<const UnitVector> U, std::span<const UnitVector> V) {
    if (U.empty() || V.empty()) {
        throw Error(ErrorCode::EmptyBatch, "pairwise_sim on an empty set");
    }
    if (U.size() != V.size()) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("set sizes {} vs {}", U.size(), V.size()));
    }
    return pairwise_sim(stack_rows(U), stack_rows(V));
}

SimMatrix pairwise_sim(const Mat& U, const Mat& V) {
    if (U.rows() == 0 || V.rows() == 0) {
        throw Error(ErrorCode::EmptyBatch, "pairwise_sim on an empty set");
    }
    if (U.cols() != V.cols()) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("{} vs {}", U.cols(), V.cols()));
    }
    return U * V.transpose();
}

double log_sum_exp(const Eigen::Ref<const Vec>& x) {
    const double m = x.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((x.array() - m).exp().sum());
}

ProbDist softmax(const Vec& x, double temperature) {
    if (!(temperature > 0.0)) {
        throw Error(ErrorCode::NonPositiveTemperature, fmt::format("temperature = {}", temperature));
    }
    if (x.size() == 0) {
        throw Error(ErrorCode::InvalidArgument, "softmax of an empty vector");
    }
    if (!x.allFinite()) {
        throw Error(ErrorCode::NonFiniteInput, "softmax input contains non-finite values");
    }
    const Vec scaled = x / temperature;
    Vec p = (scaled.array() - scaled.maxCoeff()).exp();
    p /= p.sum();
    return ProbDist(std::move(p));
}

double kl_divergence(const ProbDist& p, const ProbDist& q) {
    if (p.size() != q.size()) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("{} vs {}", p.size(), q.size()));
    }
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) {
            throw Error(ErrorCode::SupportViolation, fmt::format("p[{}] > 0 but q[{}] = 0", i, i));
        }
        kl += p[i] * std::log(p[i] / q[i]);
    }
    // Rounding can leave a tiny negative sum when p ~ q.
    return std::max(kl, 0.0);
}

double total_variation(const ProbDist& p, const ProbDist& q) {
    if (p.size() != q.size()) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("{} vs {}", p.size(), q.size()));
    }
    return 0.5 * (p.values() - q.values()).cwiseAbs().sum();
}

Vec fd_gradient(const ScalarFn& f, const Vec& x, double h) {
    if (!(h >= 1e-7 && h <= 1e-3)) {
        throw Error(ErrorCode::InvalidStep, fmt::format("step {} outside [1e-7, 1e-3]", h));
    }
    Vec grad(x.size());
    Vec probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = f(probe);
        probe[i] = x[i] - h;
        const double down = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw Error(ErrorCode::NonFiniteEvaluation, fmt::format("non-finite value at coordinate {}", i));
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

Vec flatten(const Mat& m) {
    Vec v(m.size());
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) v[k++] = m(r, c);
    }
    return v;
}

Mat unflatten(const Vec& v, Eigen::Index rows, Eigen::Index cols) {
    if (v.size() != rows * cols) {
        throw Error(ErrorCode::DimensionMismatch, "flattened size does not match shape");
    }
    Mat m(rows, cols);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[k++];
    }
    return m;
}

}  // namespace ask
