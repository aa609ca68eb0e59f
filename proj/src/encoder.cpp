#include "ask/encoder.hpp"

#include "ask/error.hpp"

#include <fmt/format.h>

#include <cmath>
#include <random>

namespace ask {

ToyEncoder ToyEncoder::random(Eigen::Index d, Eigen::Index d_in, Side kind, Rng& rng) {
    if (d < 2 || d_in < 1) throw Error(ErrorCode::InvalidArgument, fmt::format("encoder shape {}x{}", d, d_in));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d_in)));
    ToyEncoder enc;
    enc.kind = kind;
    enc.W.resize(d, d_in);
    for (Eigen::Index r = 0; r < d; ++r) {
        for (Eigen::Index c = 0; c < d_in; ++c) enc.W(r, c) = normal(rng);
    }
    return enc;
}

Mat ToyEncoder::encode_rows(const Mat& features) const {
    if (features.cols() != W.cols()) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("features have {} columns, encoder expects {}", features.cols(), W.cols()));
    }
    Mat out = features * W.transpose();
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double n = out.row(i).norm();
        if (!(n > kZeroNormThreshold)) throw Error(ErrorCode::ZeroNorm, fmt::format("row {} encodes to zero", i));
        out.row(i) /= n;
    }
    return out;
}

Encoder ToyEncoder::as_encoder() const {
    return [w = W](const Vec& x) -> Vec { return w * x; };
}

UnitVector encoder_forward(const ToyEncoder& enc, const Vec& x) {
    if (x.size() != enc.W.cols()) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("input dim {} vs {}", x.size(), enc.W.cols()));
    }
    return l2_normalize(enc.W * x);
}

Mat encoder_backward(const ToyEncoder& enc, const Vec& x, const Vec& grad_out) {
    if (x.size() != enc.W.cols() || grad_out.size() != enc.W.rows()) {
        throw Error(ErrorCode::DimensionMismatch, "encoder_backward shapes disagree");
    }
    const Vec y = enc.W * x;
    const double norm = y.norm();
    if (!(norm > kZeroNormThreshold)) throw Error(ErrorCode::ZeroNorm, "W x vanished");
    const Vec u = y / norm;
    const Vec grad_y = (grad_out - u * u.dot(grad_out)) / norm;
    return grad_y * x.transpose();
}

}  // namespace ask
