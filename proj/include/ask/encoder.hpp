#pragma once

#include "ask/core_math.hpp"
#include "ask/knowledge_base.hpp"
#include "ask/rng.hpp"

namespace ask {

/// Linear projection followed by L2 normalization. Desk-scale stand-in for
/// the audio and text towers of a dual encoder.
struct ToyEncoder {
    Mat W;  // d x d_in
    Side kind = Side::Audio;

    Eigen::Index dim() const { return W.rows(); }
    Eigen::Index input_dim() const { return W.cols(); }

    /// Gaussian init with entries N(0, 1/d_in).
    static ToyEncoder random(Eigen::Index d, Eigen::Index d_in, Side kind, Rng& rng);

    /// Encodes every row of `features`; rows of the result are unit vectors.
    Mat encode_rows(const Mat& features) const;

    Encoder as_encoder() const;
};

UnitVector encoder_forward(const ToyEncoder& enc, const Vec& x);

/// Gradient with respect to W of a loss whose gradient with respect to the
/// normalized output is `grad_out`: (I - u u^T) grad_out x^T / ||W x||.
Mat encoder_backward(const ToyEncoder& enc, const Vec& x, const Vec& grad_out);

}  // namespace ask
