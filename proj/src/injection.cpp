#include "ask/injection.hpp"

#include "ask/error.hpp"

#include <fmt/format.h>

namespace ask {

Batch Batch::from_pairs(const std::vector<std::pair<UnitVector, UnitVector>>& pairs, std::vector<std::int64_t> ids) {
    if (pairs.empty()) throw Error(ErrorCode::EmptyBatch, "batch has no pairs");
    Batch b;
    const Eigen::Index d = pairs.front().first.dim();
    b.audio.resize(static_cast<Eigen::Index>(pairs.size()), d);
    b.text.resize(static_cast<Eigen::Index>(pairs.size()), d);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& [u, v] = pairs[i];
        if (u.dim() != d || v.dim() != d) throw Error(ErrorCode::DimensionMismatch, fmt::format("pair {}", i));
        b.audio.row(static_cast<Eigen::Index>(i)) = u.values().transpose();
        b.text.row(static_cast<Eigen::Index>(i)) = v.values().transpose();
    }
    b.ids = std::move(ids);
    validate_batch(b);
    return b;
}

void validate_batch(const Batch& batch) {
    if (batch.audio.rows() == 0) throw Error(ErrorCode::EmptyBatch, "batch has no pairs");
    if (batch.text.rows() != batch.audio.rows()) {
        throw Error(ErrorCode::LengthMismatch, "audio and text row counts differ");
    }
    if (batch.text.cols() != batch.audio.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "audio and text dimensions differ");
    }
    if (!batch.ids.empty() && batch.ids.size() != batch.size()) {
        throw Error(ErrorCode::LengthMismatch, fmt::format("{} ids for {} pairs", batch.ids.size(), batch.size()));
    }
}

std::vector<SampleRetrieval> retrieve_batch(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                            const RetrievalOptions& options) {
    validate_batch(batch);
    std::vector<SampleRetrieval> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const Vec u = batch.audio.row(r).transpose();
        const Vec v = batch.text.row(r).transpose();
        const std::optional<std::int64_t> exclude = options.self_exclude ? batch.id(i) : std::nullopt;
        out.push_back(SampleRetrieval{
            top_k(u, fine, Side::Audio, options.k, exclude),
            top_k(v, fine, Side::Text, options.k, exclude),
            top_k(u, coarse, Side::Audio, options.k),
            top_k(v, coarse, Side::Text, options.k),
        });
    }
    return out;
}

namespace {

Vec mean_of_rows(const Neighborhood& nb, const Mat& rows) {
    if (nb.indices.empty()) throw Error(ErrorCode::InvalidArgument, "empty neighborhood");
    Vec acc = Vec::Zero(rows.cols());
    for (std::size_t idx : nb.indices) {
        if (idx >= static_cast<std::size_t>(rows.rows())) {
            throw Error(ErrorCode::IndexOutOfRange, fmt::format("neighbor {} of {}", idx, rows.rows()));
        }
        acc += rows.row(static_cast<Eigen::Index>(idx)).transpose();
    }
    return acc / static_cast<double>(nb.indices.size());
}

}  // namespace

Vec knowledge_vector(const Neighborhood& nb, const FineKB& kb) { return mean_of_rows(nb, kb.side(nb.side)); }

Vec knowledge_vector(const Neighborhood& nb, const CoarseKB& kb) { return mean_of_rows(nb, kb.side(nb.side)); }

Vec inject(const Vec& original, const Vec& kvec, double rho, bool renormalize) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw Error(ErrorCode::RhoOutOfRange, fmt::format("rho = {}", rho));
    if (original.size() != kvec.size()) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("{} vs {}", original.size(), kvec.size()));
    }
    // rho = 1 must reproduce the un-enhanced embedding bit for bit.
    if (rho == 1.0) return original;
    Vec blended = rho * original + (1.0 - rho) * kvec;
    if (renormalize) return l2_normalize(blended).values();
    return blended;
}

Vec inject(const UnitVector& original, const Vec& kvec, double rho, bool renormalize) {
    return inject(original.values(), kvec, rho, renormalize);
}

std::vector<EnhancedPair> enhance_batch(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                        const std::vector<SampleRetrieval>& retrieval, double rho, bool renormalize) {
    if (retrieval.size() != batch.size()) throw Error(ErrorCode::LengthMismatch, "retrieval does not match batch");
    std::vector<EnhancedPair> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const Vec u = batch.audio.row(r).transpose();
        const Vec v = batch.text.row(r).transpose();
        const SampleRetrieval& s = retrieval[i];
        out.push_back(EnhancedPair{
            inject(u, knowledge_vector(s.fine_audio, fine), rho, renormalize),
            inject(v, knowledge_vector(s.fine_text, fine), rho, renormalize),
            inject(u, knowledge_vector(s.coarse_audio, coarse), rho, renormalize),
            inject(v, knowledge_vector(s.coarse_text, coarse), rho, renormalize),
            i,
        });
    }
    return out;
}

std::vector<EnhancedPair> enhance_batch(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                        const RetrievalOptions& options, double rho, bool renormalize) {
    return enhance_batch(batch, fine, coarse, retrieve_batch(batch, fine, coarse, options), rho, renormalize);
}

}  // namespace ask
