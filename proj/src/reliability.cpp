#include "ask/reliability.hpp"

#include "ask/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace ask {

Vec consistency_scores(const Mat& partners, const Mat& retrieved) {
    if (partners.rows() != retrieved.rows() || partners.rows() == 0) {
        throw Error(ErrorCode::LengthMismatch,
                    fmt::format("{} partners vs {} retrieved", partners.rows(), retrieved.rows()));
    }
    if (partners.cols() != retrieved.cols()) throw Error(ErrorCode::DimensionMismatch, "embedding dims differ");
    const Vec retrieved_mean = retrieved.colwise().sum().transpose() / static_cast<double>(retrieved.rows());
    return partners * retrieved_mean;
}

ProbDist reliability_weights(const Vec& scores) { return softmax(scores, 1.0); }

double knowledge_potential(const Vec& anchor, const Mat& partners, const ProbDist& weights) {
    if (partners.rows() != weights.size()) {
        throw Error(ErrorCode::LengthMismatch, fmt::format("{} partners vs {} weights", partners.rows(), weights.size()));
    }
    if (partners.cols() != anchor.size()) throw Error(ErrorCode::DimensionMismatch, "anchor dim differs");
    const Vec e = (partners * anchor).array().exp();
    return weights.values().dot(e);
}

namespace {

Mat gather_rows(const Mat& rows, const Neighborhood& nb) {
    Mat out(static_cast<Eigen::Index>(nb.size()), rows.cols());
    for (std::size_t j = 0; j < nb.size(); ++j) {
        out.row(static_cast<Eigen::Index>(j)) = rows.row(static_cast<Eigen::Index>(nb.indices[j]));
    }
    return out;
}

PotentialTerm make_term(const Mat& side_rows, const Neighborhood& partner_nb, const Neighborhood& retrieved_nb) {
    PotentialTerm term;
    term.partners = gather_rows(side_rows, partner_nb);
    term.weights = reliability_weights(consistency_scores(term.partners, gather_rows(side_rows, retrieved_nb))).values();
    return term;
}

}  // namespace

SamplePotentialTerms potential_terms(const SampleRetrieval& s, const FineKB& fine, const CoarseKB& coarse) {
    return SamplePotentialTerms{
        make_term(fine.audio, s.fine_text, s.fine_audio),
        make_term(fine.text, s.fine_audio, s.fine_text),
        make_term(coarse.audio, s.coarse_text, s.coarse_audio),
        make_term(coarse.text, s.coarse_audio, s.coarse_text),
    };
}

std::vector<PotentialSet> batch_potentials(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                           const std::vector<SampleRetrieval>& retrieval) {
    if (retrieval.size() != batch.size()) throw Error(ErrorCode::LengthMismatch, "retrieval does not match batch");
    std::vector<PotentialSet> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const Vec u = batch.audio.row(r).transpose();
        const Vec v = batch.text.row(r).transpose();
        const SamplePotentialTerms t = potential_terms(retrieval[i], fine, coarse);
        auto psi = [](const Vec& anchor, const PotentialTerm& term) {
            return knowledge_potential(anchor, term.partners, ProbDist::from_values(term.weights));
        };
        out.push_back(PotentialSet{psi(u, t.fine_t2a), psi(v, t.fine_a2t), psi(u, t.coarse_t2a), psi(v, t.coarse_a2t), i});
    }
    return out;
}

std::vector<PotentialSet> batch_potentials(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                           const RetrievalOptions& options) {
    return batch_potentials(batch, fine, coarse, retrieve_batch(batch, fine, coarse, options));
}

}  // namespace ask
