#pragma once

#include "ask/injection.hpp"

#include <vector>

namespace ask {

/// s_j = (1/K) sum_l partners[j] . retrieved[l], one score per partner row.
Vec consistency_scores(const Mat& partners, const Mat& retrieved);

/// Unit-temperature softmax over consistency scores.
ProbDist reliability_weights(const Vec& scores);

/// sum_j w_j exp(anchor . partners[j]).
double knowledge_potential(const Vec& anchor, const Mat& partners, const ProbDist& weights);

struct PotentialSet {
    double psi_f_t2a = 0.0;
    double psi_f_a2t = 0.0;
    double psi_c_t2a = 0.0;
    double psi_c_a2t = 0.0;
    std::size_t sample_index = 0;
};

/// Knowledge-side inputs of one potential: the partner embeddings and their
/// reliability weights. The anchor is supplied separately.
struct PotentialTerm {
    Mat partners;
    Vec weights;
};

struct SamplePotentialTerms {
    PotentialTerm fine_t2a;
    PotentialTerm fine_a2t;
    PotentialTerm coarse_t2a;
    PotentialTerm coarse_a2t;
};

/// Text-to-audio terms pair the audio partners of the text-retrieved
/// neighbors against the audio-retrieved neighborhood; audio-to-text swaps
/// the modalities. Coarse terms use prototype pairs the same way.
SamplePotentialTerms potential_terms(const SampleRetrieval& retrieval, const FineKB& fine, const CoarseKB& coarse);

std::vector<PotentialSet> batch_potentials(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                           const RetrievalOptions& options);

std::vector<PotentialSet> batch_potentials(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                           const std::vector<SampleRetrieval>& retrieval);

}  // namespace ask
