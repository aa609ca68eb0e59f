#pragma once

#include "ask/batch.hpp"
#include "ask/knowledge_base.hpp"

#include <vector>

namespace ask {

struct RetrievalOptions {
    std::size_t k = 10;
    bool self_exclude = true;
};

/// The four top-K neighborhoods of one batch pair. Audio queries search the
/// audio side of each base, text queries the text side.
struct SampleRetrieval {
    Neighborhood fine_audio;
    Neighborhood fine_text;
    Neighborhood coarse_audio;
    Neighborhood coarse_text;
};

std::vector<SampleRetrieval> retrieve_batch(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                            const RetrievalOptions& options);

struct EnhancedPair {
    Vec u_fine;
    Vec v_fine;
    Vec u_coarse;
    Vec v_coarse;
    std::size_t source_index = 0;
};

/// Unweighted mean of the retrieved same-side embeddings.
Vec knowledge_vector(const Neighborhood& nb, const FineKB& kb);
Vec knowledge_vector(const Neighborhood& nb, const CoarseKB& kb);

/// rho * original + (1 - rho) * kvec, optionally re-normalized.
Vec inject(const Vec& original, const Vec& kvec, double rho, bool renormalize = true);
Vec inject(const UnitVector& original, const Vec& kvec, double rho, bool renormalize = true);

std::vector<EnhancedPair> enhance_batch(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                        const RetrievalOptions& options, double rho, bool renormalize = true);

/// Same as above for callers that already hold the retrieval result.
std::vector<EnhancedPair> enhance_batch(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                        const std::vector<SampleRetrieval>& retrieval, double rho,
                                        bool renormalize = true);

}  // namespace ask
