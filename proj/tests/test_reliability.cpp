#include "support.hpp"

#include "ask/reliability.hpp"

#include <numeric>

namespace ask {
namespace {

using test::random_unit;
using test::random_unit_rows;

Vec identity(const Vec& x) { return x; }

TEST(ConsistencyScores, AllEqualGivesOnes) {
    std::mt19937_64 rng(1);
    const Vec u = random_unit(rng, 5);
    const Mat rows = u.transpose().replicate(4, 1);
    const Vec s = consistency_scores(rows, rows);
    for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(s[j], 1.0, 1e-15);
}

TEST(ConsistencyScores, OrthogonalGivesZeros) {
    Mat partners(2, 3), retrieved(2, 3);
    partners << 1, 0, 0, 0, 1, 0;
    retrieved << 0, 0, 1, 0, 0, 1;
    EXPECT_EQ(consistency_scores(partners, retrieved), Vec::Zero(2));
}

TEST(ConsistencyScores, HandCase) {
    Mat partners(2, 2), retrieved(2, 2);
    partners << 1, 0, 0, 1;
    retrieved << 1, 0, 1, 0;
    const Vec s = consistency_scores(partners, retrieved);
    EXPECT_EQ(s[0], 1.0);
    EXPECT_EQ(s[1], 0.0);
    EXPECT_THROW_CODE(consistency_scores(partners, retrieved.topRows(1)), ErrorCode::LengthMismatch);
}

TEST(ReliabilityWeights, Cases) {
    const ProbDist uniform = reliability_weights(Vec::Constant(4, 0.3));
    for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(uniform[j], 0.25, 1e-15);
    Vec s(2);
    s << std::log(2.0), 0.0;
    const ProbDist w = reliability_weights(s);
    EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-15);
    std::mt19937_64 rng(2);
    const Vec r = random_unit(rng, 10);
    EXPECT_NEAR(reliability_weights(r).values().sum(), 1.0, 1e-12);
    EXPECT_LT((reliability_weights(r).values() - reliability_weights(Vec(r.array() + 0.7)).values()).cwiseAbs().maxCoeff(), 1e-15);
    Vec bad = Vec::Zero(2);
    bad[0] = std::numeric_limits<double>::infinity();
    EXPECT_THROW_CODE(reliability_weights(bad), ErrorCode::NonFiniteInput);
}

TEST(KnowledgePotential, Cases) {
    Mat partners(2, 3);
    partners << 0, 1, 0, 0, 0, 1;
    const ProbDist uniform = softmax(Vec::Zero(2));
    EXPECT_NEAR(knowledge_potential(Vec::Unit(3, 0), partners, uniform), 1.0, 1e-15);

    Mat same = Vec::Unit(3, 0).transpose().replicate(2, 1);
    EXPECT_NEAR(knowledge_potential(Vec::Unit(3, 0), same, uniform), std::exp(1.0), 1e-15);

    Mat mixed(2, 3);
    mixed << 1, 0, 0, 0, 1, 0;
    EXPECT_NEAR(knowledge_potential(Vec::Unit(3, 0), mixed, uniform), (std::exp(1.0) + 1.0) / 2.0, 1e-15);
    EXPECT_NEAR(knowledge_potential(Vec::Unit(3, 0), mixed, uniform), 1.85914, 1e-5);
    EXPECT_THROW_CODE(knowledge_potential(Vec::Unit(3, 0), mixed, softmax(Vec::Zero(3))), ErrorCode::LengthMismatch);
}

TEST(KnowledgePotential, BoundedAndMonotone) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 100; ++t) {
        const Vec anchor = random_unit(rng, 4);
        const Mat partners = random_unit_rows(rng, 5, 4);
        const ProbDist w = softmax(random_unit(rng, 5));
        const double psi = knowledge_potential(anchor, partners, w);
        EXPECT_GT(psi, 0.0);
        EXPECT_LE(psi, std::exp(1.0) + 1e-12);
        // Move partner 0 toward the anchor: its dot product grows, so psi must.
        Mat closer = partners;
        Vec p0 = partners.row(0).transpose() + 0.5 * anchor;
        closer.row(0) = (p0 / p0.norm()).transpose();
        if (closer.row(0).dot(anchor) > partners.row(0).dot(anchor)) {
            EXPECT_GT(knowledge_potential(anchor, closer, w), psi);
        }
    }
}

TEST(BatchPotentials, OwnPairCopiesGiveE) {
    std::mt19937_64 rng(4);
    const Vec u = random_unit(rng, 4), v = random_unit(rng, 4);
    const FineKB kb = build_fine_kb(PairedFeatures{u.transpose().replicate(6, 1), v.transpose().replicate(6, 1)},
                                    identity, identity, 0);
    const CoarseKB coarse = build_coarse_kb(kb, 2, 0);
    const Batch b{u.transpose(), v.transpose(), {}};
    const PotentialSet p = batch_potentials(b, kb, coarse, RetrievalOptions{2, false}).front();
    for (double psi : {p.psi_f_t2a, p.psi_f_a2t, p.psi_c_t2a, p.psi_c_a2t}) EXPECT_NEAR(psi, std::exp(1.0), 1e-12);
}

Mat gather(const Mat& rows, const Neighborhood& nb) {
    Mat out(static_cast<Eigen::Index>(nb.size()), rows.cols());
    for (std::size_t j = 0; j < nb.size(); ++j) out.row(static_cast<Eigen::Index>(j)) = rows.row(static_cast<Eigen::Index>(nb.indices[j]));
    return out;
}

TEST(BatchPotentials, MatchesStepByStepComposition) {
    std::mt19937_64 rng(5);
    const FineKB kb = test::random_fine_kb(rng, 50, 6);
    const CoarseKB coarse = build_coarse_kb(kb, 10, 3);
    const Batch b = test::batch_from_kb(kb, {17}, rng);
    const PotentialSet p = batch_potentials(b, kb, coarse, RetrievalOptions{5, true}).front();

    const Vec u = b.audio.row(0).transpose(), v = b.text.row(0).transpose();
    const Neighborhood nu = top_k(u, kb, Side::Audio, 5, b.ids[0]);
    const Neighborhood nv = top_k(v, kb, Side::Text, 5, b.ids[0]);
    // Text-to-audio: audio partners of the text neighbors, scored against the audio neighborhood.
    const Mat partners_t2a = gather(kb.audio, nv);
    const double f_t2a = knowledge_potential(u, partners_t2a, reliability_weights(consistency_scores(partners_t2a, gather(kb.audio, nu))));
    const Mat partners_a2t = gather(kb.text, nu);
    const double f_a2t = knowledge_potential(v, partners_a2t, reliability_weights(consistency_scores(partners_a2t, gather(kb.text, nv))));
    const Neighborhood cu = top_k(u, coarse, Side::Audio, 5), cv = top_k(v, coarse, Side::Text, 5);
    const Mat pc_t2a = gather(coarse.audio, cv), pc_a2t = gather(coarse.text, cu);
    const double c_t2a = knowledge_potential(u, pc_t2a, reliability_weights(consistency_scores(pc_t2a, gather(coarse.audio, cu))));
    const double c_a2t = knowledge_potential(v, pc_a2t, reliability_weights(consistency_scores(pc_a2t, gather(coarse.text, cv))));

    EXPECT_NEAR(p.psi_f_t2a, f_t2a, 1e-14);
    EXPECT_NEAR(p.psi_f_a2t, f_a2t, 1e-14);
    EXPECT_NEAR(p.psi_c_t2a, c_t2a, 1e-14);
    EXPECT_NEAR(p.psi_c_a2t, c_a2t, 1e-14);
}

TEST(BatchPotentials, InvariantToKBOrder) {
    std::mt19937_64 rng(6);
    const FineKB kb = test::random_fine_kb(rng, 40, 5);
    const CoarseKB coarse = build_coarse_kb(kb, 8, 1);
    std::vector<Eigen::Index> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    FineKB shuffled = kb;
    for (Eigen::Index i = 0; i < 40; ++i) {
        shuffled.audio.row(i) = kb.audio.row(perm[static_cast<std::size_t>(i)]);
        shuffled.text.row(i) = kb.text.row(perm[static_cast<std::size_t>(i)]);
        shuffled.ids[static_cast<std::size_t>(i)] = kb.ids[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    CoarseKB coarse_shuffled = coarse;
    coarse_shuffled.audio = coarse.audio.colwise().reverse();
    coarse_shuffled.text = coarse.text.colwise().reverse();
    const Batch b = test::batch_from_kb(kb, {3, 11}, rng);
    const auto a = batch_potentials(b, kb, coarse, RetrievalOptions{4, true});
    const auto s = batch_potentials(b, shuffled, coarse_shuffled, RetrievalOptions{4, true});
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(a[i].psi_f_t2a, s[i].psi_f_t2a, 1e-13);
        EXPECT_NEAR(a[i].psi_f_a2t, s[i].psi_f_a2t, 1e-13);
        EXPECT_NEAR(a[i].psi_c_t2a, s[i].psi_c_t2a, 1e-13);
        EXPECT_NEAR(a[i].psi_c_a2t, s[i].psi_c_a2t, 1e-13);
    }
}

}  // namespace
}  // namespace ask
