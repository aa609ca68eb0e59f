#include "support.hpp"

#include "ask/diagnostics.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ask {
namespace {

using test::random_unit;
using test::random_unit_rows;

TEST(NeighborhoodDist, MatchesSoftmaxOfDots) {
    std::mt19937_64 rng(1);
    const Mat kb = random_unit_rows(rng, 7, 4);
    const Vec q = random_unit(rng, 4);
    const ProbDist p = neighborhood_dist(q, kb, 0.5);
    double z = 0.0;
    for (Eigen::Index j = 0; j < 7; ++j) z += std::exp(kb.row(j).dot(q) / 0.5);
    for (Eigen::Index j = 0; j < 7; ++j) EXPECT_NEAR(p[j], std::exp(kb.row(j).dot(q) / 0.5) / z, 1e-14);
    EXPECT_THROW_CODE(neighborhood_dist(q, Mat(0, 4)), ErrorCode::EmptyKB);
}

TEST(Rdm, IdenticalBasesGiveZero) {
    std::mt19937_64 rng(2);
    const Mat kb = random_unit_rows(rng, 10, 5);
    const RDMReport r = rdm(random_unit_rows(rng, 6, 5), kb, kb);
    EXPECT_EQ(r.mean, 0.0);
    EXPECT_EQ(r.per_sample_kl.size(), 6u);
}

TEST(Rdm, TwoEntryHandCase) {
    Mat current(2, 2), stale(2, 2);
    current << 1, 0, 0, 1;
    stale << 0, 1, 1, 0;
    Mat sample(1, 2);
    sample << 1, 0;
    // P_ideal = softmax(1, 0), P_actual = softmax(0, 1).
    const double a = std::exp(1.0) / (std::exp(1.0) + 1.0);
    const double expected = a * std::log(a / (1 - a)) + (1 - a) * std::log((1 - a) / a);
    EXPECT_NEAR(rdm(sample, current, stale).mean, expected, 1e-14);
}

TEST(Rdm, Errors) {
    std::mt19937_64 rng(3);
    const Mat kb = random_unit_rows(rng, 4, 3);
    EXPECT_THROW_CODE(rdm(kb, kb, random_unit_rows(rng, 5, 3)), ErrorCode::IndexMisalignment);
    EXPECT_THROW_CODE(rdm(kb, kb, kb, 1.0, 1, 2), ErrorCode::InvalidArgument);
}

TEST(DeltaK, Cases) {
    std::mt19937_64 rng(4);
    const Mat z = random_unit_rows(rng, 5, 3);
    const ProbDist p = softmax(random_unit(rng, 5));
    EXPECT_EQ(delta_k(p, p, z).cwiseAbs().maxCoeff(), 0.0);
    const ProbDist q = softmax(random_unit(rng, 5));
    Vec oracle = Vec::Zero(3);
    for (Eigen::Index j = 0; j < 5; ++j) oracle += (q[j] - p[j]) * z.row(j).transpose();
    EXPECT_LT((delta_k(p, q, z) - oracle).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_THROW_CODE(delta_k(p, q, z.topRows(4)), ErrorCode::LengthMismatch);
}

TEST(PinskerBound, HoldsOnRandomTrials) {
    const BoundTrialSummary s = run_bound_trials(1000, 7);
    EXPECT_EQ(s.trials, 1000u);
    EXPECT_EQ(s.satisfied, 1000u);
    EXPECT_LE(s.max_ratio, 1.0);
    EXPECT_GT(s.max_ratio, 0.0);
}

TEST(PinskerBound, UsesLargestKnowledgeNorm) {
    Mat z(2, 2);
    z << 3, 0, 0, 1;
    Vec a(2), b(2);
    a << 0.3, 0.7;
    b << 0.6, 0.4;
    const ProbDist p = ProbDist::from_values(a), q = ProbDist::from_values(b);
    const BoundCheck c = pinsker_bound_check(p, q, z);
    EXPECT_EQ(c.C, 3.0);
    EXPECT_NEAR(c.rdm, kl_divergence(p, q), 1e-15);
    EXPECT_NEAR(c.bound, 3.0 * std::sqrt(2.0 * c.rdm), 1e-14);
    EXPECT_NEAR(c.delta_k_norm, std::hypot(0.9, -0.3), 1e-14);
    EXPECT_TRUE(c.satisfied);
}

ToyEncoder encoder(std::uint64_t seed, Eigen::Index d = 6, Eigen::Index d_in = 10) {
    Rng rng(seed);
    return ToyEncoder::random(d, d_in, Side::Audio, rng);
}

Mat features(std::uint64_t seed, Eigen::Index n, Eigen::Index d_in) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat x(n, d_in);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    return x;
}

TEST(DriftSimulation, ZeroMagnitudeHasNoDrift) {
    for (DriftModel m : {DriftModel::GaussianWalk, DriftModel::RotationFlow}) {
        const auto steps = drift_simulation(encoder(1), m, 4, 0.0, features(2, 30, 10), 1.0, 3);
        ASSERT_EQ(steps.size(), 4u);
        for (const DriftStep& s : steps) {
            EXPECT_LT(s.rdm.mean, 1e-20);
            EXPECT_LT(s.delta_k_mean, 1e-12);
        }
    }
}

TEST(DriftSimulation, DeterministicForSeed) {
    const auto a = drift_simulation(encoder(1), DriftModel::GaussianWalk, 5, 0.1, features(2, 30, 10), 1.0, 9);
    const auto b = drift_simulation(encoder(1), DriftModel::GaussianWalk, 5, 0.1, features(2, 30, 10), 1.0, 9);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].rdm.mean, b[i].rdm.mean);
        EXPECT_EQ(a[i].delta_k_mean, b[i].delta_k_mean);
    }
}

TEST(DriftSimulation, RdmGrowsWithSteps) {
    for (DriftModel m : {DriftModel::GaussianWalk, DriftModel::RotationFlow}) {
        const auto steps = drift_simulation(encoder(4), m, 20, 0.05, features(5, 60, 10), 1.0, 6);
        std::vector<double> x, y;
        for (const DriftStep& s : steps) {
            x.push_back(static_cast<double>(s.step));
            y.push_back(s.rdm.mean);
            EXPECT_EQ(s.bound_violations, 0u);
            EXPECT_LE(s.delta_k_mean, s.bound_mean + 1e-12);
        }
        EXPECT_GT(spearman(x, y), 0.9);
    }
}

TEST(DriftSimulation, Errors) {
    EXPECT_THROW_CODE(drift_simulation(encoder(1), DriftModel::GaussianWalk, 0, 0.1, features(2, 5, 10), 1.0, 1),
                      ErrorCode::InvalidArgument);
    EXPECT_THROW_CODE(drift_simulation(encoder(1), DriftModel::GaussianWalk, 2, 0.1, Mat(0, 10), 1.0, 1),
                      ErrorCode::EmptyCorpus);
}

TEST(DriftTraceExport, WritesHeaderAndOneRowPerSnapshotSample) {
    std::vector<EncoderSnapshot> snaps;
    drift_simulation(encoder(1, 3, 4), DriftModel::GaussianWalk, 2, 0.1, features(2, 5, 4), 1.0, 1, &snaps);
    ASSERT_EQ(snaps.size(), 3u);
    const auto path = std::filesystem::temp_directory_path() / "ask_drift_trace_test.csv";
    const std::vector<std::int64_t> ids{10, 11, 12};
    drift_trace_export(snaps, features(8, 3, 4), ids, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "snapshot_epoch,sample_id,dim_0,dim_1,dim_2");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
    }
    EXPECT_EQ(rows, 9);
    std::filesystem::remove(path);
    EXPECT_THROW_CODE(drift_trace_export(std::span(snaps).first(1), features(8, 3, 4), ids, path),
                      ErrorCode::InvalidArgument);
}

TEST(Spearman, Cases) {
    const std::vector<double> x{1, 2, 3, 4};
    const std::vector<double> up{10, 20, 30, 40}, down{4, 3, 2, 1}, ties{1, 1, 2, 2};
    EXPECT_NEAR(spearman(x, up), 1.0, 1e-15);
    EXPECT_NEAR(spearman(x, down), -1.0, 1e-15);
    EXPECT_NEAR(spearman(x, ties), 4.0 / std::sqrt(20.0), 1e-12);
}

}  // namespace
}  // namespace ask
