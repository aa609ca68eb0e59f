#pragma once

#include "ask/core_math.hpp"
#include "ask/encoder.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ask {

/// Softmax over query . kb_vectors[j] at the given temperature.
ProbDist neighborhood_dist(const Vec& query, const Mat& kb_vectors, double temperature = 1.0);

struct RDMReport {
    std::vector<double> per_sample_kl;  // nats
    double mean = 0.0;
    int model_epoch = 0;
    int kb_epoch = 0;
};

/// Per sample KL(P_ideal || P_actual): P_ideal scores the query against the
/// re-encoded KB, P_actual against the stale one. Rows of the two KB
/// matrices must describe the same items.
RDMReport rdm(const Mat& samples, const Mat& kb_current, const Mat& kb_stale, double temperature = 1.0,
              int model_epoch = 0, int kb_epoch = 0);

/// sum_j (P_actual(j) - P_ideal(j)) z_j
Vec delta_k(const ProbDist& p_ideal, const ProbDist& p_actual, const Mat& kb_vectors);

struct BoundCheck {
    double delta_k_norm = 0.0;
    double rdm = 0.0;
    double C = 0.0;
    double bound = 0.0;
    bool satisfied = false;
};

constexpr double kBoundSlack = 1e-9;

/// ||delta_k|| <= C sqrt(2 KL) with C = max_j ||z_j||.
BoundCheck pinsker_bound_check(const ProbDist& p_ideal, const ProbDist& p_actual, const Mat& kb_vectors);

enum class DriftModel { GaussianWalk, RotationFlow };

struct DriftStep {
    int step = 0;
    RDMReport rdm;
    double delta_k_mean = 0.0;
    double bound_mean = 0.0;
    std::size_t bound_violations = 0;
};

struct EncoderSnapshot {
    int epoch = 0;
    ToyEncoder encoder;
};

/// Perturbs the encoder `steps` times and measures RDM of the corpus against
/// the KB encoded by the step-0 encoder. Step k's report reflects k updates.
/// When `snapshots` is non-null it receives the step-0 encoder followed by
/// the encoder after every step.
std::vector<DriftStep> drift_simulation(const ToyEncoder& initial, DriftModel model, int steps, double magnitude,
                                        const Mat& corpus_features, double temperature, std::uint64_t seed,
                                        std::vector<EncoderSnapshot>* snapshots = nullptr);

/// CSV with header snapshot_epoch,sample_id,dim_0..dim_{d-1}; one row per
/// (snapshot, sample).
void drift_trace_export(std::span<const EncoderSnapshot> snapshots, const Mat& sample_features,
                        std::span<const std::int64_t> sample_ids, const std::filesystem::path& path);

struct BoundTrialSummary {
    std::size_t trials = 0;
    std::size_t satisfied = 0;
    double max_ratio = 0.0;  // max ||delta_k|| / bound over trials with a positive bound
};

/// Randomized (P_ideal, P_actual, unit z) triples checked against the bound.
BoundTrialSummary run_bound_trials(std::size_t trials, std::uint64_t seed);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace ask
