#include "ask/diagnostics.hpp"

#include "ask/error.hpp"
#include "ask/report_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ask {

ProbDist neighborhood_dist(const Vec& query, const Mat& kb_vectors, double temperature) {
    if (kb_vectors.rows() == 0) throw Error(ErrorCode::EmptyKB, "neighborhood over an empty knowledge base");
    if (kb_vectors.cols() != query.size()) throw Error(ErrorCode::DimensionMismatch, "query and KB dims differ");
    return softmax(kb_vectors * query, temperature);
}

RDMReport rdm(const Mat& samples, const Mat& kb_current, const Mat& kb_stale, double temperature, int model_epoch,
              int kb_epoch) {
    if (kb_current.rows() != kb_stale.rows() || kb_current.cols() != kb_stale.cols()) {
        throw Error(ErrorCode::IndexMisalignment,
                    fmt::format("current KB {}x{} vs stale KB {}x{}", kb_current.rows(), kb_current.cols(),
                                kb_stale.rows(), kb_stale.cols()));
    }
    if (model_epoch < kb_epoch) throw Error(ErrorCode::InvalidArgument, "model epoch precedes KB epoch");
    RDMReport report;
    report.model_epoch = model_epoch;
    report.kb_epoch = kb_epoch;
    report.per_sample_kl.reserve(static_cast<std::size_t>(samples.rows()));
    double acc = 0.0;
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        const Vec q = samples.row(i).transpose();
        const double kl = kl_divergence(neighborhood_dist(q, kb_current, temperature),
                                        neighborhood_dist(q, kb_stale, temperature));
        report.per_sample_kl.push_back(kl);
        acc += kl;
    }
    report.mean = samples.rows() > 0 ? acc / static_cast<double>(samples.rows()) : 0.0;
    return report;
}

Vec delta_k(const ProbDist& p_ideal, const ProbDist& p_actual, const Mat& kb_vectors) {
    if (p_ideal.size() != p_actual.size() || p_ideal.size() != kb_vectors.rows()) {
        throw Error(ErrorCode::LengthMismatch,
                    fmt::format("distributions {} / {} over {} vectors", p_ideal.size(), p_actual.size(), kb_vectors.rows()));
    }
    return kb_vectors.transpose() * (p_actual.values() - p_ideal.values());
}

BoundCheck pinsker_bound_check(const ProbDist& p_ideal, const ProbDist& p_actual, const Mat& kb_vectors) {
    BoundCheck check;
    check.delta_k_norm = delta_k(p_ideal, p_actual, kb_vectors).norm();
    check.rdm = kl_divergence(p_ideal, p_actual);
    check.C = kb_vectors.rowwise().norm().maxCoeff();
    check.bound = check.C * std::sqrt(2.0 * check.rdm);
    check.satisfied = check.delta_k_norm <= check.bound + kBoundSlack;
    return check;
}

namespace {

// Cayley transform of a skew-symmetric generator: an exact rotation.
Mat cayley_rotation(const Mat& skew, double angle) {
    const Eigen::Index d = skew.rows();
    const Mat I = Mat::Identity(d, d);
    return (I - 0.5 * angle * skew).partialPivLu().solve(I + 0.5 * angle * skew);
}

}  // namespace

std::vector<DriftStep> drift_simulation(const ToyEncoder& initial, DriftModel model, int steps, double magnitude,
                                        const Mat& corpus_features, double temperature, std::uint64_t seed,
                                        std::vector<EncoderSnapshot>* snapshots) {
    if (steps < 1) throw Error(ErrorCode::InvalidArgument, fmt::format("steps = {}", steps));
    if (!(magnitude >= 0.0)) throw Error(ErrorCode::InvalidArgument, fmt::format("magnitude = {}", magnitude));
    if (corpus_features.rows() == 0) throw Error(ErrorCode::EmptyCorpus, "drift simulation needs a corpus");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Index d = initial.dim();
    const Eigen::Index d_in = initial.input_dim();

    Mat rotation;
    if (model == DriftModel::RotationFlow) {
        Mat a(d, d);
        for (Eigen::Index r = 0; r < d; ++r) {
            for (Eigen::Index c = 0; c < d; ++c) a(r, c) = normal(rng);
        }
        Mat skew = a - a.transpose();
        skew /= skew.norm();
        rotation = cayley_rotation(skew, magnitude);
    }

    const Mat kb_stale = initial.encode_rows(corpus_features);
    ToyEncoder current = initial;
    if (snapshots) snapshots->push_back({0, current});

    std::vector<DriftStep> out;
    out.reserve(static_cast<std::size_t>(steps));
    const double walk_scale = magnitude / std::sqrt(static_cast<double>(d_in));
    for (int step = 1; step <= steps; ++step) {
        if (model == DriftModel::GaussianWalk) {
            for (Eigen::Index r = 0; r < d; ++r) {
                for (Eigen::Index c = 0; c < d_in; ++c) current.W(r, c) += walk_scale * normal(rng);
            }
        } else {
            current.W = rotation * current.W;
        }
        if (snapshots) snapshots->push_back({step, current});

        const Mat kb_current = current.encode_rows(corpus_features);
        DriftStep ds;
        ds.step = step;
        ds.rdm = rdm(kb_current, kb_current, kb_stale, temperature, step, 0);
        double dk = 0.0;
        double bound = 0.0;
        for (Eigen::Index i = 0; i < kb_current.rows(); ++i) {
            const Vec q = kb_current.row(i).transpose();
            const BoundCheck check = pinsker_bound_check(neighborhood_dist(q, kb_current, temperature),
                                                         neighborhood_dist(q, kb_stale, temperature), kb_stale);
            dk += check.delta_k_norm;
            bound += check.bound;
            if (!check.satisfied) ++ds.bound_violations;
        }
        ds.delta_k_mean = dk / static_cast<double>(kb_current.rows());
        ds.bound_mean = bound / static_cast<double>(kb_current.rows());
        out.push_back(std::move(ds));
    }
    return out;
}

void drift_trace_export(std::span<const EncoderSnapshot> snapshots, const Mat& sample_features,
                        std::span<const std::int64_t> sample_ids, const std::filesystem::path& path) {
    if (snapshots.size() < 2) throw Error(ErrorCode::InvalidArgument, "drift trace needs at least two snapshots");
    if (sample_ids.size() != static_cast<std::size_t>(sample_features.rows())) {
        throw Error(ErrorCode::LengthMismatch, "one id per sample is required");
    }
    const Eigen::Index d = snapshots.front().encoder.dim();
    std::string csv = "snapshot_epoch,sample_id";
    for (Eigen::Index c = 0; c < d; ++c) csv += fmt::format(",dim_{}", c);
    csv += '\n';
    for (const EncoderSnapshot& snap : snapshots) {
        const Mat emb = snap.encoder.encode_rows(sample_features);
        for (Eigen::Index i = 0; i < emb.rows(); ++i) {
            csv += fmt::format("{},{}", snap.epoch, sample_ids[static_cast<std::size_t>(i)]);
            for (Eigen::Index c = 0; c < d; ++c) csv += "," + format_double(emb(i, c));
            csv += '\n';
        }
    }
    write_file_atomic(path, csv);
}

BoundTrialSummary run_bound_trials(std::size_t trials, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> n_dist(2, 24);
    std::uniform_int_distribution<int> d_dist(2, 16);
    std::uniform_real_distribution<double> scale_dist(0.05, 6.0);

    BoundTrialSummary summary;
    summary.trials = trials;
    for (std::size_t t = 0; t < trials; ++t) {
        const int n = n_dist(rng);
        const int d = d_dist(rng);
        Mat z(n, d);
        for (int j = 0; j < n; ++j) {
            Vec row(d);
            for (int c = 0; c < d; ++c) row[c] = normal(rng);
            z.row(j) = l2_normalize(row).values().transpose();
        }
        auto random_dist = [&] {
            Vec logits(n);
            for (int j = 0; j < n; ++j) logits[j] = normal(rng);
            return softmax(logits, 1.0 / scale_dist(rng));
        };
        const ProbDist p = random_dist();
        const ProbDist q = random_dist();
        const BoundCheck check = pinsker_bound_check(p, q, z);
        if (check.satisfied) ++summary.satisfied;
        if (check.bound > 0.0) summary.max_ratio = std::max(summary.max_ratio, check.delta_k_norm / check.bound);
    }
    return summary;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::LengthMismatch, "spearman needs paired samples");
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace ask
