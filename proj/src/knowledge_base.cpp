#include "ask/knowledge_base.hpp"

#include "ask/error.hpp"
#include "ask/report_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_set>

namespace ask {

KBEntry FineKB::entry(std::size_t index) const {
    if (index >= size()) {
        throw Error(ErrorCode::IndexOutOfRange, fmt::format("entry {} of {}", index, size()));
    }
    const auto i = static_cast<Eigen::Index>(index);
    return KBEntry{ids[index], UnitVector::from_normalized(audio.row(i).transpose()),
                   UnitVector::from_normalized(text.row(i).transpose())};
}

FineKB build_fine_kb(const PairedFeatures& corpus, const Encoder& audio_encoder, const Encoder& text_encoder,
                     int epoch, std::vector<std::int64_t> ids) {
    const std::size_t n = corpus.size();
    if (n == 0) throw Error(ErrorCode::EmptyCorpus, "cannot build a knowledge base from an empty corpus");
    if (static_cast<std::size_t>(corpus.text.rows()) != n) {
        throw Error(ErrorCode::LengthMismatch, "audio and text feature counts differ");
    }
    if (ids.empty()) {
        ids.resize(n);
        std::iota(ids.begin(), ids.end(), std::int64_t{0});
    } else if (ids.size() != n) {
        throw Error(ErrorCode::LengthMismatch, fmt::format("{} ids for {} pairs", ids.size(), n));
    }
    if (std::unordered_set<std::int64_t>(ids.begin(), ids.end()).size() != n) {
        throw Error(ErrorCode::InvalidArgument, "knowledge base ids must be unique");
    }

    FineKB kb;
    kb.ids = std::move(ids);
    kb.built_at_epoch = epoch;
    Eigen::Index d = -1;
    for (std::size_t j = 0; j < n; ++j) {
        const auto r = static_cast<Eigen::Index>(j);
        const Vec a = audio_encoder(corpus.audio.row(r).transpose());
        const Vec t = text_encoder(corpus.text.row(r).transpose());
        if (d < 0) {
            d = a.size();
            kb.audio.resize(static_cast<Eigen::Index>(n), d);
            kb.text.resize(static_cast<Eigen::Index>(n), d);
        }
        if (a.size() != d || t.size() != d) {
            throw Error(ErrorCode::EncoderDimensionMismatch,
                        fmt::format("pair {}: audio dim {}, text dim {}, expected {}", j, a.size(), t.size(), d));
        }
        kb.audio.row(r) = l2_normalize(a).values().transpose();
        kb.text.row(r) = l2_normalize(t).values().transpose();
    }
    return kb;
}

namespace {

int nearest_centroid(const Mat& centroids, const Eigen::Ref<const Vec>& x, double* dist_sq) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double dd = (centroids.row(c).transpose() - x).squaredNorm();
        if (dd < best_d) {
            best_d = dd;
            best = static_cast<int>(c);
        }
    }
    if (dist_sq) *dist_sq = best_d;
    return best;
}

}  // namespace

KMeansResult kmeans(const Mat& points, std::size_t n_clusters, std::uint64_t seed, int max_iters) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (n_clusters < 1) throw Error(ErrorCode::InvalidArgument, "need at least one cluster");
    if (n_clusters > n) {
        throw Error(ErrorCode::TooManyClusters, fmt::format("{} clusters for {} points", n_clusters, n));
    }
    const auto k = static_cast<Eigen::Index>(n_clusters);
    std::mt19937_64 rng(seed);

    // k-means++ seeding
    Mat centroids(k, points.cols());
    std::vector<bool> chosen(n, false);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    centroids.row(0) = points.row(static_cast<Eigen::Index>(first));
    chosen[first] = true;
    for (Eigen::Index c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dd = (points.row(static_cast<Eigen::Index>(i)) - centroids.row(c - 1)).squaredNorm();
            d2[i] = std::min(d2[i], dd);
            if (!chosen[i]) total += d2[i];
        }
        std::size_t pick = n;
        if (total > 0.0) {
            const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (chosen[i]) continue;
                acc += d2[i];
                pick = i;
                if (acc > r) break;
            }
        } else {
            // Every remaining point duplicates a centroid.
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
            }
        }
        chosen[pick] = true;
        centroids.row(c) = points.row(static_cast<Eigen::Index>(pick));
    }

    KMeansResult result;
    std::vector<int> assignment(n, -1);
    std::vector<double> dist(n, 0.0);
    for (int iter = 1; iter <= std::max(1, max_iters); ++iter) {
        std::vector<int> next(n);
        for (std::size_t i = 0; i < n; ++i) {
            next[i] = nearest_centroid(centroids, points.row(static_cast<Eigen::Index>(i)).transpose(), &dist[i]);
        }

        std::vector<int> counts(n_clusters, 0);
        for (int a : next) ++counts[static_cast<std::size_t>(a)];
        for (std::size_t c = 0; c < n_clusters; ++c) {
            if (counts[c] > 0) continue;
            // Reseed with the farthest point among clusters that can spare one.
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[static_cast<std::size_t>(next[i])] > 1 && dist[i] > far_d) {
                    far_d = dist[i];
                    far = i;
                }
            }
            --counts[static_cast<std::size_t>(next[far])];
            next[far] = static_cast<int>(c);
            dist[far] = 0.0;
            counts[c] = 1;
        }

        centroids.setZero();
        for (std::size_t i = 0; i < n; ++i) centroids.row(next[i]) += points.row(static_cast<Eigen::Index>(i));
        for (std::size_t c = 0; c < n_clusters; ++c) centroids.row(static_cast<Eigen::Index>(c)) /= counts[c];

        result.iterations = iter;
        if (next == assignment) {
            result.converged = true;
            break;
        }
        assignment = std::move(next);
    }
    result.assignment = std::move(assignment);
    result.centroids = std::move(centroids);
    return result;
}

CoarseKB build_coarse_kb(const FineKB& fine, std::size_t n_clusters, std::uint64_t seed, int max_iters) {
    if (n_clusters > fine.size()) {
        throw Error(ErrorCode::TooManyClusters, fmt::format("{} clusters for {} entries", n_clusters, fine.size()));
    }
    KMeansResult km = kmeans(fine.audio, n_clusters, seed, max_iters);

    const auto k = static_cast<Eigen::Index>(n_clusters);
    const double lowest = std::numeric_limits<double>::lowest();
    CoarseKB coarse;
    coarse.audio = Mat::Constant(k, fine.dim(), lowest);
    coarse.text = Mat::Constant(k, fine.dim(), lowest);
    // Text prototypes pool the same member pairs as the audio clusters, which
    // keeps (audio_proto[m], text_proto[m]) cross-modally paired.
    for (std::size_t j = 0; j < fine.size(); ++j) {
        const auto m = static_cast<Eigen::Index>(km.assignment[j]);
        const auto r = static_cast<Eigen::Index>(j);
        coarse.audio.row(m) = coarse.audio.row(m).cwiseMax(fine.audio.row(r));
        coarse.text.row(m) = coarse.text.row(m).cwiseMax(fine.text.row(r));
    }
    coarse.assignment = std::move(km.assignment);
    coarse.built_at_epoch = fine.built_at_epoch;
    return coarse;
}

std::size_t clamp_clusters(std::size_t requested, std::size_t kb_size, std::string* warning) {
    if (requested <= kb_size) return requested;
    if (warning) {
        *warning = fmt::format("N_c = {} exceeds knowledge base size {}; clamped to {}", requested, kb_size, kb_size);
    }
    return kb_size;
}

Neighborhood top_k_rows(const Vec& query, const Mat& rows, std::size_t k, std::optional<std::size_t> exclude_index) {
    if (query.size() != rows.cols()) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("query dim {} vs KB dim {}", query.size(), rows.cols()));
    }
    const auto n = static_cast<std::size_t>(rows.rows());
    const std::size_t usable = n - (exclude_index && *exclude_index < n ? 1 : 0);
    if (k > usable || k == 0) {
        throw Error(ErrorCode::KTooLarge, fmt::format("K = {} with {} usable entries", k, usable));
    }
    const Vec sims = rows * query;
    std::vector<std::size_t> order;
    order.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (exclude_index && i == *exclude_index) continue;
        order.push_back(i);
    }
    auto better = [&](std::size_t a, std::size_t b) {
        const double sa = sims[static_cast<Eigen::Index>(a)];
        const double sb = sims[static_cast<Eigen::Index>(b)];
        return sa > sb || (sa == sb && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
    order.resize(k);

    Neighborhood nb;
    nb.indices = std::move(order);
    nb.sims.reserve(k);
    for (std::size_t i : nb.indices) nb.sims.push_back(sims[static_cast<Eigen::Index>(i)]);
    return nb;
}

Neighborhood top_k(const Vec& query, const FineKB& kb, Side side, std::size_t k, std::optional<std::int64_t> exclude_id) {
    std::optional<std::size_t> exclude_index;
    if (exclude_id) {
        auto it = std::find(kb.ids.begin(), kb.ids.end(), *exclude_id);
        if (it != kb.ids.end()) exclude_index = static_cast<std::size_t>(it - kb.ids.begin());
    }
    Neighborhood nb = top_k_rows(query, kb.side(side), k, exclude_index);
    nb.query_id = exclude_id;
    nb.side = side;
    nb.granularity = Granularity::Fine;
    return nb;
}

Neighborhood top_k(const UnitVector& query, const FineKB& kb, Side side, std::size_t k,
                   std::optional<std::int64_t> exclude_id) {
    return top_k(query.values(), kb, side, k, exclude_id);
}

Neighborhood top_k(const Vec& query, const CoarseKB& kb, Side side, std::size_t k) {
    Neighborhood nb = top_k_rows(query, kb.side(side), k);
    nb.side = side;
    nb.granularity = Granularity::Coarse;
    return nb;
}

bool should_refresh(int epoch, int period) {
    if (period < 1) throw Error(ErrorCode::NonPositivePeriod, fmt::format("period = {}", period));
    if (epoch < 0) throw Error(ErrorCode::InvalidArgument, fmt::format("epoch = {}", epoch));
    return epoch > 0 && epoch % period == 0;
}

std::pair<FineKB, CoarseKB> refresh(const FineKB& fine, const CoarseKB& coarse, const PairedFeatures& corpus,
                                    const Encoder& audio_encoder, const Encoder& text_encoder, int epoch,
                                    std::size_t n_clusters, std::uint64_t seed) {
    if (corpus.size() != fine.size()) {
        throw Error(ErrorCode::IndexMisalignment,
                    fmt::format("refresh corpus has {} pairs, knowledge base has {}", corpus.size(), fine.size()));
    }
    (void)coarse;  // replaced wholesale
    FineKB next_fine = build_fine_kb(corpus, audio_encoder, text_encoder, epoch, fine.ids);
    CoarseKB next_coarse = build_coarse_kb(next_fine, n_clusters, seed);
    return {std::move(next_fine), std::move(next_coarse)};
}

void save_snapshot(const std::filesystem::path& path, const FineKB& fine, const CoarseKB& coarse) {
    if (coarse.size() > 0 && coarse.dim() != fine.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "fine and coarse dimensions differ");
    }
    BinaryWriter w;
    w.put_bytes("ASKB");
    w.put_u32(kSnapshotVersion);
    w.put_u32(static_cast<std::uint32_t>(fine.dim()));
    w.put_u64(fine.size());
    w.put_u64(coarse.size());
    w.put_u64(static_cast<std::uint64_t>(fine.built_at_epoch));
    w.put_f32_block(fine.audio);
    w.put_f32_block(fine.text);
    w.put_f32_block(coarse.audio);
    w.put_f32_block(coarse.text);
    write_file_atomic(path, w.buffer());
}

std::pair<FineKB, CoarseKB> load_snapshot(const std::filesystem::path& path) {
    BinaryReader r(read_file(path));
    if (r.get_bytes(4) != "ASKB") throw Error(ErrorCode::IOError, "bad snapshot magic");
    const std::uint32_t version = r.get_u32();
    if (version != kSnapshotVersion) {
        throw Error(ErrorCode::IOError, fmt::format("unsupported snapshot version {}", version));
    }
    const auto d = static_cast<Eigen::Index>(r.get_u32());
    const auto n_k = static_cast<Eigen::Index>(r.get_u64());
    const auto n_c = static_cast<Eigen::Index>(r.get_u64());
    const auto built_at = static_cast<int>(r.get_u64());

    FineKB fine;
    fine.audio = r.get_f32_block(n_k, d);
    fine.text = r.get_f32_block(n_k, d);
    fine.ids.resize(static_cast<std::size_t>(n_k));
    std::iota(fine.ids.begin(), fine.ids.end(), std::int64_t{0});
    fine.built_at_epoch = built_at;

    CoarseKB coarse;
    coarse.audio = r.get_f32_block(n_c, d);
    coarse.text = r.get_f32_block(n_c, d);
    coarse.built_at_epoch = built_at;
    if (!r.at_end()) throw Error(ErrorCode::IOError, "trailing bytes in snapshot");
    return {std::move(fine), std::move(coarse)};
}

}  // namespace ask
