#pragma once

#include "ask/core_math.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ask {

enum class Side { Audio, Text };
enum class Granularity { Fine, Coarse };

/// Raw paired features, one row per audio-text pair.
struct PairedFeatures {
    Mat audio;
    Mat text;

    std::size_t size() const { return static_cast<std::size_t>(audio.rows()); }
};

/// Maps a raw feature row to an embedding. Outputs are normalized by the KB
/// builder, so encoders may return unnormalized vectors.
using Encoder = std::function<Vec(const Vec&)>;

struct KBEntry {
    std::int64_t id;
    UnitVector audio;
    UnitVector text;
};

/// Instance-level knowledge: every source pair encoded with the encoders of
/// one epoch. Rows of `audio` and `text` are unit vectors and index-aligned.
struct FineKB {
    Mat audio;
    Mat text;
    std::vector<std::int64_t> ids;
    int built_at_epoch = 0;

    std::size_t size() const { return ids.size(); }
    Eigen::Index dim() const { return audio.cols(); }
    const Mat& side(Side s) const { return s == Side::Audio ? audio : text; }
    Mat& side(Side s) { return s == Side::Audio ? audio : text; }
    KBEntry entry(std::size_t index) const;
};

/// Cluster-level knowledge. Prototypes are elementwise maxima over cluster
/// members and are not renormalized.
struct CoarseKB {
    Mat audio;
    Mat text;
    std::vector<int> assignment;  // fine entry index -> cluster; empty after import
    int built_at_epoch = 0;

    std::size_t size() const { return static_cast<std::size_t>(audio.rows()); }
    Eigen::Index dim() const { return audio.cols(); }
    const Mat& side(Side s) const { return s == Side::Audio ? audio : text; }
    Mat& side(Side s) { return s == Side::Audio ? audio : text; }
};

struct Neighborhood {
    std::optional<std::int64_t> query_id;
    std::vector<std::size_t> indices;
    std::vector<double> sims;  // non-increasing
    Side side = Side::Audio;
    Granularity granularity = Granularity::Fine;

    std::size_t size() const { return indices.size(); }
};

struct KMeansResult {
    std::vector<int> assignment;
    Mat centroids;
    int iterations = 0;
    bool converged = false;
};

FineKB build_fine_kb(const PairedFeatures& corpus, const Encoder& audio_encoder, const Encoder& text_encoder,
                     int epoch, std::vector<std::int64_t> ids = {});

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or max_iters is reached. Empty clusters are reseeded with the
/// point farthest from its current centroid.
KMeansResult kmeans(const Mat& points, std::size_t n_clusters, std::uint64_t seed, int max_iters = 100);

CoarseKB build_coarse_kb(const FineKB& fine, std::size_t n_clusters, std::uint64_t seed, int max_iters = 100);

/// Clamps a requested cluster count to the KB size. Returns the warning text
/// in `warning` when clamping happened.
std::size_t clamp_clusters(std::size_t requested, std::size_t kb_size, std::string* warning = nullptr);

/// Exact top-K by dot product; ties go to the lower row index.
Neighborhood top_k_rows(const Vec& query, const Mat& rows, std::size_t k,
                        std::optional<std::size_t> exclude_index = std::nullopt);

Neighborhood top_k(const Vec& query, const FineKB& kb, Side side, std::size_t k,
                   std::optional<std::int64_t> exclude_id = std::nullopt);
Neighborhood top_k(const UnitVector& query, const FineKB& kb, Side side, std::size_t k,
                   std::optional<std::int64_t> exclude_id = std::nullopt);
Neighborhood top_k(const Vec& query, const CoarseKB& kb, Side side, std::size_t k);

/// True iff epoch > 0 and epoch is a multiple of period.
bool should_refresh(int epoch, int period);

std::pair<FineKB, CoarseKB> refresh(const FineKB& fine, const CoarseKB& coarse, const PairedFeatures& corpus,
                                    const Encoder& audio_encoder, const Encoder& text_encoder, int epoch,
                                    std::size_t n_clusters, std::uint64_t seed);

/// Binary snapshot: "ASKB", u32 version, u32 d, u64 N_k, u64 N_c, u64 built_at,
/// then little-endian f32 row-major blocks fine audio, fine text, coarse audio,
/// coarse text. Imported ids are 0..N_k-1.
void save_snapshot(const std::filesystem::path& path, const FineKB& fine, const CoarseKB& coarse);
std::pair<FineKB, CoarseKB> load_snapshot(const std::filesystem::path& path);

constexpr std::uint32_t kSnapshotVersion = 1;

}  // namespace ask
