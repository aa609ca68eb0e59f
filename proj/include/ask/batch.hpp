#pragma once

#include "ask/core_math.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace ask {

/// A mini-batch of paired embeddings. Row i of `audio` and `text` is the
/// pair (u_i, v_i). `ids` is either empty or holds the knowledge-base id of
/// every item, which enables self-exclusion and the out-of-batch split.
struct Batch {
    Mat audio;
    Mat text;
    std::vector<std::int64_t> ids;

    std::size_t size() const { return static_cast<std::size_t>(audio.rows()); }
    Eigen::Index dim() const { return audio.cols(); }
    std::optional<std::int64_t> id(std::size_t i) const {
        if (ids.empty()) return std::nullopt;
        return ids[i];
    }

    static Batch from_pairs(const std::vector<std::pair<UnitVector, UnitVector>>& pairs,
                            std::vector<std::int64_t> ids = {});
};

/// Throws EmptyBatch / DimensionMismatch / LengthMismatch on malformed input.
void validate_batch(const Batch& batch);

}  // namespace ask
