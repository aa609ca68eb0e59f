#pragma once

#include "ask/core_math.hpp"
#include "ask/error.hpp"
#include "ask/knowledge_base.hpp"
#include "ask/batch.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace ask::test {

inline Vec random_unit(std::mt19937_64& rng, Eigen::Index d) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = normal(rng);
    return v / v.norm();
}

inline Mat random_unit_rows(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d) {
    Mat m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) m.row(i) = random_unit(rng, d).transpose();
    return m;
}

inline FineKB random_fine_kb(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d, int epoch = 0) {
    FineKB kb;
    kb.audio = random_unit_rows(rng, n, d);
    kb.text = random_unit_rows(rng, n, d);
    kb.built_at_epoch = epoch;
    for (Eigen::Index i = 0; i < n; ++i) kb.ids.push_back(i);
    return kb;
}

/// A batch whose items are KB entries `rows` with small perturbations, so
/// retrieval neighborhoods are realistic and ids enable self-exclusion.
inline Batch batch_from_kb(const FineKB& kb, const std::vector<Eigen::Index>& rows, std::mt19937_64& rng,
                           double jitter = 0.1) {
    Batch b;
    const auto n = static_cast<Eigen::Index>(rows.size());
    b.audio.resize(n, kb.dim());
    b.text.resize(n, kb.dim());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index r = rows[static_cast<std::size_t>(i)];
        Vec a = kb.audio.row(r).transpose() + jitter * random_unit(rng, kb.dim());
        Vec t = kb.text.row(r).transpose() + jitter * random_unit(rng, kb.dim());
        b.audio.row(i) = (a / a.norm()).transpose();
        b.text.row(i) = (t / t.norm()).transpose();
        b.ids.push_back(kb.ids[static_cast<std::size_t>(r)]);
    }
    return b;
}

inline double rel_err(const Vec& a, const Vec& b) {
    const double scale = std::max({a.norm(), b.norm(), 1e-12});
    return (a - b).norm() / scale;
}

#define EXPECT_THROW_CODE(stmt, expected)                                        \
    do {                                                                         \
        try {                                                                    \
            stmt;                                                                \
            ADD_FAILURE() << "expected " << ::ask::to_string(expected);          \
        } catch (const ::ask::Error& e) {                                        \
            EXPECT_EQ(e.code(), expected) << e.what();                           \
        }                                                                        \
    } while (0)

}  // namespace ask::test
