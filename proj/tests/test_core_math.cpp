#include "support.hpp"

#include <numeric>

namespace ask {
namespace {

using test::random_unit;

TEST(L2Normalize, ThreeFour) {
    Vec v(2);
    v << 3, 4;
    const UnitVector u = l2_normalize(v);
    EXPECT_NEAR(u[0], 0.6, 1e-15);
    EXPECT_NEAR(u[1], 0.8, 1e-15);
}

TEST(L2Normalize, Idempotent) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
        const UnitVector u = l2_normalize(random_unit(rng, 7));
        const UnitVector again = l2_normalize(u.values());
        EXPECT_LT((again.values() - u.values()).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(L2Normalize, ZeroVectorFails) { EXPECT_THROW_CODE(l2_normalize(Vec::Zero(2)), ErrorCode::ZeroNorm); }

TEST(UnitVectorType, RejectsNonUnitInput) {
    Vec v(2);
    v << 1, 1;
    EXPECT_THROW_CODE(UnitVector::from_normalized(v), ErrorCode::InvalidArgument);
}

TEST(CosineSim, Cases) {
    Vec a(2), b(2);
    a << 0.6, 0.8;
    b << 0.8, 0.6;
    const UnitVector u = l2_normalize(a), v = l2_normalize(b);
    EXPECT_NEAR(cosine_sim(u, u), 1.0, 1e-15);
    EXPECT_NEAR(cosine_sim(u, v), 0.96, 1e-15);
    EXPECT_DOUBLE_EQ(cosine_sim(u, v), cosine_sim(v, u));
    Vec e0 = Vec::Unit(2, 0), e1 = Vec::Unit(2, 1);
    EXPECT_EQ(cosine_sim(l2_normalize(e0), l2_normalize(e1)), 0.0);
    EXPECT_THROW_CODE(cosine_sim(u, l2_normalize(Vec::Ones(3))), ErrorCode::DimensionMismatch);
}

TEST(PairwiseSim, OrthonormalSetGivesIdentity) {
    std::vector<UnitVector> basis;
    for (int i = 0; i < 4; ++i) basis.push_back(l2_normalize(Vec::Unit(4, i)));
    EXPECT_TRUE(pairwise_sim(basis, basis).isApprox(Mat::Identity(4, 4)));
}

TEST(PairwiseSim, SingleItem) {
    std::mt19937_64 rng(2);
    std::vector<UnitVector> u{l2_normalize(random_unit(rng, 5))}, v{l2_normalize(random_unit(rng, 5))};
    const SimMatrix s = pairwise_sim(u, v);
    ASSERT_EQ(s.rows(), 1);
    EXPECT_NEAR(s(0, 0), u[0].values().dot(v[0].values()), 1e-15);
}

TEST(PairwiseSim, MatchesLoopOracleAndTransposes) {
    std::mt19937_64 rng(3);
    std::vector<UnitVector> u, v;
    for (int i = 0; i < 3; ++i) {
        u.push_back(l2_normalize(random_unit(rng, 6)));
        v.push_back(l2_normalize(random_unit(rng, 6)));
    }
    const SimMatrix s = pairwise_sim(u, v);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (int c = 0; c < 6; ++c) dot += u[i][c] * v[j][c];
            EXPECT_NEAR(s(i, j), dot, 1e-12);
        }
    }
    EXPECT_TRUE(pairwise_sim(v, u).isApprox(s.transpose(), 0.0));
}

TEST(PairwiseSim, Errors) {
    std::vector<UnitVector> empty;
    EXPECT_THROW_CODE(pairwise_sim(empty, empty), ErrorCode::EmptyBatch);
    std::vector<UnitVector> a{l2_normalize(Vec::Ones(2))}, b{l2_normalize(Vec::Ones(3))};
    EXPECT_THROW_CODE(pairwise_sim(a, b), ErrorCode::DimensionMismatch);
}

TEST(Softmax, UniformOnEqualInput) {
    const ProbDist p = softmax(Vec::Constant(5, 3.3));
    for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(p[i], 0.2, 1e-15);
}

TEST(Softmax, ClosedForm) {
    Vec x(2);
    x << std::log(2.0), 0.0;
    const ProbDist p = softmax(x, 1.0);
    EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, Saturation) {
    Vec x = Vec::Zero(6);
    x[2] = 50.0;
    EXPECT_GE(softmax(x)[2], 1.0 - 1e-9);
}

TEST(Softmax, ShiftInvariantAndValid) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> normal(0.0, 10.0);
    for (int t = 0; t < 50; ++t) {
        Vec x(8);
        for (Eigen::Index i = 0; i < 8; ++i) x[i] = normal(rng);
        const ProbDist p = softmax(x, 0.3);
        const ProbDist q = softmax(x.array() + 123.0, 0.3);
        EXPECT_NEAR(p.values().sum(), 1.0, 1e-12);
        EXPECT_GE(p.values().minCoeff(), 0.0);
        EXPECT_LT((p.values() - q.values()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Softmax, Errors) {
    EXPECT_THROW_CODE(softmax(Vec::Zero(3), 0.0), ErrorCode::NonPositiveTemperature);
    Vec x = Vec::Zero(3);
    x[1] = std::nan("");
    EXPECT_THROW_CODE(softmax(x), ErrorCode::NonFiniteInput);
}

ProbDist dist(std::initializer_list<double> values) {
    Vec v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) v[i++] = x;
    return ProbDist::from_values(v);
}

TEST(KLDivergence, Cases) {
    const ProbDist p = dist({0.5, 0.5});
    EXPECT_EQ(kl_divergence(p, p), 0.0);
    EXPECT_NEAR(kl_divergence(p, dist({0.25, 0.75})), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
    EXPECT_NEAR(kl_divergence(p, dist({0.25, 0.75})), 0.14384, 1e-5);
    EXPECT_THROW_CODE(kl_divergence(dist({1.0, 0.0}), dist({0.0, 1.0})), ErrorCode::SupportViolation);
}

TEST(KLDivergence, ZeroLogZeroIsZero) {
    EXPECT_NEAR(kl_divergence(dist({1.0, 0.0}), dist({0.5, 0.5})), std::log(2.0), 1e-15);
}

TEST(TotalVariation, Cases) {
    const ProbDist p = dist({0.2, 0.8});
    EXPECT_EQ(total_variation(p, p), 0.0);
    EXPECT_EQ(total_variation(dist({1.0, 0.0}), dist({0.0, 1.0})), 1.0);
    EXPECT_THROW_CODE(total_variation(p, dist({0.1, 0.2, 0.7})), ErrorCode::DimensionMismatch);
}

TEST(TotalVariation, PinskerOnRandomPairs) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal(0.0, 2.0);
    std::uniform_int_distribution<int> n_dist(2, 12);
    for (int t = 0; t < 1000; ++t) {
        const int n = n_dist(rng);
        Vec a(n), b(n);
        for (int i = 0; i < n; ++i) {
            a[i] = normal(rng);
            b[i] = normal(rng);
        }
        const ProbDist p = softmax(a), q = softmax(b);
        EXPECT_LE(total_variation(p, q), std::sqrt(kl_divergence(p, q) / 2.0) + 1e-12);
        EXPECT_GE(kl_divergence(p, q), 0.0);
    }
}

TEST(FdGradient, Quadratic) {
    Vec x(2);
    x << 1, 2;
    const Vec g = fd_gradient([](const Vec& v) { return v.dot(v); }, x, 1e-5);
    EXPECT_NEAR(g[0], 2.0, 1e-6);
    EXPECT_NEAR(g[1], 4.0, 1e-6);
}

TEST(FdGradient, Constant) {
    const Vec g = fd_gradient([](const Vec&) { return 3.0; }, Vec::Ones(4));
    EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FdGradient, Polynomial) {
    Vec x(3);
    x << 0.3, -1.2, 2.0;
    // f = x0^3 + x0 x1 + 2 x2^2
    const Vec g = fd_gradient([](const Vec& v) { return std::pow(v[0], 3) + v[0] * v[1] + 2 * v[2] * v[2]; }, x);
    EXPECT_NEAR(g[0], 3 * 0.09 - 1.2, 1e-6);
    EXPECT_NEAR(g[1], 0.3, 1e-6);
    EXPECT_NEAR(g[2], 8.0, 1e-6);
}

TEST(FdGradient, NtxentRowMatchesAnalytic) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    Mat s(3, 3);
    for (Eigen::Index i = 0; i < 9; ++i) s.data()[i] = uni(rng);
    const double tau = 0.07;
    // Loss of row 0: -log softmax(s_0 / tau)[0].
    auto row_loss = [&](const Vec& row) { return -(row[0] / tau - log_sum_exp(row / tau)); };
    const Vec row = s.row(0).transpose();
    Vec analytic = softmax(row, tau).values() / tau;
    analytic[0] -= 1.0 / tau;
    EXPECT_LT(test::rel_err(fd_gradient(row_loss, row), analytic), 1e-4);
}

TEST(FdGradient, Errors) {
    EXPECT_THROW_CODE(fd_gradient([](const Vec&) { return 0.0; }, Vec::Ones(2), 1e-2), ErrorCode::InvalidStep);
    EXPECT_THROW_CODE(fd_gradient([](const Vec&) { return std::nan(""); }, Vec::Ones(2)), ErrorCode::NonFiniteEvaluation);
}

TEST(Flatten, RowMajorRoundTrip) {
    Mat m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    const Vec f = flatten(m);
    EXPECT_EQ(f[1], 2.0);
    EXPECT_EQ(f[3], 4.0);
    EXPECT_EQ(unflatten(f, 2, 3), m);
}

}  // namespace
}  // namespace ask
