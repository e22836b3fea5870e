#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "stochal/rng.hpp"
#include "stochal/scoring.hpp"

namespace stochal {
namespace {

using Rows = std::vector<std::vector<double>>;

PredictiveSamples one(const Rows& rows) { return PredictiveSamples::from_nested({rows}); }

constexpr double kLn2 = std::numbers::ln2;

TEST(MeanPrediction, Examples) {
    EXPECT_EQ(mean_prediction(one({{1, 0}, {0, 1}}), 0), (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(mean_prediction(one({{0.2, 0.8}}), 0), (std::vector<double>{0.2, 0.8}));
    const auto m = mean_prediction(one({{0.6, 0.4}, {0.2, 0.8}}), 0);
    EXPECT_NEAR(m[0], 0.4, 1e-15);
    EXPECT_NEAR(m[1], 0.6, 1e-15);
}

TEST(MeanPrediction, RejectsOutOfRangeCandidate) {
    EXPECT_THROW(mean_prediction(one({{1, 0}}), 1), ParameterError);
}

TEST(EntropyScore, Examples) {
    EXPECT_EQ(entropy_score(one({{1, 0}}), 0), 0.0);
    EXPECT_NEAR(entropy_score(one({{0.5, 0.5}}), 0), 0.6931, 1e-4);
    EXPECT_DOUBLE_EQ(entropy_score(one({{1, 0}, {0, 1}}), 0), kLn2);
}

TEST(BaldScore, Examples) {
    EXPECT_EQ(bald_score(one({{1, 0}, {0, 1}}), 0), kLn2);
    EXPECT_EQ(bald_score(one({{0.5, 0.5}, {0.5, 0.5}}), 0), 0.0);
    // H([0.5, 0.5]) - H([0.9, 0.1]) = 0.693147 - 0.325083
    EXPECT_NEAR(bald_score(one({{0.9, 0.1}, {0.1, 0.9}}), 0), 0.3680, 1e-4);
    EXPECT_NEAR(bald_score(one({{0.9, 0.1}, {0.1, 0.9}}), 0),
                kLn2 + 0.9 * std::log(0.9) + 0.1 * std::log(0.1), 1e-15);
    EXPECT_EQ(bald_score(one({{0.3, 0.7}}), 0), 0.0);  // K = 1
}

TEST(ScorePool, Examples) {
    const auto s = PredictiveSamples::from_nested({{{1, 0}, {0, 1}}, {{0.5, 0.5}, {0.5, 0.5}}});
    const auto b = score_pool(s, ScoreKind::BALD);
    ASSERT_EQ(b.size(), 2u);
    EXPECT_NEAR(b[0], 0.6931, 1e-4);
    EXPECT_EQ(b[1], 0.0);
    const auto e = score_pool(PredictiveSamples::from_nested({{{0.5, 0.5}}}), ScoreKind::Entropy);
    ASSERT_EQ(e.size(), 1u);
    EXPECT_NEAR(e[0], 0.6931, 1e-4);
}

TEST(PredictiveSamples, ValidatesRows) {
    EXPECT_THROW(one({{0.5, 0.6}}), InputError);
    EXPECT_THROW(one({{1.2, -0.2}}), InputError);
    EXPECT_THROW(one({{1.0}}), InputError);  // C = 1
    EXPECT_THROW(PredictiveSamples(1, 0, 2, {}), InputError);
    EXPECT_NO_THROW(one({{0.5 + 5e-7, 0.5}}));
}

// Random simplex tensor with some exact zeros and duplicated rows mixed in.
PredictiveSamples random_samples(RngStream& rng, std::size_t m, std::size_t k, std::size_t c) {
    std::vector<double> flat(m * k * c);
    for (std::size_t r = 0; r < m * k; ++r) {
        double total = 0.0;
        const bool peaked = rng.uniform() < 0.1;
        for (std::size_t j = 0; j < c; ++j) {
            double v = -std::log(rng.uniform());
            if (peaked && j != 0) v = rng.uniform() < 0.5 ? 0.0 : v * 1e-9;
            flat[r * c + j] = v;
            total += v;
        }
        for (std::size_t j = 0; j < c; ++j) flat[r * c + j] /= total;
    }
    return PredictiveSamples(m, k, c, std::move(flat));
}

TEST(ScoringProperties, InformationBounds) {
    RngStream rng(RngState(1, {0, 0, Purpose::Test}));
    for (int rep = 0; rep < 2000; ++rep) {
        const std::size_t k = 1 + rng.below(8);
        const std::size_t c = 2 + rng.below(6);
        const auto s = random_samples(rng, 3, k, c);
        for (std::size_t i = 0; i < 3; ++i) {
            const double b = bald_score(s, i);
            const double e = entropy_score(s, i);
            EXPECT_GE(b, 0.0);
            EXPECT_LE(b, e);
            EXPECT_LE(e, std::log(static_cast<double>(c)) + 1e-12);
        }
    }
}

TEST(ScoringProperties, IdenticalRowsHaveZeroBald) {
    RngStream rng(RngState(2, {0, 0, Purpose::Test}));
    for (int rep = 0; rep < 200; ++rep) {
        const auto base = random_samples(rng, 1, 1, 4);
        const std::vector<double> row(base.row(0, 0).begin(), base.row(0, 0).end());
        EXPECT_EQ(bald_score(one({row, row, row, row, row}), 0), 0.0);
    }
}

TEST(ScoringProperties, PermutationAndDuplicationInvariance) {
    RngStream rng(RngState(3, {0, 0, Purpose::Test}));
    for (int rep = 0; rep < 300; ++rep) {
        const std::size_t k = 2 + rng.below(5);
        const std::size_t c = 2 + rng.below(4);
        const auto s = random_samples(rng, 1, k, c);
        Rows rows;
        for (std::size_t j = 0; j < k; ++j) rows.emplace_back(s.row(0, j).begin(), s.row(0, j).end());

        Rows reversed(rows.rbegin(), rows.rend());
        EXPECT_NEAR(entropy_score(one(reversed), 0), entropy_score(s, 0), 1e-12);

        Rows relabelled = rows;
        for (auto& r : relabelled) std::rotate(r.begin(), r.begin() + 1, r.end());
        EXPECT_NEAR(entropy_score(one(relabelled), 0), entropy_score(s, 0), 1e-12);
        EXPECT_NEAR(bald_score(one(relabelled), 0), bald_score(s, 0), 1e-12);

        Rows doubled = rows;
        doubled.insert(doubled.end(), rows.begin(), rows.end());
        EXPECT_NEAR(entropy_score(one(doubled), 0), entropy_score(s, 0), 1e-12);
        EXPECT_NEAR(bald_score(one(doubled), 0), bald_score(s, 0), 1e-12);
    }
}

TEST(ScoringProperties, PoolMatchesPerCandidateCalls) {
    RngStream rng(RngState(4, {0, 0, Purpose::Test}));
    const auto s = random_samples(rng, 3, 5, 3);
    const auto b = score_pool(s, ScoreKind::BALD);
    const auto e = score_pool(s, ScoreKind::Entropy);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(b[i], bald_score(s, i));
        EXPECT_EQ(e[i], entropy_score(s, i));
    }
}

}  // namespace
}  // namespace stochal
