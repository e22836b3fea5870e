#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "stochal/model.hpp"
#include "stochal/scoring.hpp"

namespace stochal {
namespace {

// Plain-loop forward pass and loss; shares no code with the model's Eigen implementation.
double reference_loss(const MlpParams& p, const Matrix& x, const std::vector<int>& y) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::vector<double> h(static_cast<std::size_t>(x.cols()));
        for (Eigen::Index j = 0; j < x.cols(); ++j) h[static_cast<std::size_t>(j)] = x(i, j);
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            const auto& w = p.layers[l].weights;
            std::vector<double> z(static_cast<std::size_t>(w.cols()));
            for (Eigen::Index o = 0; o < w.cols(); ++o) {
                double acc = p.layers[l].bias(o);
                for (Eigen::Index in = 0; in < w.rows(); ++in) acc += h[static_cast<std::size_t>(in)] * w(in, o);
                z[static_cast<std::size_t>(o)] = (l + 1 < p.layers.size()) ? std::max(0.0, acc) : acc;
            }
            h = std::move(z);
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : h) mx = std::max(mx, v);
        double s = 0.0;
        for (double v : h) s += std::exp(v - mx);
        total += mx + std::log(s) - h[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
    }
    return total / static_cast<double>(x.rows());
}

struct Toy {
    Matrix x;
    std::vector<int> y;
};

Toy separable_blobs(std::size_t n, std::uint64_t seed) {
    RngStream rng(RngState(seed, {0, 0, Purpose::Test}));
    Toy t{Matrix(static_cast<Eigen::Index>(n), 2), std::vector<int>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % 2);
        t.y[i] = c;
        t.x(static_cast<Eigen::Index>(i), 0) = (c ? 2.0 : -2.0) + 0.5 * rng.normal();
        t.x(static_cast<Eigen::Index>(i), 1) = 0.5 * rng.normal();
    }
    return t;
}

double train_accuracy(const Ensemble& e, const Toy& t) {
    int correct = 0;
    for (const auto& m : e.members) {
        const Matrix p = predict_proba(m, t.x);
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            Eigen::Index arg = 0;
            p.row(i).maxCoeff(&arg);
            correct += arg == t.y[static_cast<std::size_t>(i)];
        }
    }
    return correct / static_cast<double>(t.y.size() * e.members.size());
}

TEST(InitEnsemble, ShapesAndZeroBiases) {
    const auto e = init_ensemble({2, {4}, 2}, 3, RngState(1));
    ASSERT_EQ(e.members.size(), 3u);
    for (const auto& m : e.members) {
        ASSERT_EQ(m.layers.size(), 2u);
        EXPECT_EQ(m.layers[0].weights.rows(), 2);
        EXPECT_EQ(m.layers[0].weights.cols(), 4);
        EXPECT_EQ(m.layers[0].bias.size(), 4);
        EXPECT_EQ(m.layers[1].weights.rows(), 4);
        EXPECT_EQ(m.layers[1].weights.cols(), 2);
        EXPECT_TRUE(m.layers[0].bias.isZero());
        const double a = std::sqrt(6.0 / 6.0);
        EXPECT_LE(m.layers[0].weights.cwiseAbs().maxCoeff(), a);
    }
}

TEST(InitEnsemble, DeterministicAndMembersDiffer) {
    const auto a = init_ensemble({3, {5, 5}, 4}, 4, RngState(7));
    const auto b = init_ensemble({3, {5, 5}, 4}, 4, RngState(7));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.members[i], b.members[i]);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) EXPECT_FALSE(a.members[i] == a.members[j]);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(InitEnsemble, RejectsBadArchitecture) {
    EXPECT_THROW(init_ensemble({2, {}, 2}, 1, RngState(1)), ParameterError);
    EXPECT_THROW(init_ensemble({2, {3}, 1}, 1, RngState(1)), ParameterError);
    EXPECT_THROW(init_ensemble({0, {3}, 2}, 1, RngState(1)), ParameterError);
    EXPECT_THROW(init_ensemble({2, {3}, 2}, 0, RngState(1)), ParameterError);
}

TEST(LossAndGradient, LossIsNegativeLogProbability) {
    const auto e = init_ensemble({2, {3}, 2}, 1, RngState(2));
    Matrix x(1, 2);
    x << 0.3, -1.2;
    const std::vector<int> y{1};
    const double p = predict_proba(e.members[0], x)(0, 1);
    EXPECT_NEAR(loss_and_gradient(e.members[0], x, y).loss, -std::log(p), 1e-12);
    EXPECT_NEAR(reference_loss(e.members[0], x, y), -std::log(p), 1e-12);
}

double max_relative_gradient_error(const MlpArchitecture& arch, std::size_t n, std::uint64_t seed) {
    auto params = init_ensemble(arch, 1, RngState(seed)).members[0];
    RngStream rng(RngState(seed, {0, 0, Purpose::Test}));
    for (auto& l : params.layers)
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = 0.1 * rng.normal();
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(arch.input_dim));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.below(arch.num_classes));

    const auto analytic = loss_and_gradient(params, x, y).gradient;
    constexpr double h = 1e-5;
    double worst = 0.0;
    const auto check = [&](double& param, double grad) {
        const double saved = param;
        param = saved + h;
        const double up = reference_loss(params, x, y);
        param = saved - h;
        const double down = reference_loss(params, x, y);
        param = saved;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max(1e-8, std::abs(fd) + std::abs(grad));
        worst = std::max(worst, std::abs(fd - grad) / denom);
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& w = params.layers[l].weights;
        for (Eigen::Index i = 0; i < w.size(); ++i) check(w.data()[i], analytic.layers[l].weights.data()[i]);
        auto& b = params.layers[l].bias;
        for (Eigen::Index i = 0; i < b.size(); ++i) check(b.data()[i], analytic.layers[l].bias.data()[i]);
    }
    return worst;
}

TEST(LossAndGradient, MatchesCentralFiniteDifferences) {
    EXPECT_LT(max_relative_gradient_error({2, {3}, 2}, 5, 11), 1e-4);
    EXPECT_LT(max_relative_gradient_error({4, {6, 5}, 3}, 7, 12), 1e-4);
    EXPECT_LT(max_relative_gradient_error({3, {8, 8, 4}, 5}, 9, 13), 1e-4);
}

TEST(LossAndGradient, DuplicatedMinibatchIsInvariant) {
    const auto p = init_ensemble({2, {3}, 2}, 1, RngState(3)).members[0];
    const auto t = separable_blobs(5, 3);
    Matrix x2(10, 2);
    x2 << t.x, t.x;
    std::vector<int> y2 = t.y;
    y2.insert(y2.end(), t.y.begin(), t.y.end());
    const auto a = loss_and_gradient(p, t.x, t.y);
    const auto b = loss_and_gradient(p, x2, y2);
    EXPECT_NEAR(a.loss, b.loss, 1e-14);
    for (std::size_t l = 0; l < a.gradient.layers.size(); ++l) {
        EXPECT_TRUE(a.gradient.layers[l].weights.isApprox(b.gradient.layers[l].weights, 1e-12));
        EXPECT_TRUE(a.gradient.layers[l].bias.isApprox(b.gradient.layers[l].bias, 1e-12));
    }
}

TEST(Train, SeparableBlobsReachFullTrainingAccuracy) {
    const auto t = separable_blobs(20, 4);
    TrainConfig cfg;
    cfg.max_epochs = 200;
    cfg.validation_fraction = 0.0;
    cfg.minibatch_size = 8;
    const auto e = train(init_ensemble({2, {16}, 2}, 3, RngState(4)), t.x, t.y, cfg, RngState(4));
    EXPECT_EQ(train_accuracy(e, t), 1.0);
}

TEST(Train, MemorisesASingleExample) {
    Matrix x(1, 3);
    x << 0.5, -0.25, 1.0;
    const std::vector<int> y{2};
    TrainConfig cfg;
    cfg.max_epochs = 300;
    const auto e = train(init_ensemble({3, {8}, 3}, 2, RngState(5)), x, y, cfg, RngState(5));
    for (const auto& m : e.members) {
        Eigen::Index arg = 0;
        predict_proba(m, x).row(0).maxCoeff(&arg);
        EXPECT_EQ(arg, 2);
    }
}

TEST(Train, ZeroEpochsOrZeroLearningRateLeaveParametersUnchanged) {
    const auto t = separable_blobs(12, 6);
    const auto init = init_ensemble({2, {4}, 2}, 2, RngState(6));
    TrainConfig cfg;
    cfg.max_epochs = 0;
    EXPECT_EQ(train(init, t.x, t.y, cfg, RngState(6)).members, init.members);
    cfg.max_epochs = 20;
    cfg.learning_rate = 0.0;
    EXPECT_EQ(train(init, t.x, t.y, cfg, RngState(6)).members, init.members);
}

TEST(Train, BitwiseReproducible) {
    const auto t = separable_blobs(30, 7);
    TrainConfig cfg;
    cfg.max_epochs = 30;
    const auto init = init_ensemble({2, {8, 8}, 2}, 3, RngState(7));
    const auto a = train(init, t.x, t.y, cfg, RngState(7));
    const auto b = train(init, t.x, t.y, cfg, RngState(7));
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    const auto c = train(init, t.x, t.y, cfg, RngState(8));
    EXPECT_NE(to_json(a).dump(), to_json(c).dump());
}

TEST(Train, EarlyStoppingKeepsBestValidationParameters) {
    // random labels: validation loss stops improving quickly
    auto t = separable_blobs(40, 8);
    RngStream rng(RngState(8, {0, 0, Purpose::Test}));
    for (auto& v : t.y) v = static_cast<int>(rng.below(2));
    TrainConfig cfg;
    cfg.max_epochs = 500;
    cfg.learning_rate = 0.05;
    cfg.early_stop_patience = 3;
    cfg.validation_fraction = 0.25;
    const auto e = train(init_ensemble({2, {16}, 2}, 1, RngState(8)), t.x, t.y, cfg, RngState(8));
    EXPECT_TRUE(e.members[0].all_finite());
}

TEST(Train, NonFiniteLossIsReportedWithEpoch) {
    auto t = separable_blobs(6, 9);
    t.x(0, 0) = std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg;
    cfg.validation_fraction = 0.0;
    try {
        train(init_ensemble({2, {4}, 2}, 1, RngState(9)), t.x, t.y, cfg, RngState(9));
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.epoch(), 0u);
    }
}

TEST(Train, RejectsBadInputs) {
    const auto t = separable_blobs(4, 10);
    const auto e = init_ensemble({2, {4}, 2}, 1, RngState(10));
    std::vector<int> bad = t.y;
    bad[0] = 2;
    EXPECT_THROW(train(e, t.x, bad, {}, RngState(1)), InputError);
    EXPECT_THROW(train(e, Matrix(0, 2), std::vector<int>{}, {}, RngState(1)), InputError);
    TrainConfig cfg;
    cfg.validation_fraction = 0.5;
    EXPECT_THROW(train(e, t.x, t.y, cfg, RngState(1)), ParameterError);
}

TEST(PredictSamples, SingleMemberRowsAreItsSoftmax) {
    const auto e = init_ensemble({2, {4}, 3}, 1, RngState(11));
    const auto t = separable_blobs(5, 11);
    const auto s = predict_samples(e, t.x);
    ASSERT_EQ(s.samples(), 1u);
    const Matrix p = predict_proba(e.members[0], t.x);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(s.row(i, 0)[c], p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
}

TEST(PredictSamples, IdenticalMembersHaveZeroBald) {
    auto e = init_ensemble({2, {4}, 3}, 4, RngState(12));
    for (auto& m : e.members) m = e.members[0];
    const auto s = predict_samples(e, separable_blobs(8, 12).x);
    for (double b : score_pool(s, ScoreKind::BALD)) EXPECT_EQ(b, 0.0);
}

TEST(PredictSamples, ZeroFinalLayerGivesUniformRows) {
    auto e = init_ensemble({2, {4}, 5}, 2, RngState(13));
    for (auto& m : e.members) m.layers.back().weights.setZero();
    const auto s = predict_samples(e, separable_blobs(3, 13).x);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 2; ++k)
            for (double p : s.row(i, k)) EXPECT_NEAR(p, 0.2, 1e-15);
}

TEST(PredictSamples, PermutationEquivariant) {
    const auto e = init_ensemble({2, {6}, 3}, 3, RngState(14));
    const auto t = separable_blobs(6, 14);
    Matrix rev = t.x.colwise().reverse();
    const auto a = predict_samples(e, t.x);
    const auto b = predict_samples(e, rev);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(a.row(i, k)[c], b.row(5 - i, k)[c]);
}

TEST(Serialization, RoundTripIsExact) {
    const auto t = separable_blobs(10, 15);
    TrainConfig cfg;
    cfg.max_epochs = 5;
    const auto e = train(init_ensemble({2, {5, 3}, 2}, 2, RngState(15)), t.x, t.y, cfg, RngState(15));
    const auto back = ensemble_from_json(nlohmann::json::parse(to_json(e).dump()));
    EXPECT_EQ(back.arch, e.arch);
    EXPECT_EQ(back.members, e.members);
}

TEST(Serialization, RejectsMalformedRecords) {
    auto j = to_json(init_ensemble({2, {3}, 2}, 1, RngState(16)));
    auto wrong_version = j;
    wrong_version["version"] = 99;
    EXPECT_THROW(ensemble_from_json(wrong_version), InputError);
    auto wrong_shape = j;
    wrong_shape["members"][0][0]["rows"] = 7;
    EXPECT_THROW(ensemble_from_json(wrong_shape), InputError);
    EXPECT_THROW(ensemble_from_json(nlohmann::json::object()), InputError);
}

}  // namespace
}  // namespace stochal
