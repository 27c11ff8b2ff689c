#include "gradcheck.hpp"
#include "oracles.hpp"

#include "ropdda/error.hpp"
#include "ropdda/nn/model.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ropdda;
using namespace ropdda::nn;
using gradcheck::M;
using gradcheck::RV;

TEST(Conv, MatchesNaiveLoop) {
    Rng rng(1);
    for (std::size_t kernel : {3, 5, 7}) {
        const M in = gradcheck::random_matrix(4 * 10, 6, rng);
        const M w = gradcheck::random_matrix(static_cast<Eigen::Index>(kernel * 6), 5, rng);
        const RV b = gradcheck::random_row(5, rng);
        const M got = layers::conv1d_forward(in, 10, w, b, kernel);
        EXPECT_EQ(got.rows(), in.rows());
        EXPECT_LT((got - oracle::conv1d(in, 10, w, b, kernel)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Conv, SparseMatchesDense) {
    Rng rng(2);
    const auto arch = gradcheck::small_arch();
    const Matrix in = gradcheck::small_input(arch, rng);
    const M w = gradcheck::random_matrix(7 * 6, 4, rng);
    const RV b = gradcheck::random_row(4, rng);
    const M dense = layers::conv1d_forward<double>(in, arch.seq_len, w, b, 7);
    const M sparse = layers::conv1d_forward<double>(layers::sparsify(in), arch.seq_len, w, b, 7);
    EXPECT_LT((dense - sparse).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gradients, EveryLayerAndEndToEnd) {
    for (const auto &r : gradcheck::layer_suite(3)) EXPECT_LT(r.rel_error, 1e-4) << r.name;
}

TEST(Gradients, ZeroUpstreamGivesZero) {
    auto state = init_model<double>(gradcheck::small_arch(), 1);
    state.mode = Mode::Train;
    Rng rng(1);
    const Matrix in = gradcheck::small_input(state.arch, rng);
    auto fr = forward_features(state, in, rng);
    UpstreamT<double> up;
    up.d_features = M::Zero(4, static_cast<Eigen::Index>(state.arch.hidden));
    for (const auto &t : backward(state, *fr.trace, up).tensors()) {
        for (double v : t.values) EXPECT_EQ(v, 0.0) << t.name;
    }
}

TEST(Gradients, StaleTraceRejected) {
    auto state = init_model<double>(gradcheck::small_arch(), 1);
    state.mode = Mode::Train;
    Rng rng(1);
    auto fr = forward_features(state, gradcheck::small_input(state.arch, rng), rng);
    ++state.version;
    UpstreamT<double> up;
    up.d_features = M::Zero(4, static_cast<Eigen::Index>(state.arch.hidden));
    EXPECT_THROW(backward(state, *fr.trace, up), StaleTrace);
}

TEST(BatchNorm, NormalizesAndHandlesConstantChannel) {
    Rng rng(4);
    M x = gradcheck::random_matrix(32, 5, rng, 3.0);
    x.col(2).setConstant(1.5);
    layers::BatchNormCache<double> cache;
    const RV g = RV::Ones(5), b = RV::Zero(5);
    const M y = layers::batchnorm_forward_train(x, g, b, cache);
    for (Eigen::Index c = 0; c < 5; ++c) {
        const double mean = y.col(c).mean();
        EXPECT_NEAR(mean, 0.0, 1e-5);
        if (c != 2) EXPECT_NEAR((y.col(c).array() - mean).square().mean(), 1.0, 1e-3);
    }
    RV dg = RV::Zero(5), db = RV::Zero(5);
    const M dx = layers::batchnorm_backward(M(M::Ones(32, 5)), g, cache, dg, db);
    EXPECT_TRUE(dx.allFinite());
    EXPECT_TRUE(dg.allFinite());
}

TEST(Dropout, ExpectationMatchesEval) {
    Rng rng(5);
    const Eigen::Index n = 20000;
    RV mean = RV::Zero(8);
    for (Eigen::Index i = 0; i < n; ++i) mean += layers::dropout_mask<double>(1, 8, 0.5, rng);
    mean /= static_cast<double>(n);
    for (Eigen::Index c = 0; c < 8; ++c) EXPECT_NEAR(mean(c), 1.0, 0.02);
}

TEST(Model, ZeroInputEval) {
    const auto arch = gradcheck::small_arch();
    auto state = init_model<double>(arch, 2);
    state.mode = Mode::Eval;
    state.params.fc1.bias = gradcheck::random_row(static_cast<Eigen::Index>(arch.hidden), *std::make_unique<Rng>(3));
    const Matrix zero = Matrix::Zero(static_cast<Eigen::Index>(2 * arch.seq_len), static_cast<Eigen::Index>(arch.alphabet));
    Rng rng(1);
    const auto f = forward_features(state, zero, rng).features;
    // conv biases are zero, so every conv layer outputs zeros; FC1 sees zeros
    const double inv = 1.0 / std::sqrt(1.0 + layers::kBatchNormEps);
    for (Eigen::Index r = 0; r < 2; ++r)
        for (Eigen::Index c = 0; c < f.cols(); ++c) {
            EXPECT_NEAR(f(r, c), std::max(0.0, state.params.fc1.bias(c) * inv), 1e-12);
        }
}

TEST(Model, EvalRowsIndependent) {
    Rng rng(6);
    auto state = init_model<float>(gradcheck::small_arch(), 3);
    state.mode = Mode::Eval;
    Matrix in = Matrix::Zero(static_cast<Eigen::Index>(8 * state.arch.seq_len), 6);
    for (Eigen::Index r = 0; r < in.rows(); ++r) in(r, static_cast<Eigen::Index>(uniform_index(rng, 6))) = 1;
    const auto all = features_eval(state, in);
    const Matrix one = in.middleRows(static_cast<Eigen::Index>(3 * state.arch.seq_len),
                                     static_cast<Eigen::Index>(state.arch.seq_len));
    const auto single = features_eval(state, one);
    EXPECT_LT((all.row(3) - single.row(0)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(features_eval(state, in), all);
}

TEST(Model, FeaturesMatchNaiveReference) {
    Rng rng(7);
    const auto arch = gradcheck::small_arch();
    auto state = init_model<double>(arch, 4);
    state.mode = Mode::Train;
    const Matrix in = gradcheck::small_input(arch, rng);
    auto fr = forward_features(state, in, rng);
    const auto &p = state.params;
    M x = in;
    for (int l = 0; l < 3; ++l) {
        M y = oracle::conv1d(x, arch.seq_len, p.conv[l].weight, p.conv[l].bias, arch.kernels[l]);
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
            const double mean = y.col(c).mean();
            const double var = (y.col(c).array() - mean).square().mean();
            y.col(c) = ((y.col(c).array() - mean) / std::sqrt(var + layers::kBatchNormEps)) * p.norm[l].gamma(c) +
                       p.norm[l].beta(c);
        }
        x = y.cwiseMax(0.0).cwiseProduct(fr.trace->masks[l]);
    }
    M flat(4, static_cast<Eigen::Index>(arch.flat_dim()));
    for (Eigen::Index n = 0; n < 4; ++n)
        for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(arch.seq_len); ++t)
            for (Eigen::Index c = 0; c < x.cols(); ++c)
                flat(n, t * x.cols() + c) = x(n * static_cast<Eigen::Index>(arch.seq_len) + t, c);
    M h = flat * p.fc1.weight;
    h.rowwise() += p.fc1.bias;
    for (Eigen::Index c = 0; c < h.cols(); ++c) {
        const double mean = h.col(c).mean();
        const double var = (h.col(c).array() - mean).square().mean();
        h.col(c) = ((h.col(c).array() - mean) / std::sqrt(var + layers::kBatchNormEps)) * p.norm[3].gamma(c) +
                   p.norm[3].beta(c);
    }
    EXPECT_LT((fr.features - h.cwiseMax(0.0)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Head, SigmoidAndThreshold) {
    auto state = init_model<double>(gradcheck::small_arch(), 1);
    state.params.fc2.weight.setZero();
    state.params.fc2.bias.setZero();
    const M f = M::Zero(3, static_cast<Eigen::Index>(state.arch.hidden));
    const auto p = forward_head(state, f);
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(p(i), 0.5);

    VectorT<double> probs(3);
    probs << 0.5, 0.49999, 0.9;
    EXPECT_EQ(predict_probs(probs), (std::vector<Label>{Label::Malicious, Label::Benign, Label::Malicious}));

    Rng rng(2);
    state.params.fc2.weight = gradcheck::random_matrix(static_cast<Eigen::Index>(state.arch.hidden), 1, rng);
    state.params.fc2.bias(0) = 0.3;
    const M g = gradcheck::random_matrix(4, static_cast<Eigen::Index>(state.arch.hidden), rng);
    const auto q = forward_head(state, g);
    for (Eigen::Index i = 0; i < 4; ++i) {
        double z = 0.3;
        for (Eigen::Index k = 0; k < g.cols(); ++k) z += g(i, k) * state.params.fc2.weight(k, 0);
        EXPECT_NEAR(q(i), 1 / (1 + std::exp(-z)), 1e-9);
    }
    double prev = 0;
    for (double s : {0.0, 1.0, 5.0, 20.0}) {
        state.params.fc2.bias(0) = s;
        const double v = forward_head(state, M(M::Zero(1, g.cols())))(0);
        EXPECT_GE(v, prev);
        prev = v;
    }
}

TEST(Loss, Values) {
    VectorT<double> p(1);
    p << 0.5;
    const std::vector<Label> one = {Label::Malicious};
    EXPECT_NEAR(bce_loss<double>(p, one).loss, std::log(2.0), 1e-12);
    p << 1.0;
    EXPECT_LE(bce_loss<double>(p, one).loss, -std::log(1 - kProbClip) + 1e-15);
    VectorT<double> q(2);
    q << 0.9, 0.2;
    const std::vector<Label> y = {Label::Malicious, Label::Benign};
    EXPECT_NEAR(bce_loss<double>(q, y).loss, (-std::log(0.9) - std::log(0.8)) / 2, 1e-12);
    EXPECT_NEAR(bce_loss<double>(q, y).loss, 0.1643, 1e-4);
}

TEST(Adam, FirstStepAndZeroGradient) {
    auto state = init_model<double>(gradcheck::small_arch(), 1);
    auto adam = AdamStateT<double>::for_model(state);
    const auto before = state.params.fc2.bias(0);
    auto g = ParametersT<double>::zeros(state.arch);
    g.fc2.bias(0) = 3.7;
    adam_step(state, adam, g);
    EXPECT_NEAR(state.params.fc2.bias(0) - before, -0.001, 1e-9);
    EXPECT_EQ(adam.step, 1u);
    const auto snapshot = state.params.fc1.weight;
    adam_step(state, adam, ParametersT<double>::zeros(state.arch));
    EXPECT_EQ(state.params.fc1.weight, snapshot);
    EXPECT_EQ(adam.step, 2u);
}

TEST(Adam, FeaturesOnlyLeavesHead) {
    auto state = init_model<double>(gradcheck::small_arch(), 1);
    auto adam = AdamStateT<double>::for_model(state);
    auto g = ParametersT<double>::zeros(state.arch);
    for (auto &t : g.tensors())
        for (auto &v : t.values) v = 1.0;
    const auto head = state.params.fc2;
    const auto conv = state.params.conv[0].weight;
    adam_step(state, adam, g, ParamGroup::FeaturesOnly);
    EXPECT_EQ(state.params.fc2.weight, head.weight);
    EXPECT_EQ(state.params.fc2.bias, head.bias);
    EXPECT_NE(state.params.conv[0].weight, conv);
}

TEST(Adam, QuadraticBowl) {
    // Minimize 0.5 * (3 x^2 + y^2) with the optimizer applied to fc2.bias and
    // one fc1 bias entry, all else zero.
    auto state = init_model<double>(gradcheck::small_arch(), 1);
    auto adam = AdamStateT<double>::for_model(state, 0.05);
    double &x = state.params.fc2.bias(0);
    double &y = state.params.fc1.bias(0);
    x = 1.0;
    y = -2.0;
    auto f = [&] { return 0.5 * (3 * x * x + y * y); };
    const double start = f();
    double prev = start;
    // Momentum overshoots near the minimum, so only the approach is monotone.
    for (int i = 0; i < 300; ++i) {
        auto g = ParametersT<double>::zeros(state.arch);
        g.fc2.bias(0) = 3 * x;
        g.fc1.bias(0) = y;
        adam_step(state, adam, g);
        if (i < 10) EXPECT_LT(f(), prev);
        prev = f();
    }
    EXPECT_LT(f(), 1e-3 * start);
}

TEST(Model, ShapeMismatch) {
    auto state = init_model<float>(gradcheck::small_arch(), 1);
    Rng rng(1);
    EXPECT_THROW(forward_features(state, Matrix::Zero(7, 6), rng), ShapeMismatch);
    EXPECT_THROW(forward_head(state, MatrixT<float>(MatrixT<float>::Zero(2, 3))), ShapeMismatch);
}
