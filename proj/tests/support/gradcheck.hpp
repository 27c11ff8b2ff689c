#pragma once

// Central finite-difference checks of the hand-written backward passes, in
// double precision on small shapes. Each check returns the norm-wise relative
// error |analytic - numeric| / max(|analytic| + |numeric|, tiny).

#include "ropdda/mmd.hpp"
#include "ropdda/nn/model.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace ropdda::gradcheck {

using M = nn::MatrixT<double>;
using RV = nn::RowVectorT<double>;
using V = nn::VectorT<double>;

struct Result {
    std::string name;
    double rel_error = 0;
};

inline constexpr double kStep = 1e-6;

/// Numeric gradient of loss() with respect to every value behind `slots`.
inline std::vector<double> numeric(const std::vector<double *> &slots, const std::function<double()> &loss,
                                   double h = kStep) {
    std::vector<double> out;
    out.reserve(slots.size());
    for (double *p : slots) {
        const double saved = *p;
        *p = saved + h;
        const double up = loss();
        *p = saved - h;
        const double down = loss();
        *p = saved;
        out.push_back((up - down) / (2 * h));
    }
    return out;
}

inline double relative_error(const std::vector<double> &a, const std::vector<double> &n) {
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - n[i]) * (a[i] - n[i]);
        na += a[i] * a[i];
        nn += n[i] * n[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), 1e-300);
}

template <class D> void slots_of(D &m, std::vector<double *> &out) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
}

template <class D> void values_of(const D &m, std::vector<double> &out) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data()[i]);
}

inline M random_matrix(Eigen::Index r, Eigen::Index c, Rng &rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    M m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

inline RV random_row(Eigen::Index c, Rng &rng, double scale = 1.0) { return random_matrix(1, c, rng, scale); }

inline double weighted_sum(const M &out, const M &r) { return out.cwiseProduct(r).sum(); }

inline Result conv1d(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t seq = 6, kernel = 5;
    M in = random_matrix(4 * seq, 3, rng);
    M w = random_matrix(kernel * 3, 4, rng, 0.5);
    RV b = random_row(4, rng);
    const M r = random_matrix(4 * seq, 4, rng);
    auto loss = [&] { return weighted_sum(nn::layers::conv1d_forward(in, seq, w, b, kernel), r); };

    M dw = M::Zero(w.rows(), w.cols());
    RV db = RV::Zero(b.size());
    M din;
    nn::layers::conv1d_backward(in, seq, w, kernel, r, dw, db, &din);
    std::vector<double *> slots;
    std::vector<double> analytic;
    slots_of(in, slots), slots_of(w, slots), slots_of(b, slots);
    values_of(din, analytic), values_of(dw, analytic), values_of(db, analytic);
    return {"conv1d", relative_error(analytic, numeric(slots, loss))};
}

/// fixed = true normalizes with given (running) statistics instead of the
/// batch's own.
inline Result batchnorm(std::uint64_t seed, bool fixed) {
    Rng rng(seed);
    M x = random_matrix(4 * 3, 5, rng, 2.0);
    RV gamma = random_row(5, rng);
    RV beta = random_row(5, rng);
    const RV mean = random_row(5, rng);
    const RV var = random_row(5, rng).cwiseAbs().array() + 0.5;
    const M r = random_matrix(x.rows(), x.cols(), rng);
    auto forward = [&](nn::layers::BatchNormCache<double> &cache) {
        return fixed ? nn::layers::batchnorm_forward_fixed(x, gamma, beta, mean, var, cache)
                     : nn::layers::batchnorm_forward_train(x, gamma, beta, cache);
    };
    auto loss = [&] {
        nn::layers::BatchNormCache<double> c;
        return weighted_sum(forward(c), r);
    };
    nn::layers::BatchNormCache<double> cache;
    forward(cache);
    RV dg = RV::Zero(5), db = RV::Zero(5);
    const M dx = nn::layers::batchnorm_backward(r, gamma, cache, dg, db);
    std::vector<double *> slots;
    std::vector<double> analytic;
    slots_of(x, slots), slots_of(gamma, slots), slots_of(beta, slots);
    values_of(dx, analytic), values_of(dg, analytic), values_of(db, analytic);
    return {fixed ? "batchnorm (fixed statistics)" : "batchnorm", relative_error(analytic, numeric(slots, loss))};
}

inline Result dense(std::uint64_t seed) {
    Rng rng(seed);
    M x = random_matrix(4, 6, rng);
    M w = random_matrix(6, 3, rng);
    RV b = random_row(3, rng);
    const M r = random_matrix(4, 3, rng);
    auto loss = [&] { return weighted_sum(nn::layers::dense_forward(x, w, b), r); };
    M dw = M::Zero(6, 3);
    RV db = RV::Zero(3);
    M dx;
    nn::layers::dense_backward(x, w, r, dw, db, &dx);
    std::vector<double *> slots;
    std::vector<double> analytic;
    slots_of(x, slots), slots_of(w, slots), slots_of(b, slots);
    values_of(dx, analytic), values_of(dw, analytic), values_of(db, analytic);
    return {"dense", relative_error(analytic, numeric(slots, loss))};
}

/// Dropout with a frozen mask is an elementwise product: d_in = d_out * mask.
inline Result dropout_frozen(std::uint64_t seed) {
    Rng rng(seed);
    M x = random_matrix(4 * 3, 6, rng);
    const M mask = nn::layers::dropout_mask<double>(x.rows(), x.cols(), 0.5, rng);
    const M r = random_matrix(x.rows(), x.cols(), rng);
    auto loss = [&] { return weighted_sum(x.cwiseProduct(mask), r); };
    std::vector<double *> slots;
    std::vector<double> analytic;
    slots_of(x, slots);
    values_of(M(r.cwiseProduct(mask)), analytic);
    return {"dropout (frozen mask)", relative_error(analytic, numeric(slots, loss))};
}

inline Result sigmoid_bce(std::uint64_t seed) {
    Rng rng(seed);
    V z = random_matrix(4, 1, rng, 2.0);
    const std::vector<Label> y = {Label::Malicious, Label::Benign, Label::Malicious, Label::Benign};
    auto prob = [&] {
        V p(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) p(i) = nn::layers::sigmoid(z(i));
        return p;
    };
    auto loss = [&] { return nn::bce_loss<double>(prob(), y).loss; };
    const V p = prob();
    const auto r = nn::bce_loss<double>(p, y);
    std::vector<double> analytic;
    for (Eigen::Index i = 0; i < z.size(); ++i) analytic.push_back(r.d_prob(i) * p(i) * (1 - p(i)));
    std::vector<double *> slots;
    slots_of(z, slots);
    return {"sigmoid + BCE", relative_error(analytic, numeric(slots, loss))};
}

inline nn::Architecture small_arch() {
    nn::Architecture a;
    a.seq_len = 8;
    a.alphabet = 6;
    a.channels = 4;
    a.hidden = 5;
    return a;
}

/// Random one-hot rows with some all-zero padding rows, 4 samples.
inline Matrix small_input(const nn::Architecture &arch, Rng &rng) {
    Matrix in = Matrix::Zero(static_cast<Eigen::Index>(4 * arch.seq_len), static_cast<Eigen::Index>(arch.alphabet));
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
        if (r % static_cast<Eigen::Index>(arch.seq_len) >= 6 && r % 2 == 0) continue;
        in(r, static_cast<Eigen::Index>(uniform_index(rng, arch.alphabet))) = 1.0;
    }
    return in;
}

/// Whole network in train mode with frozen dropout masks. through_head
/// differentiates sigmoid + BCE of the head output; otherwise a random
/// weighted sum of the features (the MMD attachment point).
inline Result network(std::uint64_t seed, bool through_head, nn::NormStats stats = nn::NormStats::Batch) {
    Rng rng(seed);
    const auto arch = small_arch();
    auto state = nn::init_model<double>(arch, seed);
    state.mode = nn::Mode::Train;
    if (stats == nn::NormStats::Running) {
        for (auto &rs : state.running) {
            rs.mean = random_row(rs.mean.size(), rng, 0.3);
            rs.var = random_row(rs.var.size(), rng).cwiseAbs().array() + 0.5;
        }
    }
    const Matrix input = small_input(arch, rng);
    const std::vector<Label> y = {Label::Malicious, Label::Benign, Label::Benign, Label::Malicious};
    const M r = random_matrix(4, static_cast<Eigen::Index>(arch.hidden), rng);

    Rng mask_rng(seed + 1);
    auto first = nn::forward_features(state, input, mask_rng, static_cast<const nn::DropoutMasksT<double> *>(nullptr),
                                      stats);
    const auto masks = first.trace->masks;
    const auto frozen = state.running;
    auto loss = [&] {
        Rng unused(0);
        auto fr = nn::forward_features(state, input, unused, &masks, stats);
        state.running = frozen;
        if (!through_head) return weighted_sum(fr.features, r);
        return nn::bce_loss<double>(nn::forward_head(state, fr.features), y).loss;
    };
    Rng unused(0);
    auto fr = nn::forward_features(state, input, unused, &masks, stats);
    state.running = frozen;
    nn::UpstreamT<double> up;
    if (through_head) {
        up.d_prob = nn::bce_loss<double>(nn::forward_head(state, fr.features), y).d_prob;
    } else {
        up.d_features = r;
    }
    const auto grads = nn::backward(state, *fr.trace, up);

    std::vector<double *> slots;
    std::vector<double> analytic;
    auto params = state.params.tensors();
    const auto g = grads.tensors();
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (auto &v : params[i].values) slots.push_back(&v);
        for (double v : g[i].values) analytic.push_back(v);
    }
    std::string name = through_head ? "network (BCE through head)" : "network (feature upstream)";
    if (stats == nn::NormStats::Running) name += ", running statistics";
    return {name, relative_error(analytic, numeric(slots, loss))};
}

inline Result mmd(std::uint64_t seed) {
    Rng rng(seed);
    Matrix a = random_matrix(5, 4, rng);
    Matrix b = random_matrix(7, 4, rng);
    b.array() += 0.7;
    const double sigma = 1.3;
    auto loss = [&] { return mmd::mmd_squared_raw(a, b, sigma); };
    const auto g = mmd::mmd_gradient(a, b, sigma);
    std::vector<double *> slots;
    std::vector<double> analytic;
    slots_of(a, slots), slots_of(b, slots);
    values_of(g.d_a, analytic), values_of(g.d_b, analytic);
    return {"MMD^2", relative_error(analytic, numeric(slots, loss))};
}

/// Every layer check plus the end-to-end ones.
inline std::vector<Result> layer_suite(std::uint64_t seed) {
    return {conv1d(seed),
            batchnorm(seed, false),
            batchnorm(seed, true),
            dense(seed),
            dropout_frozen(seed),
            sigmoid_bce(seed),
            network(seed, true),
            network(seed, false),
            network(seed, true, nn::NormStats::Running)};
}

} // namespace ropdda::gradcheck
