#include "ropdda/nn/layers.hpp"

#include "ropdda/error.hpp"

#include <string>

namespace ropdda::nn::layers {

namespace {

using Index = Eigen::Index;

template <class S>
void check_conv(Index rows, Index cin, std::size_t seq_len, const MatrixT<S> &weight, std::size_t kernel) {
    if (kernel % 2 == 0) throw ShapeMismatch("convolution kernel must be odd");
    if (seq_len == 0 || rows % static_cast<Index>(seq_len) != 0) {
        throw ShapeMismatch("input rows " + std::to_string(rows) + " not a multiple of sequence length " +
                            std::to_string(seq_len));
    }
    if (weight.rows() != static_cast<Index>(kernel) * cin) {
        throw ShapeMismatch("conv weight has " + std::to_string(weight.rows()) + " rows, expected " +
                            std::to_string(static_cast<Index>(kernel) * cin));
    }
}

// For tap k the input row feeding output row t is t + shift; valid outputs are
// [first, first + len).
struct Tap {
    Index shift;
    Index first;
    Index len;
};

Tap tap(std::size_t k, std::size_t kernel, std::size_t seq_len) {
    const Index shift = static_cast<Index>(k) - static_cast<Index>((kernel - 1) / 2);
    const Index T = static_cast<Index>(seq_len);
    const Index first = std::max<Index>(0, -shift);
    const Index last = std::min<Index>(T, T - shift);
    return {shift, first, std::max<Index>(0, last - first)};
}

} // namespace

SparseInput sparsify(const Matrix &input) {
    SparseInput s;
    s.rows = input.rows();
    s.cols = input.cols();
    for (Index r = 0; r < input.rows(); ++r) {
        const double *row = input.data() + r * input.cols();
        for (Index c = 0; c < input.cols(); ++c) {
            if (row[c] != 0.0) {
                s.row.push_back(r);
                s.col.push_back(c);
                s.value.push_back(row[c]);
            }
        }
    }
    return s;
}

template <class S> MatrixT<S> im2col(const MatrixT<S> &input, std::size_t seq_len, std::size_t kernel) {
    const Index cin = input.cols();
    const Index T = static_cast<Index>(seq_len);
    const Index batch = input.rows() / T;
    MatrixT<S> cols = MatrixT<S>::Zero(input.rows(), static_cast<Index>(kernel) * cin);
    for (std::size_t k = 0; k < kernel; ++k) {
        const Tap tp = tap(k, kernel, seq_len);
        if (tp.len == 0) continue;
        for (Index n = 0; n < batch; ++n) {
            cols.block(n * T + tp.first, static_cast<Index>(k) * cin, tp.len, cin) =
                input.middleRows(n * T + tp.first + tp.shift, tp.len);
        }
    }
    return cols;
}

template <class S>
MatrixT<S> conv1d_forward(const MatrixT<S> &input, std::size_t seq_len, const MatrixT<S> &weight,
                          const RowVectorT<S> &bias, std::size_t kernel) {
    check_conv(input.rows(), input.cols(), seq_len, weight, kernel);
    MatrixT<S> out(input.rows(), weight.cols());
    out.noalias() = im2col(input, seq_len, kernel) * weight;
    out.rowwise() += bias;
    return out;
}

template <class S>
MatrixT<S> conv1d_forward(const SparseInput &input, std::size_t seq_len, const MatrixT<S> &weight,
                          const RowVectorT<S> &bias, std::size_t kernel) {
    check_conv(input.rows, input.cols, seq_len, weight, kernel);
    const Index T = static_cast<Index>(seq_len);
    MatrixT<S> out(input.rows, weight.cols());
    out.rowwise() = bias;
    for (std::size_t e = 0; e < input.value.size(); ++e) {
        const Index r = input.row[e];
        const Index t = r % T;
        const Index base = r - t;
        const S v = static_cast<S>(input.value[e]);
        for (std::size_t k = 0; k < kernel; ++k) {
            const Index shift = static_cast<Index>(k) - static_cast<Index>((kernel - 1) / 2);
            const Index t_out = t - shift;
            if (t_out < 0 || t_out >= T) continue;
            out.row(base + t_out).noalias() += v * weight.row(static_cast<Index>(k) * input.cols + input.col[e]);
        }
    }
    return out;
}

template <class S>
void conv1d_backward(const MatrixT<S> &input, std::size_t seq_len, const MatrixT<S> &weight, std::size_t kernel,
                     const MatrixT<S> &d_out, MatrixT<S> &d_weight, RowVectorT<S> &d_bias, MatrixT<S> *d_input) {
    const Index cin = input.cols();
    check_conv(input.rows(), cin, seq_len, weight, kernel);
    d_bias += d_out.colwise().sum();
    d_weight.noalias() += im2col(input, seq_len, kernel).transpose() * d_out;
    if (!d_input) return;
    MatrixT<S> d_cols(d_out.rows(), weight.rows());
    d_cols.noalias() = d_out * weight.transpose();
    // col2im: scatter each tap block back to the input rows it was read from
    const Index T = static_cast<Index>(seq_len);
    const Index batch = input.rows() / T;
    d_input->setZero(input.rows(), cin);
    for (std::size_t k = 0; k < kernel; ++k) {
        const Tap tp = tap(k, kernel, seq_len);
        if (tp.len == 0) continue;
        for (Index n = 0; n < batch; ++n) {
            d_input->middleRows(n * T + tp.first + tp.shift, tp.len) +=
                d_cols.block(n * T + tp.first, static_cast<Index>(k) * cin, tp.len, cin);
        }
    }
}

template <class S>
void conv1d_backward(const SparseInput &input, std::size_t seq_len, std::size_t kernel, const MatrixT<S> &d_out,
                     MatrixT<S> &d_weight, RowVectorT<S> &d_bias) {
    const Index T = static_cast<Index>(seq_len);
    d_bias += d_out.colwise().sum();
    for (std::size_t e = 0; e < input.value.size(); ++e) {
        const Index r = input.row[e];
        const Index t = r % T;
        const Index base = r - t;
        const S v = static_cast<S>(input.value[e]);
        for (std::size_t k = 0; k < kernel; ++k) {
            const Index shift = static_cast<Index>(k) - static_cast<Index>((kernel - 1) / 2);
            const Index t_out = t - shift;
            if (t_out < 0 || t_out >= T) continue;
            d_weight.row(static_cast<Index>(k) * input.cols + input.col[e]).noalias() += v * d_out.row(base + t_out);
        }
    }
}

template <class S>
MatrixT<S> batchnorm_forward_train(const MatrixT<S> &x, const RowVectorT<S> &gamma, const RowVectorT<S> &beta,
                                   BatchNormCache<S> &cache) {
    if (x.cols() != gamma.size() || x.cols() != beta.size()) throw ShapeMismatch("batchnorm width");
    if (x.rows() == 0) throw ShapeMismatch("batchnorm over empty batch");
    const S inv_rows = S(1) / static_cast<S>(x.rows());
    cache.mean = x.colwise().sum() * inv_rows;
    cache.xhat = x.rowwise() - cache.mean;
    cache.var = cache.xhat.cwiseAbs2().colwise().sum() * inv_rows;
    cache.inv_std = (cache.var.array() + static_cast<S>(kBatchNormEps)).rsqrt().matrix();
    cache.xhat.array().rowwise() *= cache.inv_std.array();
    MatrixT<S> y = cache.xhat;
    y.array().rowwise() *= gamma.array();
    y.rowwise() += beta;
    return y;
}

template <class S>
MatrixT<S> batchnorm_forward_eval(const MatrixT<S> &x, const RowVectorT<S> &gamma, const RowVectorT<S> &beta,
                                  const RowVectorT<S> &running_mean, const RowVectorT<S> &running_var) {
    if (x.cols() != gamma.size() || x.cols() != running_mean.size()) throw ShapeMismatch("batchnorm width");
    const RowVectorT<S> scale =
        (gamma.array() * (running_var.array() + static_cast<S>(kBatchNormEps)).rsqrt()).matrix();
    const RowVectorT<S> shift = beta.array() - running_mean.array() * scale.array();
    MatrixT<S> y = x;
    y.array().rowwise() *= scale.array();
    y.rowwise() += shift;
    return y;
}

template <class S>
MatrixT<S> batchnorm_forward_fixed(const MatrixT<S> &x, const RowVectorT<S> &gamma, const RowVectorT<S> &beta,
                                   const RowVectorT<S> &mean, const RowVectorT<S> &var, BatchNormCache<S> &cache) {
    if (x.cols() != gamma.size() || x.cols() != mean.size()) throw ShapeMismatch("batchnorm width");
    cache.batch_stats = false;
    cache.mean = mean;
    cache.var = var;
    cache.inv_std = (var.array() + static_cast<S>(kBatchNormEps)).rsqrt().matrix();
    cache.xhat = x.rowwise() - mean;
    cache.xhat.array().rowwise() *= cache.inv_std.array();
    MatrixT<S> y = cache.xhat;
    y.array().rowwise() *= gamma.array();
    y.rowwise() += beta;
    return y;
}

template <class S>
MatrixT<S> batchnorm_backward(const MatrixT<S> &d_out, const RowVectorT<S> &gamma, const BatchNormCache<S> &cache,
                              RowVectorT<S> &d_gamma, RowVectorT<S> &d_beta) {
    const S rows = static_cast<S>(d_out.rows());
    const RowVectorT<S> sum_dy = d_out.colwise().sum();
    const RowVectorT<S> sum_dy_xhat = d_out.cwiseProduct(cache.xhat).colwise().sum();
    d_gamma += sum_dy_xhat;
    d_beta += sum_dy;
    if (!cache.batch_stats) {
        MatrixT<S> dx = d_out;
        dx.array().rowwise() *= (gamma.array() * cache.inv_std.array());
        return dx;
    }
    // dx = gamma * inv_std / R * (R * dy - sum(dy) - xhat * sum(dy * xhat))
    MatrixT<S> dx = d_out * rows;
    dx.rowwise() -= sum_dy;
    dx -= (cache.xhat.array().rowwise() * sum_dy_xhat.array()).matrix();
    const RowVectorT<S> scale = (gamma.array() * cache.inv_std.array() / rows).matrix();
    dx.array().rowwise() *= scale.array();
    return dx;
}

template <class S> MatrixT<S> dense_forward(const MatrixT<S> &x, const MatrixT<S> &weight, const RowVectorT<S> &bias) {
    if (x.cols() != weight.rows()) {
        throw ShapeMismatch("dense input width " + std::to_string(x.cols()) + " vs weight rows " +
                            std::to_string(weight.rows()));
    }
    MatrixT<S> y(x.rows(), weight.cols());
    y.noalias() = x * weight;
    y.rowwise() += bias;
    return y;
}

template <class S>
void dense_backward(const MatrixT<S> &x, const MatrixT<S> &weight, const MatrixT<S> &d_out, MatrixT<S> &d_weight,
                    RowVectorT<S> &d_bias, MatrixT<S> *d_input) {
    d_weight.noalias() += x.transpose() * d_out;
    d_bias += d_out.colwise().sum();
    if (d_input) {
        d_input->resize(x.rows(), x.cols());
        d_input->noalias() = d_out * weight.transpose();
    }
}

template <class S> MatrixT<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng &rng) {
    MatrixT<S> mask(rows, cols);
    const S keep = static_cast<S>(1.0 / (1.0 - rate));
    S *m = mask.data();
    if (rate == 0.5) {
        // one engine draw supplies 64 fair coin flips
        for (Index i = 0; i < mask.size(); i += 64) {
            std::uint64_t bits = rng();
            const Index end = std::min<Index>(mask.size(), i + 64);
            for (Index j = i; j < end; ++j, bits >>= 1) m[j] = keep * static_cast<S>(bits & 1);
        }
        return mask;
    }
    std::bernoulli_distribution drop(rate);
    for (Index i = 0; i < mask.size(); ++i) m[i] = drop(rng) ? S(0) : keep;
    return mask;
}

#define ROPDDA_INSTANTIATE_LAYERS(S)                                                                                  \
    template MatrixT<S> im2col<S>(const MatrixT<S> &, std::size_t, std::size_t);                                       \
    template MatrixT<S> conv1d_forward<S>(const MatrixT<S> &, std::size_t, const MatrixT<S> &, const RowVectorT<S> &, \
                                          std::size_t);                                                               \
    template MatrixT<S> conv1d_forward<S>(const SparseInput &, std::size_t, const MatrixT<S> &,                       \
                                          const RowVectorT<S> &, std::size_t);                                        \
    template void conv1d_backward<S>(const MatrixT<S> &, std::size_t, const MatrixT<S> &, std::size_t,                \
                                     const MatrixT<S> &, MatrixT<S> &, RowVectorT<S> &, MatrixT<S> *);                \
    template void conv1d_backward<S>(const SparseInput &, std::size_t, std::size_t, const MatrixT<S> &, MatrixT<S> &, \
                                     RowVectorT<S> &);                                                                \
    template MatrixT<S> batchnorm_forward_train<S>(const MatrixT<S> &, const RowVectorT<S> &, const RowVectorT<S> &,  \
                                                   BatchNormCache<S> &);                                              \
    template MatrixT<S> batchnorm_forward_eval<S>(const MatrixT<S> &, const RowVectorT<S> &, const RowVectorT<S> &,   \
                                                  const RowVectorT<S> &, const RowVectorT<S> &);                      \
    template MatrixT<S> batchnorm_forward_fixed<S>(const MatrixT<S> &, const RowVectorT<S> &, const RowVectorT<S> &,  \
                                                   const RowVectorT<S> &, const RowVectorT<S> &, BatchNormCache<S> &); \
    template MatrixT<S> batchnorm_backward<S>(const MatrixT<S> &, const RowVectorT<S> &, const BatchNormCache<S> &,   \
                                              RowVectorT<S> &, RowVectorT<S> &);                                      \
    template MatrixT<S> dense_forward<S>(const MatrixT<S> &, const MatrixT<S> &, const RowVectorT<S> &);              \
    template void dense_backward<S>(const MatrixT<S> &, const MatrixT<S> &, const MatrixT<S> &, MatrixT<S> &,         \
                                    RowVectorT<S> &, MatrixT<S> *);                                                   \
    template MatrixT<S> dropout_mask<S>(Eigen::Index, Eigen::Index, double, Rng &);

ROPDDA_INSTANTIATE_LAYERS(float)
ROPDDA_INSTANTIATE_LAYERS(double)

#undef ROPDDA_INSTANTIATE_LAYERS

} // namespace ropdda::nn::layers
