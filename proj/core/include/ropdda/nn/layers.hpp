#pragma once

// Layer kernels with hand-derived backward passes. Sequence tensors of shape
// (N, T, C) are stored as (N * T) x C row-major matrices. Every kernel is
// instantiated for float and double.

#include "ropdda/rng.hpp"
#include "ropdda/sample.hpp"

#include <cmath>
#include <cstddef>
#include <vector>

namespace ropdda::nn {

template <class S> using MatrixT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S> using RowVectorT = Eigen::Matrix<S, 1, Eigen::Dynamic>;
template <class S> using VectorT = Eigen::Matrix<S, Eigen::Dynamic, 1>;

} // namespace ropdda::nn

namespace ropdda::nn::layers {

/// Nonzero entries of a mostly-zero input, e.g. a one-hot batch.
struct SparseInput {
    std::vector<Eigen::Index> row;
    std::vector<Eigen::Index> col;
    std::vector<double> value;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
};

SparseInput sparsify(const Matrix &input);

/// Unrolled convolution input: row r holds the kernel-wide window centred on
/// input row r (zeros outside the sequence), tap-major.
template <class S> MatrixT<S> im2col(const MatrixT<S> &input, std::size_t seq_len, std::size_t kernel);

/// 1-D convolution, stride 1, zero "same" padding of (kernel - 1) / 2 on each
/// side; kernel must be odd. weight is (kernel * c_in) x c_out with row
/// k * c_in + i holding tap k for input channel i.
template <class S>
MatrixT<S> conv1d_forward(const MatrixT<S> &input, std::size_t seq_len, const MatrixT<S> &weight,
                          const RowVectorT<S> &bias, std::size_t kernel);

template <class S>
MatrixT<S> conv1d_forward(const SparseInput &input, std::size_t seq_len, const MatrixT<S> &weight,
                          const RowVectorT<S> &bias, std::size_t kernel);

/// Accumulates into d_weight / d_bias; writes d_input when non-null.
template <class S>
void conv1d_backward(const MatrixT<S> &input, std::size_t seq_len, const MatrixT<S> &weight, std::size_t kernel,
                     const MatrixT<S> &d_out, MatrixT<S> &d_weight, RowVectorT<S> &d_bias, MatrixT<S> *d_input);

template <class S>
void conv1d_backward(const SparseInput &input, std::size_t seq_len, std::size_t kernel, const MatrixT<S> &d_out,
                     MatrixT<S> &d_weight, RowVectorT<S> &d_bias);

template <class S> struct BatchNormCache {
    MatrixT<S> xhat;
    RowVectorT<S> mean;
    RowVectorT<S> var; ///< biased batch variance
    RowVectorT<S> inv_std;
    /// false when the statistics were fixed (running) rather than computed
    /// from the batch; the backward pass then treats them as constants
    bool batch_stats = true;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Normalizes each column over all rows with batch statistics.
template <class S>
MatrixT<S> batchnorm_forward_train(const MatrixT<S> &x, const RowVectorT<S> &gamma, const RowVectorT<S> &beta,
                                   BatchNormCache<S> &cache);

template <class S>
MatrixT<S> batchnorm_forward_eval(const MatrixT<S> &x, const RowVectorT<S> &gamma, const RowVectorT<S> &beta,
                                  const RowVectorT<S> &running_mean, const RowVectorT<S> &running_var);

/// Train-time pass that normalizes with fixed (running) statistics and
/// records what the backward pass needs.
template <class S>
MatrixT<S> batchnorm_forward_fixed(const MatrixT<S> &x, const RowVectorT<S> &gamma, const RowVectorT<S> &beta,
                                   const RowVectorT<S> &mean, const RowVectorT<S> &var, BatchNormCache<S> &cache);

template <class S>
MatrixT<S> batchnorm_backward(const MatrixT<S> &d_out, const RowVectorT<S> &gamma, const BatchNormCache<S> &cache,
                              RowVectorT<S> &d_gamma, RowVectorT<S> &d_beta);

template <class S> MatrixT<S> dense_forward(const MatrixT<S> &x, const MatrixT<S> &weight, const RowVectorT<S> &bias);

template <class S>
void dense_backward(const MatrixT<S> &x, const MatrixT<S> &weight, const MatrixT<S> &d_out, MatrixT<S> &d_weight,
                    RowVectorT<S> &d_bias, MatrixT<S> *d_input);

/// Inverted dropout mask: each entry is 0 with probability `rate`, otherwise
/// 1 / (1 - rate). Draws the same engine values for every scalar type.
template <class S> MatrixT<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng &rng);

template <class S> S sigmoid(S z) {
    return z >= 0 ? S(1) / (S(1) + std::exp(-z)) : std::exp(z) / (S(1) + std::exp(z));
}

} // namespace ropdda::nn::layers
