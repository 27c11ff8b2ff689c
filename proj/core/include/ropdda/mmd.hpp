#pragma once

// Squared maximum mean discrepancy between two feature sets under a Gaussian
// kernel, using the plug-in (V-statistic) estimate
//
//   MMD^2 = 1/m^2 sum k(a_i, a_j) + 1/n^2 sum k(b_i, b_j) - 2/(mn) sum k(a_i, b_j)
//
// i.e. the squared RKHS distance between the empirical kernel mean embeddings.

#include "ropdda/sample.hpp"

#include <cstdint>

namespace ropdda::mmd {

enum class BandwidthPolicy : std::uint8_t { Fixed, MedianHeuristic };

struct KernelConfig {
    double sigma = 1.0;
    BandwidthPolicy policy = BandwidthPolicy::MedianHeuristic;
    bool operator==(const KernelConfig &) const = default;
};

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr std::size_t kMedianMaxPairs = 1024;

/// exp(-|x - y|^2 / (2 sigma^2)). Throws NonpositiveSigma.
double gaussian_kernel(const RowVector &x, const RowVector &y, double sigma);

/// Unclamped estimate; may dip a hair below zero from rounding.
/// Throws EmptySet or NonpositiveSigma.
double mmd_squared_raw(const Matrix &a, const Matrix &b, double sigma);

/// max(0, mmd_squared_raw).
double mmd_squared(const Matrix &a, const Matrix &b, double sigma);

struct Gradient {
    double value = 0; ///< unclamped MMD^2
    Matrix d_a;       ///< dMMD^2 / dA, m x d
    Matrix d_b;       ///< dMMD^2 / dB, n x d
};

/// Analytic gradient with sigma held constant.
Gradient mmd_gradient(const Matrix &a, const Matrix &b, double sigma);

/// sqrt(median pairwise squared distance over the pooled rows / 2), floored at
/// kSigmaFloor. All pairs are used when there are at most kMedianMaxPairs of
/// them, otherwise kMedianMaxPairs pairs drawn with `seed`.
double median_heuristic(const Matrix &a, const Matrix &b, std::uint64_t seed = 0);

/// Bandwidth for one estimate: cfg.sigma when fixed, else the median heuristic.
double resolve_sigma(const KernelConfig &cfg, const Matrix &a, const Matrix &b, std::uint64_t seed = 0);

} // namespace ropdda::mmd
