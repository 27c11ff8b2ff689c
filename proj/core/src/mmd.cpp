#include "ropdda/mmd.hpp"

#include "ropdda/error.hpp"
#include "ropdda/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace ropdda::mmd {

namespace {

using Index = Eigen::Index;

void check_sigma(double sigma) {
    if (!(sigma > 0)) throw NonpositiveSigma("sigma = " + std::to_string(sigma));
}

void check_sets(const Matrix &a, const Matrix &b) {
    if (a.rows() == 0 || b.rows() == 0) {
        throw EmptySet("feature sets have " + std::to_string(a.rows()) + " and " + std::to_string(b.rows()) + " rows");
    }
    if (a.cols() != b.cols()) throw ShapeMismatch("feature widths differ");
}

double sq_dist(const Matrix &x, Index i, const Matrix &y, Index j) {
    return (x.row(i) - y.row(j)).squaredNorm();
}

// Kernel matrix between the rows of x and y, computed from explicit
// differences so identical rows give exactly 1.
Matrix kernel_matrix(const Matrix &x, const Matrix &y, double sigma) {
    const double scale = -1.0 / (2.0 * sigma * sigma);
    Matrix k(x.rows(), y.rows());
    for (Index i = 0; i < x.rows(); ++i) {
        for (Index j = 0; j < y.rows(); ++j) k(i, j) = std::exp(scale * sq_dist(x, i, y, j));
    }
    return k;
}

Matrix kernel_matrix_sym(const Matrix &x, double sigma) {
    const double scale = -1.0 / (2.0 * sigma * sigma);
    Matrix k(x.rows(), x.rows());
    for (Index i = 0; i < x.rows(); ++i) {
        k(i, i) = 1.0;
        for (Index j = i + 1; j < x.rows(); ++j) k(i, j) = k(j, i) = std::exp(scale * sq_dist(x, i, x, j));
    }
    return k;
}

// Gradient wrt rows of x of  c * sum_{i,j} k(x_i, y_j):
//   c * sum_j -k_ij (x_i - y_j) / sigma^2
Matrix pair_gradient(const Matrix &x, const Matrix &y, const Matrix &k, double c, double sigma) {
    const double s2 = sigma * sigma;
    // sum_j k_ij (x_i - y_j) = x_i * rowsum_i(k) - (k y)_i
    Matrix g = x.array().colwise() * k.rowwise().sum().array();
    g.noalias() -= k * y;
    return g * (-c / s2);
}

// Sum of a cross-kernel matrix that does not depend on which set is the row
// set: the row-major and column-major accumulations are averaged, so swapping
// the arguments gives a bit-identical result.
double cross_sum(const Matrix &k) {
    double by_rows = 0, by_cols = 0;
    for (Index i = 0; i < k.rows(); ++i) {
        for (Index j = 0; j < k.cols(); ++j) by_rows += k(i, j);
    }
    for (Index j = 0; j < k.cols(); ++j) {
        for (Index i = 0; i < k.rows(); ++i) by_cols += k(i, j);
    }
    return 0.5 * (by_rows + by_cols);
}

} // namespace

double gaussian_kernel(const RowVector &x, const RowVector &y, double sigma) {
    check_sigma(sigma);
    if (x.size() != y.size()) throw ShapeMismatch("kernel arguments differ in length");
    return std::exp(-(x - y).squaredNorm() / (2.0 * sigma * sigma));
}

double mmd_squared_raw(const Matrix &a, const Matrix &b, double sigma) {
    check_sigma(sigma);
    check_sets(a, b);
    const double m = static_cast<double>(a.rows()), n = static_cast<double>(b.rows());
    const double kaa = kernel_matrix_sym(a, sigma).sum();
    const double kbb = kernel_matrix_sym(b, sigma).sum();
    const double kab = cross_sum(kernel_matrix(a, b, sigma));
    return kaa / (m * m) + kbb / (n * n) - 2.0 * kab / (m * n);
}

double mmd_squared(const Matrix &a, const Matrix &b, double sigma) {
    return std::max(0.0, mmd_squared_raw(a, b, sigma));
}

Gradient mmd_gradient(const Matrix &a, const Matrix &b, double sigma) {
    check_sigma(sigma);
    check_sets(a, b);
    const double m = static_cast<double>(a.rows()), n = static_cast<double>(b.rows());
    const Matrix kaa = kernel_matrix_sym(a, sigma);
    const Matrix kbb = kernel_matrix_sym(b, sigma);
    const Matrix kab = kernel_matrix(a, b, sigma);

    Gradient g;
    g.value = kaa.sum() / (m * m) + kbb.sum() / (n * n) - 2.0 * cross_sum(kab) / (m * n);
    // Each within-set pair (i, j) appears twice in the double sum, hence 2/m^2.
    g.d_a = pair_gradient(a, a, kaa, 2.0 / (m * m), sigma) - pair_gradient(a, b, kab, 2.0 / (m * n), sigma);
    const Matrix kba = kab.transpose();
    g.d_b = pair_gradient(b, b, kbb, 2.0 / (n * n), sigma) - pair_gradient(b, a, kba, 2.0 / (m * n), sigma);
    return g;
}

double median_heuristic(const Matrix &a, const Matrix &b, std::uint64_t seed) {
    const Index total = a.rows() + b.rows();
    if (total < 2) throw EmptySet("median heuristic needs at least two points");
    if (a.rows() > 0 && b.rows() > 0 && a.cols() != b.cols()) throw ShapeMismatch("feature widths differ");
    auto row = [&](Index i) -> Eigen::Ref<const RowVector> { return i < a.rows() ? a.row(i) : b.row(i - a.rows()); };

    const auto pairs = static_cast<std::uint64_t>(total) * static_cast<std::uint64_t>(total - 1) / 2;
    std::vector<double> d;
    if (pairs <= kMedianMaxPairs) {
        d.reserve(pairs);
        for (Index i = 0; i < total; ++i) {
            for (Index j = i + 1; j < total; ++j) d.push_back((row(i) - row(j)).squaredNorm());
        }
    } else {
        Rng rng(seed);
        d.reserve(kMedianMaxPairs);
        for (std::size_t s = 0; s < kMedianMaxPairs; ++s) {
            const auto i = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(total)));
            auto j = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(total - 1)));
            if (j >= i) ++j;
            d.push_back((row(i) - row(j)).squaredNorm());
        }
    }
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
    double median = d[mid];
    if (d.size() % 2 == 0) {
        const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
        median = 0.5 * (median + lower);
    }
    return std::max(kSigmaFloor, std::sqrt(median / 2.0));
}

double resolve_sigma(const KernelConfig &cfg, const Matrix &a, const Matrix &b, std::uint64_t seed) {
    if (cfg.policy == BandwidthPolicy::Fixed) {
        check_sigma(cfg.sigma);
        return cfg.sigma;
    }
    return median_heuristic(a, b, seed);
}

} // namespace ropdda::mmd
