#pragma once

// Test metrics, the validation-budget sweep and the transfer analyses
// (opcode LCS and feature-space distances between domains).

#include "ropdda/disasm.hpp"
#include "ropdda/nn/model.hpp"
#include "ropdda/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ropdda::evalkit {

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
    bool operator==(const ConfusionCounts &) const = default;
};

struct Metrics {
    double fpr = 0;
    double f1 = 0;
    double dr = 0;

    bool operator==(const Metrics &) const = default;
};

/// fp / (fp + tn). Throws UndefinedMetric.
double false_positive_rate(const ConfusionCounts &c);
/// tp / (tp + fn). Throws UndefinedMetric.
double detection_rate(const ConfusionCounts &c);
/// 2tp / (2tp + fp + fn). Throws UndefinedMetric.
double f1_score(const ConfusionCounts &c);

/// All three; throws UndefinedMetric naming the first zero denominator.
Metrics compute_metrics(const ConfusionCounts &c);

/// Tally of predictions against the samples' labels.
ConfusionCounts tally(std::span<const Label> predicted, std::span<const Sample> truth);

/// Thresholded eval-mode predictions over a test partition.
ConfusionCounts run_test(const nn::ModelState &state, std::span<const Sample> test);

struct SweepRun {
    std::size_t budget = 0;
    std::uint64_t seed = 0;
    ConfusionCounts counts;
    double fpr = 0;
    double f1 = 0;
};

struct SweepMean {
    std::size_t budget = 0;
    double fpr = 0;
    double f1 = 0;
};

struct SweepResult {
    std::vector<SweepRun> runs; ///< budget-major, then seed
    std::vector<SweepMean> means;
};

inline constexpr std::size_t kMinSweepSeeds = 3;

/// Balanced validation subset: budget / 2 benign and the rest malicious,
/// drawn deterministically from `pool` with `seed`. The full pool is returned
/// unchanged when budget equals its size. Throws ConfigError when the pool
/// cannot supply the budget.
std::vector<Sample> validation_subset(std::span<const Sample> pool, std::size_t budget, std::uint64_t seed);

/// For each seed, trains once (config.seed = seed) with data.validation as the
/// pool and keeps a separate best-accuracy snapshot per budget subset; each
/// snapshot is then scored on the test partition. Validation never influences
/// the parameter trajectory, so this equals one full run per (budget, seed).
/// Throws ConfigError on bad budgets or fewer than kMinSweepSeeds seeds.
SweepResult validation_budget_sweep(const trainer::TrainConfig &config, const trainer::TrainData &data,
                                    std::span<const Sample> test, std::span<const std::size_t> budgets,
                                    std::span<const std::uint64_t> seeds);

/// Length of the longest common subsequence.
std::size_t lcs_opcodes(std::span<const disasm::OpcodeClass> a, std::span<const disasm::OpcodeClass> b);

/// Opcode classes of the instructions in a sample. Throws disasm errors.
std::vector<disasm::OpcodeClass> opcode_sequence(const Sample &s);

inline constexpr std::uint64_t kMaxPairs = 1'000'000;

struct PairwiseAverage {
    double mean = 0;
    std::uint64_t pairs = 0; ///< pairs actually averaged
    bool subsampled = false; ///< pairs drawn uniformly with replacement
};

/// Mean LCS over the cross product, or over kMaxPairs pairs drawn with `seed`
/// when the product is larger. Throws EmptySet, UndecodableSample.
PairwiseAverage avg_pairwise_lcs(std::span<const Sample> a, std::span<const Sample> b, std::uint64_t seed = 0);

/// Mean Euclidean distance between rows of fa and rows of fb (same
/// subsampling rule). Throws EmptySet, ShapeMismatch.
PairwiseAverage avg_pairwise_distance(const Matrix &fa, const Matrix &fb, std::uint64_t seed = 0);

/// Same on the eval-mode extractor output of the two sample sets.
PairwiseAverage avg_pairwise_embedding_distance(const nn::ModelState &state, std::span<const Sample> a,
                                                std::span<const Sample> b, std::uint64_t seed = 0);

/// Eval-mode features of many samples, computed in chunks.
Matrix embed(const nn::ModelState &state, std::span<const Sample> samples, std::size_t chunk = 256);

struct TransferReport {
    std::string source;
    std::string target;
    ConfusionCounts baseline; ///< column A
    ConfusionCounts adapted;  ///< column B
    Metrics a;
    Metrics b;
    /// (fp_B - fp_A) / fp_A; empty when fp_A = 0.
    std::optional<double> fp_change;
    /// (tp_B - tp_A) / tp_A; empty when tp_A = 0.
    std::optional<double> detected_change;
};

TransferReport make_transfer_report(std::string source, std::string target, const ConfusionCounts &baseline,
                                    const ConfusionCounts &adapted);

/// Tab-separated tables with a header row.
void write_transfer_report(const std::filesystem::path &path, std::span<const TransferReport> rows);
void write_sweep(const std::filesystem::path &path, const SweepResult &sweep);

/// s_0 = x_0, s_t = alpha * s_{t-1} + (1 - alpha) * x_t.
std::vector<double> ema(std::span<const double> values, double alpha);

} // namespace ropdda::evalkit
